#include "itcfn/verify/suite.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "itcfn/checkpoint.hpp"
#include "itcfn/fusion.hpp"
#include "itcfn/grad_check.hpp"
#include "itcfn/losses.hpp"
#include "itcfn/metrics.hpp"
#include "itcfn/mmg.hpp"
#include "itcfn/ops.hpp"
#include "itcfn/rng.hpp"
#include "itcfn/synthdata.hpp"
#include "itcfn/tcaf.hpp"
#include "itcfn/verify/oracles.hpp"

namespace itcfn::verify {

Mutation mutation_from_name(const std::string& name) {
    if (name.empty()) return Mutation::None;
    if (name == "focal-sign") return Mutation::FocalSign;
    throw std::invalid_argument("unknown mutation '" + name + "'");
}

namespace {

constexpr double kEps = 1e-3;
constexpr double kPrimitiveTol = 1e-3;
constexpr double kCompositeTol = 1e-2;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

class Suite {
public:
    explicit Suite(Mutation m) : mutation_(m) {}

    std::vector<Check> run() {
        gradients();
        oracles();
        identities();
        formats();
        return std::move(checks_);
    }

private:
    Mutation mutation_;
    std::vector<Check> checks_;

    void add(const std::string& group, const std::string& name, const std::function<std::string(bool&)>& body) {
        Check c{name, group, false, ""};
        try {
            bool ok = true;
            c.detail = body(ok);
            c.passed = ok;
        } catch (const std::exception& e) {
            c.passed = false;
            c.detail = std::string("threw: ") + e.what();
        }
        checks_.push_back(std::move(c));
    }

    Tensor focal(const Tensor& probs, const std::vector<int>& y, double gamma, std::array<double, 2> alpha) const {
        const Tensor l = loss::focal_loss(probs, y, gamma, alpha);
        return mutation_ == Mutation::FocalSign ? ops::neg(l) : l;
    }

    // Worst relative error over cases; at least half the probes must be off-kink.
    static std::string grad_verdict(const std::vector<GradCheckResult>& rs, double tol, bool& ok) {
        double worst = 0.0;
        std::size_t probed = 0, straddled = 0;
        for (const auto& r : rs) {
            worst = std::max(worst, r.max_rel_error);
            probed += r.probed;
            straddled += r.straddled;
            if (r.straddled * 2 >= r.probed) ok = false;
        }
        ok = ok && worst < tol;
        return "max rel err " + num(worst) + " (tol " + num(tol) + ", " + std::to_string(probed) + " probes, " +
               std::to_string(straddled) + " on kinks)";
    }

    static Tensor signed_away(const Shape& s, Rng& rng) {
        std::vector<double> d(shape_numel(s));
        for (auto& v : d) {
            const double m = rng.uniform(0.1, 1.5);
            v = rng.uniform() < 0.5 ? -m : m;
        }
        return Tensor::from_data(s, std::move(d));
    }

    using Fn = std::function<Tensor(const Tensor&)>;

    void unary_family(const std::string& name, std::uint64_t seed,
                      const std::vector<std::function<Tensor(const Tensor&, const Tensor&, const Tensor&)>>& fns) {
        add("gradient", name, [&](bool& ok) {
            Rng rng(seed);
            std::vector<GradCheckResult> rs;
            for (int trial = 0; trial < 3; ++trial) {
                const Shape s = {2 + rng.below(2), 2 + rng.below(2), 3 + rng.below(2)};
                const Tensor x = signed_away(s, rng), other = signed_away(s, rng), w = normal_tensor(s, 1.0, rng);
                for (const auto& f : fns)
                    rs.push_back(grad_check([&](const Tensor& t) { return f(t, other, w); }, x, kEps));
            }
            return grad_verdict(rs, kPrimitiveTol, ok);
        });
    }

    void gradients() {
        PrecisionScope wide(Precision::Float64);
        auto head = [](const Tensor& y, const Tensor& w) { return ops::sum(ops::mul(y, w)); };
        using F3 = std::function<Tensor(const Tensor&, const Tensor&, const Tensor&)>;
        unary_family("grad: add/sub/mul/div (broadcast)", 11,
                     {F3([=](auto& t, auto& o, auto& w) { return head(ops::add(t, o), w); }),
                      F3([=](auto& t, auto& o, auto& w) { return head(ops::sub(o, t), w); }),
                      F3([=](auto& t, auto& o, auto& w) { return head(ops::mul(t, o), w); }),
                      F3([=](auto& t, auto& o, auto& w) { return head(ops::div(o, t), w); }),
                      F3([=](auto& t, auto&, auto& w) {
                          return head(ops::add(t, ops::slice(ops::slice(t, 0, 0, 1), 1, 0, 1)), w);
                      }),
                      F3([=](auto& t, auto&, auto& w) { return head(ops::mul_scalar(ops::add_scalar(t, 0.3), -2.0), w); })});
        unary_family("grad: relu/leaky_relu/abs", 12,
                     {F3([=](auto& t, auto&, auto& w) { return head(ops::relu(t), w); }),
                      F3([=](auto& t, auto&, auto& w) { return head(ops::leaky_relu(t, 0.2), w); }),
                      F3([=](auto& t, auto&, auto& w) { return head(ops::abs(t), w); })});
        unary_family("grad: tanh/sigmoid/exp/log", 13,
                     {F3([=](auto& t, auto&, auto& w) { return head(ops::tanh(t), w); }),
                      F3([=](auto& t, auto&, auto& w) { return head(ops::sigmoid(t), w); }),
                      F3([=](auto& t, auto&, auto& w) { return head(ops::exp(t), w); }),
                      F3([=](auto& t, auto&, auto& w) { return head(ops::log(ops::abs(t)), w); })});
        unary_family("grad: square/sqrt/pow", 14,
                     {F3([=](auto& t, auto&, auto& w) { return head(ops::square(t), w); }),
                      F3([=](auto& t, auto&, auto& w) { return head(ops::sqrt(ops::abs(t)), w); }),
                      F3([=](auto& t, auto&, auto& w) { return head(ops::pow(ops::abs(t), 1.7), w); })});
        unary_family("grad: sum/mean reductions", 15,
                     {F3([](auto& t, auto&, auto&) { return ops::sum(ops::square(ops::sum(t, 1))); }),
                      F3([](auto& t, auto&, auto&) { return ops::sum(ops::square(ops::mean(t, 2, true))); }),
                      F3([](auto& t, auto&, auto&) { return ops::square(ops::mean(t)); })});
        unary_family("grad: softmax/layer_norm", 16,
                     {F3([=](auto& t, auto&, auto& w) { return head(ops::softmax(t, 2), w); }),
                      F3([=](auto& t, auto&, auto& w) { return head(ops::softmax(t, 0), w); }),
                      F3([=](auto& t, auto&, auto& w) { return head(ops::layer_norm(t), w); })});
        unary_family("grad: reshape/transpose/concat/slice", 17,
                     {F3([=](auto& t, auto&, auto& w) { return head(ops::reshape(ops::square(t), w.shape()), w); }),
                      F3([](auto& t, auto&, auto& w) {
                          return ops::sum(ops::mul(ops::transpose(t, 0, 2), ops::transpose(w, 0, 2)));
                      }),
                      F3([](auto& t, auto& o, auto&) { return ops::sum(ops::square(ops::concat({t, o, t}, 1))); }),
                      F3([](auto& t, auto&, auto&) { return ops::sum(ops::square(ops::slice(t, 2, 1, 2))); })});
        unary_family("grad: matmul", 18, {F3([](auto& t, auto& o, auto&) {
                         return ops::sum(ops::square(ops::matmul(t, ops::transpose(o, 1, 2))));
                     })});

        add("gradient", "grad: linear/conv3d/conv_transpose3d", [&](bool& ok) {
            Rng rng(19);
            std::vector<GradCheckResult> rs;
            for (int trial = 0; trial < 3; ++trial) {
                const std::size_t c = 1 + rng.below(2), f = 1 + rng.below(3);
                Tensor x = normal_tensor({2, c, 3 + rng.below(2), 3 + rng.below(2), 3}, 1.0, rng);
                Tensor k = normal_tensor({f, c, 2, 2, 2}, 0.5, rng), b = normal_tensor({f}, 1.0, rng);
                Tensor kt = normal_tensor({c, f, 3, 3, 3}, 0.5, rng);
                Tensor w = normal_tensor({3, 3}, 1.0, rng), bias = normal_tensor({3}, 1.0, rng);
                const ops::Conv3dSpec spec{1 + rng.below(2), rng.below(2)};
                rs.push_back(grad_check_params([&] { return ops::sum(ops::square(ops::conv3d(x, k, b, spec))); },
                                               {x, k, b}, kEps));
                rs.push_back(grad_check_params(
                    [&] { return ops::sum(ops::square(ops::conv_transpose3d(x, kt, b, {2, 1}))); }, {x, kt, b}, kEps));
                rs.push_back(grad_check_params([&] { return ops::sum(ops::square(ops::linear(x, w, bias))); },
                                               {x, w, bias}, kEps));
            }
            return grad_verdict(rs, kPrimitiveTol, ok);
        });

        add("gradient", "grad: max/avg/global pooling", [&](bool& ok) {
            Rng rng(20);
            std::vector<GradCheckResult> rs;
            for (int trial = 0; trial < 3; ++trial) {
                const Shape s = {2, 2, 4, 4, 3 + rng.below(2)};
                std::vector<double> distinct(shape_numel(s));
                for (std::size_t i = 0; i < distinct.size(); ++i)
                    distinct[i] = 0.01 * static_cast<double>((i * 7919) % distinct.size());
                Tensor xp = Tensor::from_data(s, distinct);
                Tensor x = normal_tensor(s, 1.0, rng);
                Tensor pw = normal_tensor(ops::max_pool3d(xp, 2, 1).shape(), 1.0, rng);
                Tensor aw = normal_tensor(ops::avg_pool3d(x, 2, 2).shape(), 1.0, rng);
                rs.push_back(grad_check_params([&] { return ops::sum(ops::mul(ops::max_pool3d(xp, 2, 1), pw)); }, {xp}, kEps));
                rs.push_back(grad_check_params([&] { return ops::sum(ops::mul(ops::avg_pool3d(x, 2, 2), aw)); }, {x}, kEps));
                rs.push_back(grad_check_params([&] { return ops::sum(ops::square(ops::global_avg_pool3d(x))); }, {x}, kEps));
            }
            return grad_verdict(rs, kPrimitiveTol, ok);
        });

        add("gradient", "grad: codebook_lookup/straight_through", [&](bool& ok) {
            Rng rng(21);
            Tensor codebook = normal_tensor({4, 2}, 1.0, rng);
            Tensor src = normal_tensor({1, 2, 2, 1, 1}, 1.0, rng);
            const std::vector<std::size_t> idx{3, 1};
            Tensor lw = normal_tensor({1, 2, 2, 1, 1}, 1.0, rng);
            std::vector<GradCheckResult> rs;
            rs.push_back(grad_check_params(
                [&] { return ops::sum(ops::square(ops::mul(ops::codebook_lookup(codebook, idx, {1, 2, 1, 1}), lw))); },
                {codebook}, kEps));
            // Straight-through: the source receives the value's gradient unchanged.
            Tensor s = src.clone().set_requires_grad(true);
            const Tensor val = ops::codebook_lookup(codebook, idx, {1, 2, 1, 1}).detach();
            ops::sum(ops::mul(ops::straight_through(s, val), lw)).backward();
            for (std::size_t i = 0; i < lw.numel(); ++i)
                if (s.grad()[i] != lw.at(i)) ok = false;
            return grad_verdict(rs, kPrimitiveTol, ok);
        });

        mmg_composites();

        add("gradient", "grad: co-attention -> cross-concat -> classifier -> focal", [&](bool& ok) {
            Rng rng(13);
            tcaf::CoAttention co(8, 16, rng);
            tcaf::Classifier head(3 * 8 * 16, 64, rng);
            Tensor f1 = normal_tensor({2, 8, 8}, 1.0, rng), f2 = normal_tensor({2, 8, 8}, 1.0, rng),
                   f3 = normal_tensor({2, 8, 8}, 1.0, rng);
            nn::ParamList p;
            co.collect("co", p);
            head.collect("head", p);
            std::vector<Tensor> probe;
            for (auto& np : p) probe.push_back(np.tensor);
            probe.insert(probe.end(), {f1, f2, f3});
            const std::vector<int> labels = {0, 1};
            const auto r = grad_check_params(
                [&] {
                    const auto out = co(f1, f2, f3);
                    const auto pred = tcaf::classify(head, tcaf::cross_concat(out.hidden[0], out.hidden[1], out.hidden[2]));
                    return focal(pred.probs, labels, 2.0, {1.0, 1.5});
                },
                probe, kEps, 48);
            return grad_verdict({r}, kCompositeTol, ok);
        });

        add("gradient", "grad: encoders -> TCAF -> focal (fusion model)", [&](bool& ok) {
            FusionConfig c;
            c.encoder.volume_shape = {8, 8, 8};
            c.encoder.tokens = 4;
            c.encoder.token_dim = 4;
            c.encoder.heads = 2;
            c.key_dim = 4;
            c.classifier_hidden = 8;
            c.seed = 3;
            FusionModel m(c);
            Rng rng(14);
            const Tensor mri = normal_tensor({2, 1, 8, 8, 8}, 1.0, rng), pet = normal_tensor({2, 1, 8, 8, 8}, 1.0, rng),
                         clin = normal_tensor({2, 7}, 1.0, rng);
            const std::vector<int> labels = {1, 0};
            std::vector<Tensor> probe;
            for (auto& np : m.params()) probe.push_back(np.tensor);
            const auto r = grad_check_params(
                [&] { return focal(m.forward(mri, pet, clin).prediction.probs, labels, 2.0, {1.0, 1.0}); }, probe,
                kEps, 8);
            return grad_verdict({r}, kCompositeTol, ok);
        });

        add("gradient", "grad: SDM triple loss", [&](bool& ok) {
            Rng rng(22);
            Tensor a = normal_tensor({4, 5}, 1.0, rng), b = normal_tensor({4, 5}, 1.0, rng),
                   c = normal_tensor({4, 5}, 1.0, rng);
            const std::vector<int> y = {0, 1, 1, 0};
            const auto r = grad_check_params(
                [&] {
                    return loss::triple_loss(loss::sdm_loss(a, c, y, 0.1, 1e-8), loss::sdm_loss(b, c, y, 0.1, 1e-8),
                                             loss::sdm_loss(a, b, y, 0.1, 1e-8), 0.5);
                },
                {a, b, c}, kEps);
            return grad_verdict({r}, kCompositeTol, ok);
        });
    }

    void mmg_composites() {
        mmg::MmgConfig cfg;
        cfg.volume_shape = {8, 8, 8};
        cfg.codebook_size = 8;
        cfg.code_dim = 4;
        cfg.seed = 11;
        mmg::MmgModel model(cfg);
        Rng rng(2);
        const Tensor x = normal_tensor({1, 1, 8, 8, 8}, 1.0, rng), y = normal_tensor({1, 1, 8, 8, 8}, 1.0, rng);
        std::vector<std::size_t> idx;
        Shape grid;
        Tensor z_hat0, z_q0;
        {
            NoGradGuard g;
            const auto f = model.forward(x);
            idx = f.quantized.indices;
            grid = f.quantized.index_shape;
            z_hat0 = f.z_hat;
            z_q0 = f.quantized.z_q_codes;
        }
        auto select = [&](const std::string& prefix) {
            std::vector<Tensor> out;
            for (const auto& p : model.all_params())
                if (p.name.rfind(prefix, 0) == 0) out.push_back(p.tensor);
            return out;
        };
        add("gradient", "grad: MMG hybrid loss (decoder, codebook)", [&](bool& ok) {
            const Tensor z_hat = model.encode(x).detach();
            auto probe = select("decoder");
            probe.push_back(model.codebook().codes());
            const auto r = grad_check_params(
                [&] {
                    const Tensor zq = ops::codebook_lookup(model.codebook().codes(), idx, grid);
                    const Tensor gen = model.decode(zq);
                    return mmg::hybrid_loss(y, gen, z_hat, zq, model.discriminator()(gen), model.perceptual(),
                                            {1.0, 1.0, 0.1, 0.01}, 0.25, z_hat0, z_q0)
                        .total;
                },
                probe, kEps, 32);
            return grad_verdict({r}, kCompositeTol, ok);
        });
        add("gradient", "grad: MMG quantization term (encoder)", [&](bool& ok) {
            const auto r = grad_check_params(
                [&] {
                    const Tensor zq = ops::codebook_lookup(model.codebook().codes(), idx, grid);
                    return mmg::hybrid_loss(y, y, model.encode(x), zq, Tensor::zeros({1}), model.perceptual(),
                                            {0, 1, 0, 0}, 0.25, z_hat0, z_q0)
                        .total;
                },
                select("encoder"), kEps, 32);
            return grad_verdict({r}, kCompositeTol, ok);
        });
        add("gradient", "grad: MMG discriminator objective", [&](bool& ok) {
            const auto r = grad_check_params(
                [&] { return mmg::discriminator_loss(model.discriminator()(y), model.discriminator()(x)); },
                select("discriminator"), kEps, 32);
            return grad_verdict({r}, kCompositeTol, ok);
        });
    }

    void oracles() {
        add("oracle", "quantize == brute-force nearest code (100 positions)", [&](bool& ok) {
            Rng rng(31);
            const std::size_t m = 16, d = 4;
            Rng cb_rng(32);
            mmg::Codebook cb(m, d, cb_rng);
            {
                auto c = cb.codes().mutable_data();
                for (auto& v : c) v = store(rng.normal());
            }
            // 4 subjects x 25 positions = 100 latent vectors.
            const Tensor z = normal_tensor({4, d, 5, 5, 1}, 1.0, rng);
            const auto q = mmg::quantize(z, cb);
            std::vector<std::vector<double>> points, codes(m, std::vector<double>(d));
            for (std::size_t b = 0; b < 4; ++b)
                for (std::size_t p = 0; p < 25; ++p) {
                    std::vector<double> v(d);
                    for (std::size_t c = 0; c < d; ++c) v[c] = z.at((b * d + c) * 25 + p);
                    points.push_back(v);
                }
            for (std::size_t k = 0; k < m; ++k)
                for (std::size_t c = 0; c < d; ++c) codes[k][c] = cb.codes().at(k * d + c);
            const auto expect = oracle::nearest_codes(points, codes);
            std::size_t mismatches = 0;
            for (std::size_t i = 0; i < expect.size(); ++i) mismatches += expect[i] != q.indices[i];
            ok = mismatches == 0 && expect.size() == 100;
            return std::to_string(mismatches) + " mismatches of " + std::to_string(expect.size());
        });
        add("oracle", "conv3d == naive loops", [&](bool& ok) {
            Rng rng(33);
            double worst = 0.0;
            for (int trial = 0; trial < 4; ++trial) {
                const std::size_t c = 1 + rng.below(3), f = 1 + rng.below(3), k = 2 + rng.below(2);
                const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
                const Tensor x = normal_tensor({2, c, 5 + rng.below(3), 5, 6}, 1.0, rng);
                const Tensor w = normal_tensor({f, c, k, k, k}, 1.0, rng);
                const Tensor y = ops::conv3d(x, w, Tensor(), {stride, pad});
                const auto ref = oracle::conv3d_naive(x, w, stride, pad);
                if (ref.size() != y.numel()) throw std::runtime_error("size mismatch");
                for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - y.at(i)));
            }
            ok = worst <= 1e-5;
            return "max abs diff " + num(worst);
        });
        add("oracle", "conv_transpose3d == naive scatter", [&](bool& ok) {
            Rng rng(34);
            double worst = 0.0;
            for (int trial = 0; trial < 4; ++trial) {
                const std::size_t c = 1 + rng.below(3), f = 1 + rng.below(3);
                const Tensor x = normal_tensor({2, c, 3, 4, 3}, 1.0, rng);
                const Tensor w = normal_tensor({c, f, 4, 4, 4}, 1.0, rng);
                const Tensor y = ops::conv_transpose3d(x, w, Tensor(), {2, 1});
                const auto ref = oracle::conv_transpose3d_naive(x, w, 2, 1);
                if (ref.size() != y.numel()) throw std::runtime_error("size mismatch");
                for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - y.at(i)));
            }
            ok = worst <= 1e-5;
            return "max abs diff " + num(worst);
        });
        add("oracle", "co-attention == explicit loops", [&](bool& ok) {
            Rng rng(35);
            tcaf::CoAttention co(8, 16, rng);
            const std::array<Tensor, 3> f = {normal_tensor({2, 8, 8}, 1.0, rng), normal_tensor({2, 8, 8}, 1.0, rng),
                                             normal_tensor({2, 8, 8}, 1.0, rng)};
            const auto out = co(f[0], f[1], f[2]);
            auto rows = [](const Tensor& x, std::size_t n) {
                const std::size_t t = x.dim(1), d = x.dim(2);
                std::vector<std::vector<double>> r(t, std::vector<double>(d));
                for (std::size_t i = 0; i < t; ++i)
                    for (std::size_t j = 0; j < d; ++j) r[i][j] = x.at((n * t + i) * d + j);
                return r;
            };
            auto affine = [](const std::vector<std::vector<double>>& x, const nn::Linear& l) {
                const std::size_t o = l.weight.dim(0), in = l.weight.dim(1);
                std::vector<std::vector<double>> y(x.size(), std::vector<double>(o));
                for (std::size_t r = 0; r < x.size(); ++r)
                    for (std::size_t a = 0; a < o; ++a) {
                        double acc = l.bias.at(a);
                        for (std::size_t i = 0; i < in; ++i) acc += l.weight.at(a * in + i) * x[r][i];
                        y[r][a] = acc;
                    }
                return y;
            };
            double worst = 0.0;
            for (std::size_t n = 0; n < 2; ++n) {
                std::vector<std::vector<double>> joint(8);
                for (std::size_t r = 0; r < 8; ++r)
                    for (const auto& m : f) {
                        const auto rr = rows(m, n);
                        joint[r].insert(joint[r].end(), rr[r].begin(), rr[r].end());
                    }
                const auto q = affine(joint, co.query());
                for (std::size_t i = 0; i < 3; ++i) {
                    const auto src = rows(f[i], n);
                    const auto expect = oracle::attention_rows(q, affine(src, co.key(i)), affine(src, co.value(i)));
                    const auto got = rows(out.hidden[i], n);
                    for (std::size_t r = 0; r < 8; ++r)
                        for (std::size_t j = 0; j < 16; ++j) worst = std::max(worst, std::abs(got[r][j] - expect[r][j]));
                }
            }
            ok = worst <= 1e-5;
            return "max abs diff " + num(worst);
        });
        add("oracle", "AUC == exhaustive pairwise (30 samples)", [&](bool& ok) {
            Rng rng(36);
            std::size_t bad = 0;
            for (int trial = 0; trial < 20; ++trial) {
                std::vector<double> s(30);
                std::vector<int> y(30);
                for (std::size_t i = 0; i < 30; ++i) {
                    s[i] = std::round(rng.uniform(0, 10)) / 10.0;  // coarse grid forces ties
                    y[i] = static_cast<int>(i % 3 == 0);
                }
                bad += metrics::auc(s, y) != oracle::pairwise_auc(s, y);
            }
            ok = bad == 0;
            return std::to_string(bad) + " of 20 trials differ";
        });
    }

    static Tensor probs_of(const std::vector<double>& p1) {
        std::vector<double> v;
        for (double p : p1) {
            v.push_back(1.0 - p);
            v.push_back(p);
        }
        return Tensor::from_data({p1.size(), 2}, v);
    }

    void identities() {
        PrecisionScope wide(Precision::Float64);
        add("identity", "focal(gamma=0) == cross-entropy", [&](bool& ok) {
            Rng rng(41);
            std::vector<double> p(12);
            std::vector<int> y(12);
            double ce = 0.0;
            for (std::size_t i = 0; i < 12; ++i) {
                p[i] = rng.uniform(0.01, 0.99);
                y[i] = static_cast<int>(i % 2);
                ce -= std::log(y[i] == 1 ? p[i] : 1.0 - p[i]);
            }
            ce /= 12.0;
            const double got = focal(probs_of(p), y, 0.0, {1.0, 1.0}).item();
            ok = std::abs(got - ce) <= 1e-7;
            return "focal " + num(got) + " vs CE " + num(ce);
        });
        add("identity", "focal >= 0 and shrinks with gamma", [&](bool& ok) {
            Rng rng(42);
            std::vector<double> p(10);
            std::vector<int> y(10);
            for (std::size_t i = 0; i < 10; ++i) {
                p[i] = rng.uniform(0.05, 0.95);
                y[i] = static_cast<int>(rng.below(2));
            }
            double prev = std::numeric_limits<double>::infinity();
            for (double g : {0.0, 0.5, 1.0, 2.0, 5.0}) {
                const double v = focal(probs_of(p), y, g, {1.0, 1.0}).item();
                if (!(v >= 0.0) || v > prev) ok = false;
                prev = v;
            }
            return "last value " + num(prev);
        });
        add("identity", "triple loss endpoints lambda in {0,1}", [&](bool& ok) {
            const Tensor mt = Tensor::full({}, 0.7), pt = Tensor::full({}, 0.2), mp = Tensor::full({}, 1.3);
            const double l0 = loss::triple_loss(mt, pt, mp, 0.0).item();
            const double l1 = loss::triple_loss(mt, pt, mp, 1.0).item();
            ok = std::abs(l0 - 1.3) <= 1e-12 && std::abs(l1 - 0.45) <= 1e-12;
            return "lambda=0 -> " + num(l0) + ", lambda=1 -> " + num(l1);
        });
        add("identity", "total loss at alpha=0 == focal", [&](bool& ok) {
            Rng rng(43);
            const std::vector<int> y = {0, 1, 1, 0};
            const Tensor probs = probs_of({0.3, 0.8, 0.6, 0.1});
            const Tensor f = focal(probs, y, 2.0, {1.0, 1.0});
            const Tensor a = normal_tensor({4, 5}, 1.0, rng), b = normal_tensor({4, 5}, 1.0, rng);
            const Tensor triple = loss::triple_loss(loss::sdm_loss(a, b, y, 0.1, 1e-8), loss::sdm_loss(b, a, y, 0.1, 1e-8),
                                                    loss::sdm_loss(a, a, y, 0.1, 1e-8), 0.5);
            const double total = loss::total_loss(f, triple, 0.0).item();
            ok = total == f.item();
            return "total " + num(total) + ", focal " + num(f.item());
        });
        add("identity", "hybrid loss with one nonzero weight == that component", [&](bool& ok) {
            mmg::MmgConfig cfg;
            cfg.volume_shape = {8, 8, 8};
            cfg.codebook_size = 8;
            cfg.code_dim = 4;
            mmg::MmgModel model(cfg);
            Rng rng(44);
            const Tensor x = normal_tensor({2, 1, 8, 8, 8}, 1.0, rng), y = normal_tensor({2, 1, 8, 8, 8}, 1.0, rng);
            const auto f = model.forward(x);
            const Tensor d = model.discriminator()(f.pet);
            const std::array<mmg::HybridLossWeights, 4> ws = {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}};
            double worst = 0.0;
            for (std::size_t i = 0; i < 4; ++i) {
                const auto h = mmg::hybrid_loss(y, f.pet, f.z_hat, f.quantized.z_q_codes, d, model.perceptual(), ws[i]);
                const std::array<double, 4> comp = {h.l1.item(), h.quantization.item(), h.perceptual.item(),
                                                    h.adversarial.item()};
                worst = std::max(worst, std::abs(h.total.item() - comp[i]));
                if (!(comp[i] > 0.0)) ok = false;
            }
            ok = ok && worst <= 1e-12;
            return "max |total - component| " + num(worst);
        });
        add("identity", "SDM == 0 when distributions match", [&](bool& ok) {
            const Tensor a = Tensor::from_data({2, 2}, {1.0, 0.3, 2.0, 0.6});
            const Tensor b = Tensor::from_data({2, 2}, {0.5, 0.5, 0.5, 0.5});
            const double v = loss::sdm_loss(a, b, {0, 0}, 0.1, 1e-8).item();
            ok = std::abs(v) <= 1e-7;
            return "sdm " + num(v);
        });
        add("identity", "SDM >= 0 on random inputs", [&](bool& ok) {
            Rng rng(45);
            double lowest = std::numeric_limits<double>::infinity();
            for (int trial = 0; trial < 20; ++trial) {
                const std::size_t n = 2 + rng.below(7);
                std::vector<int> y(n);
                for (auto& v : y) v = static_cast<int>(rng.below(2));
                const double l =
                    loss::sdm_loss(normal_tensor({n, 5}, 1.0, rng), normal_tensor({n, 5}, 1.0, rng), y, 0.1, 1e-8).item();
                lowest = std::min(lowest, l);
                if (!std::isfinite(l)) ok = false;
            }
            ok = ok && lowest >= -1e-12;
            return "min " + num(lowest);
        });
        add("identity", "confusion metrics hand case", [&](bool& ok) {
            const auto c = metrics::confusion_metrics({1, 1, 0, 0}, {1, 0, 1, 0});
            ok = c.tp == 1 && c.fp == 1 && c.fn == 1 && c.tn == 1 && c.acc == 0.5 && c.sen == 0.5 && c.spe == 0.5 &&
                 c.f1 == 0.5;
            return "acc " + num(c.acc) + " sen " + num(c.sen) + " spe " + num(c.spe) + " f1 " + num(c.f1);
        });
    }

    static std::string bytes_of(const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    void formats() {
        const auto dir = std::filesystem::temp_directory_path() / ("itcfn_verify_" + std::to_string(::getpid()));
        std::filesystem::create_directories(dir);
        add("format", "volume roundtrip is bitwise", [&](bool& ok) {
            Rng rng(51);
            Volume v({5, 6, 7});
            for (auto& x : v.data) x = static_cast<float>(rng.normal());
            v.data[0] = -0.0f;
            v.data[1] = std::numeric_limits<float>::denorm_min();
            write_volume(v, dir / "a.vol");
            const Volume r = read_volume(dir / "a.vol");
            write_volume(r, dir / "b.vol");
            ok = r.dims == v.dims && std::memcmp(r.data.data(), v.data.data(), v.data.size() * sizeof(float)) == 0 &&
                 bytes_of(dir / "a.vol") == bytes_of(dir / "b.vol");
            return std::to_string(v.size()) + " voxels";
        });
        add("format", "checkpoint roundtrip is bitwise", [&](bool& ok) {
            mmg::MmgConfig cfg;
            cfg.volume_shape = {8, 8, 8};
            cfg.codebook_size = 8;
            cfg.code_dim = 4;
            const mmg::MmgModel m(cfg);
            m.save(dir / "a.itck", "{\"config_hash\":\"0\",\"seed\":1}");
            const auto r = mmg::MmgModel::from_checkpoint(dir / "a.itck");
            r.save(dir / "b.itck", "{\"config_hash\":\"0\",\"seed\":1}");
            ok = bytes_of(dir / "a.itck") == bytes_of(dir / "b.itck") &&
                 parameter_checksum(m.all_params()) == parameter_checksum(r.all_params());
            return std::to_string(bytes_of(dir / "a.itck").size()) + " bytes";
        });
        add("format", "manifest column order", [&](bool& ok) {
            CohortConfig c;
            c.n_subjects = 6;
            c.volume_shape = {8, 8, 8};
            generate_cohort(c, dir / "cohort");
            std::ifstream in(dir / "cohort" / "manifest.csv");
            std::string header;
            std::getline(in, header);
            std::string expect;
            for (const char* col : kManifestColumns) expect += (expect.empty() ? "" : ",") + std::string(col);
            ok = header == expect && load_cohort(dir / "cohort").size() == 6;
            return header;
        });
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }
};

}  // namespace

std::vector<Check> run_suite(Mutation mutation) { return Suite(mutation).run(); }

}  // namespace itcfn::verify
