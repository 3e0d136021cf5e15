#include "itcfn/verify/oracles.hpp"

#include <cmath>
#include <stdexcept>

namespace itcfn::oracle {

std::vector<double> conv3d_naive(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    const long N = static_cast<long>(is[0]), C = static_cast<long>(is[1]);
    const long D = static_cast<long>(is[2]), H = static_cast<long>(is[3]), W = static_cast<long>(is[4]);
    const long F = static_cast<long>(ks[0]), KD = static_cast<long>(ks[2]), KH = static_cast<long>(ks[3]),
               KW = static_cast<long>(ks[4]);
    const long S = static_cast<long>(stride), P = static_cast<long>(padding);
    const long OD = (D + 2 * P - KD) / S + 1, OH = (H + 2 * P - KH) / S + 1, OW = (W + 2 * P - KW) / S + 1;
    const auto x = input.data();
    const auto k = kernel.data();
    std::vector<double> out(static_cast<std::size_t>(N * F * OD * OH * OW), 0.0);
    for (long n = 0; n < N; ++n)
        for (long f = 0; f < F; ++f)
            for (long od = 0; od < OD; ++od)
                for (long oh = 0; oh < OH; ++oh)
                    for (long ow = 0; ow < OW; ++ow) {
                        double acc = 0.0;
                        for (long c = 0; c < C; ++c)
                            for (long a = 0; a < KD; ++a)
                                for (long b = 0; b < KH; ++b)
                                    for (long e = 0; e < KW; ++e) {
                                        const long id = od * S - P + a, ih = oh * S - P + b, iw = ow * S - P + e;
                                        if (id < 0 || id >= D || ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                        acc += x[static_cast<std::size_t>((((n * C + c) * D + id) * H + ih) * W + iw)] *
                                               k[static_cast<std::size_t>((((f * C + c) * KD + a) * KH + b) * KW + e)];
                                    }
                        out[static_cast<std::size_t>((((n * F + f) * OD + od) * OH + oh) * OW + ow)] = acc;
                    }
    return out;
}

std::vector<double> conv_transpose3d_naive(const Tensor& input, const Tensor& kernel, std::size_t stride,
                                           std::size_t padding) {
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    const long N = static_cast<long>(is[0]), C = static_cast<long>(is[1]);
    const long D = static_cast<long>(is[2]), H = static_cast<long>(is[3]), W = static_cast<long>(is[4]);
    const long F = static_cast<long>(ks[1]), KD = static_cast<long>(ks[2]), KH = static_cast<long>(ks[3]),
               KW = static_cast<long>(ks[4]);
    const long S = static_cast<long>(stride), P = static_cast<long>(padding);
    const long OD = (D - 1) * S - 2 * P + KD, OH = (H - 1) * S - 2 * P + KH, OW = (W - 1) * S - 2 * P + KW;
    const auto x = input.data();
    const auto k = kernel.data();
    std::vector<double> out(static_cast<std::size_t>(N * F * OD * OH * OW), 0.0);
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c)
            for (long id = 0; id < D; ++id)
                for (long ih = 0; ih < H; ++ih)
                    for (long iw = 0; iw < W; ++iw)
                        for (long f = 0; f < F; ++f)
                            for (long a = 0; a < KD; ++a)
                                for (long b = 0; b < KH; ++b)
                                    for (long e = 0; e < KW; ++e) {
                                        const long od = id * S - P + a, oh = ih * S - P + b, ow = iw * S - P + e;
                                        if (od < 0 || od >= OD || oh < 0 || oh >= OH || ow < 0 || ow >= OW) continue;
                                        out[static_cast<std::size_t>((((n * F + f) * OD + od) * OH + oh) * OW + ow)] +=
                                            x[static_cast<std::size_t>((((n * C + c) * D + id) * H + ih) * W + iw)] *
                                            k[static_cast<std::size_t>((((c * F + f) * KD + a) * KH + b) * KW + e)];
                                    }
    return out;
}

std::vector<std::size_t> nearest_codes(const std::vector<std::vector<double>>& points,
                                       const std::vector<std::vector<double>>& codes) {
    std::vector<std::size_t> out;
    out.reserve(points.size());
    for (const auto& p : points) {
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t m = 0; m < codes.size(); ++m) {
            double d = 0.0;
            for (std::size_t j = 0; j < p.size(); ++j) d += (p[j] - codes[m][j]) * (p[j] - codes[m][j]);
            if (d < best_d) {
                best_d = d;
                best = m;
            }
        }
        out.push_back(best);
    }
    return out;
}

double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            pairs += 1.0;
            if (scores[i] > scores[j]) {
                wins += 1.0;
            } else if (scores[i] == scores[j]) {
                wins += 0.5;
            }
        }
    }
    if (pairs == 0.0) throw std::invalid_argument("pairwise_auc: need both classes");
    return wins / pairs;
}

std::vector<std::vector<double>> attention_rows(const std::vector<std::vector<double>>& q,
                                                const std::vector<std::vector<double>>& k,
                                                const std::vector<std::vector<double>>& v) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(k.front().size()));
    std::vector<std::vector<double>> out(q.size(), std::vector<double>(v.front().size(), 0.0));
    for (std::size_t i = 0; i < q.size(); ++i) {
        std::vector<double> s(k.size());
        double mx = -INFINITY;
        for (std::size_t j = 0; j < k.size(); ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < q[i].size(); ++c) dot += q[i][c] * k[j][c];
            s[j] = dot * scale;
            mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& e : s) {
            e = std::exp(e - mx);
            z += e;
        }
        for (std::size_t j = 0; j < k.size(); ++j) {
            for (std::size_t c = 0; c < v[j].size(); ++c) out[i][c] += s[j] / z * v[j][c];
        }
    }
    return out;
}

}  // namespace itcfn::oracle
