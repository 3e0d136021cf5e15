#include "itcfn/mmg.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace itcfn::mmg {

void HybridLossWeights::validate() const {
    const std::array<std::pair<const char*, double>, 4> all = {
        {{"l1", l1}, {"quantization", quantization}, {"perceptual", perceptual}, {"adversarial", adversarial}}};
    for (const auto& [name, v] : all) {
        if (!std::isfinite(v) || v < 0.0)
            throw std::invalid_argument(std::string("hybrid loss weight '") + name + "' must be finite and >= 0");
    }
}

void MmgConfig::validate() const {
    for (std::size_t d : volume_shape) {
        if (d < 8 || d % 8 != 0) throw std::invalid_argument("mmg volume_shape dims must be multiples of 8");
    }
    if (codebook_size == 0) throw std::invalid_argument("codebook_size must be >= 1");
    if (code_dim == 0) throw std::invalid_argument("code_dim must be >= 1");
    if (!(commitment_beta >= 0.0)) throw std::invalid_argument("commitment_beta must be >= 0");
    weights.validate();
}

Codebook::Codebook(std::size_t size, std::size_t dim, Rng& rng)
    : codes_(uniform_tensor({size, dim}, -1.0 / static_cast<double>(size), 1.0 / static_cast<double>(size), rng)),
      usage_(size, 0) {
    if (size == 0 || dim == 0) throw std::invalid_argument("codebook must be non-empty");
    codes_.set_requires_grad(true);
}

Quantized quantize(const Tensor& z_hat, const Codebook& codebook) {
    if (codebook.size() == 0) throw std::invalid_argument("quantize: empty codebook");
    if (z_hat.rank() != 5) throw std::invalid_argument("quantize: z_hat must be [N, d_code, D, H, W], got " + shape_str(z_hat.shape()));
    const Shape& s = z_hat.shape();
    const std::size_t dc = codebook.dim();
    if (s[1] != dc)
        throw std::invalid_argument("quantize: z_hat channel dim " + std::to_string(s[1]) + " != code dim " +
                                    std::to_string(dc));
    const std::size_t n = s[0], spatial = s[2] * s[3] * s[4], m = codebook.size();
    const auto& z = z_hat.data();
    const auto& codes = codebook.codes().data();

    Quantized q;
    q.index_shape = {n, s[2], s[3], s[4]};
    q.indices.resize(n * spatial);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t p = 0; p < spatial; ++p) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < m; ++k) {
                double dist = 0.0;
                for (std::size_t c = 0; c < dc; ++c) {
                    const double diff = z[(b * dc + c) * spatial + p] - codes[k * dc + c];
                    dist += diff * diff;
                }
                if (dist < best_d) {
                    best_d = dist;
                    best = k;
                }
            }
            q.indices[b * spatial + p] = best;
            BranchTrace::mix(best);
        }
    }
    q.z_q_codes = ops::codebook_lookup(codebook.codes(), q.indices, q.index_shape);
    q.z_q = ops::straight_through(z_hat, q.z_q_codes.detach());
    return q;
}

namespace {

Tensor mse(const Tensor& a, const Tensor& b) { return ops::mean(ops::square(ops::sub(a, b))); }

}  // namespace

HybridLoss hybrid_loss(const Tensor& y_true, const Tensor& y_gen, const Tensor& z_hat, const Tensor& z_q_codes,
                       const Tensor& disc_fake_scores, const PerceptualNet& perceptual, const HybridLossWeights& w,
                       double beta, const Tensor& sg_z_hat, const Tensor& sg_z_q) {
    w.validate();
    if (y_true.shape() != y_gen.shape())
        throw std::invalid_argument("hybrid_loss: y_true " + shape_str(y_true.shape()) + " vs y_gen " +
                                    shape_str(y_gen.shape()));
    if (z_hat.shape() != z_q_codes.shape())
        throw std::invalid_argument("hybrid_loss: z_hat " + shape_str(z_hat.shape()) + " vs z_q " +
                                    shape_str(z_q_codes.shape()));
    HybridLoss out;
    out.l1 = ops::mean(ops::abs(ops::sub(y_gen, y_true)));
    const Tensor z_hat_const = sg_z_hat.defined() ? sg_z_hat.detach() : z_hat.detach();
    const Tensor z_q_const = sg_z_q.defined() ? sg_z_q.detach() : z_q_codes.detach();
    if (z_hat_const.shape() != z_hat.shape() || z_q_const.shape() != z_hat.shape())
        throw std::invalid_argument("hybrid_loss: stop-gradient constants must match z_hat's shape");
    out.quantization = ops::add(mse(z_hat_const, z_q_codes), ops::mul_scalar(mse(z_hat, z_q_const), beta));

    const auto f_gen = perceptual.features(y_gen);
    std::vector<Tensor> f_true;
    {
        NoGradGuard guard;
        f_true = perceptual.features(y_true.detach());
    }
    out.perceptual = Tensor::scalar(0.0);
    for (std::size_t l = 0; l < f_gen.size(); ++l) out.perceptual = ops::add(out.perceptual, mse(f_gen[l], f_true[l]));

    out.adversarial = ops::mean(ops::square(ops::add_scalar(disc_fake_scores, -1.0)));

    out.total = ops::add(ops::add(ops::mul_scalar(out.l1, w.l1), ops::mul_scalar(out.quantization, w.quantization)),
                         ops::add(ops::mul_scalar(out.perceptual, w.perceptual),
                                  ops::mul_scalar(out.adversarial, w.adversarial)));
    return out;
}

Tensor discriminator_loss(const Tensor& real_scores, const Tensor& fake_scores) {
    const Tensor real_term = ops::mean(ops::square(ops::add_scalar(real_scores, -1.0)));
    const Tensor fake_term = ops::mean(ops::square(fake_scores));
    return ops::mul_scalar(ops::add(real_term, fake_term), 0.5);
}

Encoder::Encoder(std::size_t code_dim, Rng& rng)
    : c1_(1, 16, 3, 2, 1, rng), c2_(16, 32, 3, 2, 1, rng), c3_(32, code_dim, 3, 2, 1, rng) {}

Tensor Encoder::operator()(const Tensor& x) const {
    Tensor h = ops::leaky_relu(c1_(x));
    h = ops::leaky_relu(c2_(h));
    return c3_(h);
}

void Encoder::collect(const std::string& prefix, nn::ParamList& out) const {
    c1_.collect(prefix + ".conv1", out);
    c2_.collect(prefix + ".conv2", out);
    c3_.collect(prefix + ".conv3", out);
}

Decoder::Decoder(std::size_t code_dim, Rng& rng)
    : t1_(code_dim, 32, 4, 2, 1, rng), t2_(32, 16, 4, 2, 1, rng), t3_(16, 1, 4, 2, 1, rng) {}

Tensor Decoder::operator()(const Tensor& z) const {
    Tensor h = ops::leaky_relu(t1_(z));
    h = ops::leaky_relu(t2_(h));
    return t3_(h);
}

void Decoder::collect(const std::string& prefix, nn::ParamList& out) const {
    t1_.collect(prefix + ".deconv1", out);
    t2_.collect(prefix + ".deconv2", out);
    t3_.collect(prefix + ".deconv3", out);
}

PatchDiscriminator::PatchDiscriminator(Rng& rng)
    : c1_(1, 8, 4, 2, 1, rng), c2_(8, 16, 4, 2, 1, rng), c3_(16, 1, 3, 1, 1, rng) {}

Tensor PatchDiscriminator::operator()(const Tensor& x) const {
    Tensor h = ops::leaky_relu(c1_(x));
    h = ops::leaky_relu(c2_(h));
    return c3_(h);
}

void PatchDiscriminator::collect(const std::string& prefix, nn::ParamList& out) const {
    c1_.collect(prefix + ".conv1", out);
    c2_.collect(prefix + ".conv2", out);
    c3_.collect(prefix + ".conv3", out);
}

PerceptualNet::PerceptualNet(Rng& rng)
    : c1_(1, 4, 3, 1, 1, rng), c2_(4, 8, 3, 2, 1, rng), c3_(8, 8, 3, 2, 1, rng) {
    nn::ParamList p;
    collect("", p);
    nn::set_trainable(p, false);
}

std::vector<Tensor> PerceptualNet::features(const Tensor& x) const {
    std::vector<Tensor> f;
    f.push_back(ops::leaky_relu(c1_(x)));
    f.push_back(ops::leaky_relu(c2_(f.back())));
    f.push_back(ops::leaky_relu(c3_(f.back())));
    return f;
}

void PerceptualNet::collect(const std::string& prefix, nn::ParamList& out) const {
    c1_.collect(prefix + ".conv1", out);
    c2_.collect(prefix + ".conv2", out);
    c3_.collect(prefix + ".conv3", out);
}

namespace {

MmgConfig validated(const MmgConfig& c) {
    c.validate();
    return c;
}

}  // namespace

MmgModel::MmgModel(const MmgConfig& config) : config_(validated(config)) {
    Rng root(config_.seed);
    Rng enc_rng(root.fork_seed()), dec_rng(root.fork_seed()), code_rng(root.fork_seed()), disc_rng(root.fork_seed()),
        perc_rng(root.fork_seed());
    encoder_ = Encoder(config_.code_dim, enc_rng);
    decoder_ = Decoder(config_.code_dim, dec_rng);
    codebook_ = Codebook(config_.codebook_size, config_.code_dim, code_rng);
    disc_ = PatchDiscriminator(disc_rng);
    perceptual_ = PerceptualNet(perc_rng);
}

Tensor MmgModel::encode(const Tensor& mri) const {
    const auto& vs = config_.volume_shape;
    if (mri.rank() != 5 || mri.dim(1) != 1 || mri.dim(2) != vs[0] || mri.dim(3) != vs[1] || mri.dim(4) != vs[2])
        throw std::invalid_argument("mmg: expected input [N,1," + std::to_string(vs[0]) + "," + std::to_string(vs[1]) +
                                    "," + std::to_string(vs[2]) + "], got " + shape_str(mri.shape()));
    return encoder_(mri);
}

MmgModel::Forward MmgModel::forward(const Tensor& mri) const {
    Forward f;
    f.z_hat = encode(mri);
    f.quantized = quantize(f.z_hat, codebook_);
    f.pet = decoder_(f.quantized.z_q);
    return f;
}

Volume MmgModel::generate_pet(const Volume& mri) const {
    if (mri.dims != config_.volume_shape)
        throw std::invalid_argument("generate_pet: volume shape " + std::to_string(mri.dims[0]) + "x" +
                                    std::to_string(mri.dims[1]) + "x" + std::to_string(mri.dims[2]) +
                                    " does not match the configured shape");
    NoGradGuard guard;
    const Tensor x = volumes_to_tensor({&mri});
    return tensor_to_volume(forward(x).pet, 0);
}

nn::ParamList MmgModel::generator_params() const {
    nn::ParamList p;
    encoder_.collect("encoder", p);
    decoder_.collect("decoder", p);
    p.push_back({"codebook", codebook_.codes()});
    return p;
}

nn::ParamList MmgModel::discriminator_params() const {
    nn::ParamList p;
    disc_.collect("discriminator", p);
    return p;
}

nn::ParamList MmgModel::all_params() const {
    nn::ParamList p = generator_params();
    disc_.collect("discriminator", p);
    perceptual_.collect("perceptual", p);
    return p;
}

std::string MmgModel::metadata_json(const std::string& run_json) const {
    nlohmann::ordered_json j;
    j["kind"] = "mmg";
    j["volume_shape"] = config_.volume_shape;
    j["codebook_size"] = config_.codebook_size;
    j["code_dim"] = config_.code_dim;
    j["commitment_beta"] = config_.commitment_beta;
    j["weights"] = {{"l1", config_.weights.l1},
                    {"quantization", config_.weights.quantization},
                    {"perceptual", config_.weights.perceptual},
                    {"adversarial", config_.weights.adversarial}};
    j["seed"] = config_.seed;
    if (!run_json.empty()) j["run"] = nlohmann::ordered_json::parse(run_json);
    return j.dump();
}

void MmgModel::save(const std::filesystem::path& path, const std::string& run_json) const {
    save_checkpoint(path, all_params(), metadata_json(run_json));
}

void MmgModel::load(const std::filesystem::path& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    restore_tensors(ckpt, all_params());
}

MmgModel MmgModel::from_checkpoint(const std::filesystem::path& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ckpt.metadata);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("mmg checkpoint metadata is not valid JSON: " + std::string(e.what()));
    }
    if (j.value("kind", "") != "mmg") throw CheckpointError("checkpoint " + path.string() + " is not an MMG checkpoint");
    MmgConfig c;
    try {
        c.volume_shape = j.at("volume_shape").get<std::array<std::size_t, 3>>();
        c.codebook_size = j.at("codebook_size").get<std::size_t>();
        c.code_dim = j.at("code_dim").get<std::size_t>();
        c.commitment_beta = j.at("commitment_beta").get<double>();
        const auto& w = j.at("weights");
        c.weights = {w.at("l1").get<double>(), w.at("quantization").get<double>(), w.at("perceptual").get<double>(),
                     w.at("adversarial").get<double>()};
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("mmg checkpoint metadata incomplete: " + std::string(e.what()));
    }
    MmgModel m(c);
    restore_tensors(ckpt, m.all_params());
    return m;
}

}  // namespace itcfn::mmg
