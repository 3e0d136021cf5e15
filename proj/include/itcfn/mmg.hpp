#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "itcfn/nn.hpp"
#include "itcfn/synthdata.hpp"

// Missing-modality generation: a vector-quantized 3-D encoder/decoder that
// maps an MRI volume to a synthetic PET volume, trained with a hybrid
// L1 + quantization + perceptual + adversarial objective.
namespace itcfn::mmg {

struct HybridLossWeights {
    double l1 = 1.0;
    double quantization = 1.0;
    double perceptual = 0.1;
    double adversarial = 0.01;

    // Throws std::invalid_argument when any weight is negative or non-finite.
    void validate() const;
};

struct MmgConfig {
    std::array<std::size_t, 3> volume_shape{16, 16, 16};
    std::size_t codebook_size = 64;
    std::size_t code_dim = 32;
    double commitment_beta = 0.25;
    HybridLossWeights weights;
    std::uint64_t seed = 1;

    void validate() const;
};

class Codebook {
public:
    Codebook() = default;
    Codebook(std::size_t size, std::size_t dim, Rng& rng);

    std::size_t size() const { return codes_.dim(0); }
    std::size_t dim() const { return codes_.dim(1); }
    const Tensor& codes() const { return codes_; }
    Tensor& codes() { return codes_; }

    std::vector<std::uint64_t>& usage_counts() { return usage_; }
    const std::vector<std::uint64_t>& usage_counts() const { return usage_; }
    void reset_usage() { std::fill(usage_.begin(), usage_.end(), 0); }

private:
    Tensor codes_;  // [M, d]
    std::vector<std::uint64_t> usage_;
};

struct Quantized {
    // Decoder input. Values are exact codebook rows; the gradient passes
    // straight through to z_hat.
    Tensor z_q;
    // Same values, differentiable with respect to the codebook only. Used by
    // the quantization loss.
    Tensor z_q_codes;
    std::vector<std::size_t> indices;  // [N, d, h, w] flattened
    Shape index_shape;
};

// Nearest code (squared L2) for every latent position of z_hat[N, d, D, H, W];
// ties go to the lowest index.
Quantized quantize(const Tensor& z_hat, const Codebook& codebook);

struct HybridLoss {
    Tensor total;
    Tensor l1;
    Tensor quantization;
    Tensor perceptual;
    Tensor adversarial;
};

class PerceptualNet;

// total = w.l1 * mean|y_gen - y_true|
//       + w.quantization * (mean(sg[z_hat] - z_q)^2 + beta * mean(z_hat - sg[z_q])^2)
//       + w.perceptual * sum_layers mean(phi_l(y_gen) - phi_l(y_true))^2
//       + w.adversarial * mean(D(y_gen) - 1)^2
// disc_fake_scores are the discriminator outputs on y_gen.
// sg[.] defaults to a detached copy of the live value; sg_z_hat / sg_z_q
// substitute fixed constants instead, which gradient checks use so the
// stopped terms stay constant under perturbation.
HybridLoss hybrid_loss(const Tensor& y_true, const Tensor& y_gen, const Tensor& z_hat, const Tensor& z_q_codes,
                       const Tensor& disc_fake_scores, const PerceptualNet& perceptual, const HybridLossWeights& w,
                       double beta = 0.25, const Tensor& sg_z_hat = Tensor(), const Tensor& sg_z_q = Tensor());

// Least-squares discriminator objective: 0.5 * (mean(D(real) - 1)^2 + mean(D(fake)^2)).
Tensor discriminator_loss(const Tensor& real_scores, const Tensor& fake_scores);

class Encoder {
public:
    Encoder() = default;
    Encoder(std::size_t code_dim, Rng& rng);
    // [N,1,D,H,W] -> [N, code_dim, D/8, H/8, W/8]
    Tensor operator()(const Tensor& x) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

private:
    nn::Conv3d c1_, c2_, c3_;
};

class Decoder {
public:
    Decoder() = default;
    Decoder(std::size_t code_dim, Rng& rng);
    Tensor operator()(const Tensor& z) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

private:
    nn::ConvTranspose3d t1_, t2_, t3_;
};

// 3-layer patch discriminator; outputs one score per patch.
class PatchDiscriminator {
public:
    PatchDiscriminator() = default;
    explicit PatchDiscriminator(Rng& rng);
    Tensor operator()(const Tensor& x) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

private:
    nn::Conv3d c1_, c2_, c3_;
};

// Frozen, randomly initialized feature extractor for the perceptual term.
class PerceptualNet {
public:
    PerceptualNet() = default;
    explicit PerceptualNet(Rng& rng);
    std::vector<Tensor> features(const Tensor& x) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

private:
    nn::Conv3d c1_, c2_, c3_;
};

class MmgModel {
public:
    explicit MmgModel(const MmgConfig& config);

    const MmgConfig& config() const { return config_; }

    struct Forward {
        Tensor z_hat;
        Quantized quantized;
        Tensor pet;  // [N,1,D,H,W]
    };
    Forward forward(const Tensor& mri) const;
    Tensor encode(const Tensor& mri) const;
    Tensor decode(const Tensor& z_q) const { return decoder_(z_q); }

    // y_hat = G(q(E(x))) for one volume; no graph is recorded.
    Volume generate_pet(const Volume& mri) const;

    Codebook& codebook() { return codebook_; }
    const Codebook& codebook() const { return codebook_; }
    const PatchDiscriminator& discriminator() const { return disc_; }
    const PerceptualNet& perceptual() const { return perceptual_; }

    // Encoder, decoder and codebook.
    nn::ParamList generator_params() const;
    nn::ParamList discriminator_params() const;
    // Everything persisted in a checkpoint, including the frozen perceptual net.
    nn::ParamList all_params() const;

    // `run_json`, when non-empty, is a JSON object stored under "run"
    // (config hash, seed).
    std::string metadata_json(const std::string& run_json = {}) const;
    void save(const std::filesystem::path& path, const std::string& run_json = {}) const;
    // Restores weights; throws CheckpointError when shapes disagree with this model's config.
    void load(const std::filesystem::path& path);
    static MmgModel from_checkpoint(const std::filesystem::path& path);

private:
    MmgConfig config_;
    Encoder encoder_;
    Decoder decoder_;
    Codebook codebook_;
    PatchDiscriminator disc_;
    PerceptualNet perceptual_;
};

}  // namespace itcfn::mmg
