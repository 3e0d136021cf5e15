#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "itcfn/encoders.hpp"
#include "itcfn/tcaf.hpp"

// Stage-2 network: three encoders with self-attention, then either TCAF
// (co-attention + cross-concatenation) or plain concatenation of
// token-pooled features, then the classifier.
namespace itcfn {

struct FusionConfig {
    enc::EncoderConfig encoder;
    std::size_t key_dim = 16;
    std::size_t classifier_hidden = 64;
    bool use_tcaf = true;
    std::uint64_t seed = 1;

    void validate() const;
};

struct FusionOutput {
    std::array<Tensor, 3> tokens;  // self-attended [N, t, d_tok] per modality
    std::array<Tensor, 3> pooled;  // mean over tokens, [N, d_tok]
    Tensor fused;                  // classifier input
    tcaf::Prediction prediction;
};

class FusionModel {
public:
    explicit FusionModel(const FusionConfig& config);

    const FusionConfig& config() const { return config_; }

    // mri, pet: [N,1,D,H,W]; clinical: [N,7] standardized.
    FusionOutput forward(const Tensor& mri, const Tensor& pet, const Tensor& clinical) const;

    nn::ParamList params() const;
    std::string metadata_json(const std::string& run_json = {}) const;
    void save(const std::filesystem::path& path, const std::string& run_json = {}) const;
    // Throws CheckpointError on a name or shape mismatch.
    void load(const std::filesystem::path& path);

private:
    FusionConfig config_;
    enc::ImageEncoder mri_encoder_, pet_encoder_;
    enc::TabularEncoder clinical_encoder_;
    std::array<enc::SelfAttention, 3> attention_;
    tcaf::CoAttention co_attention_;
    tcaf::Classifier classifier_;
};

}  // namespace itcfn
