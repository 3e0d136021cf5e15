#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "itcfn/nn.hpp"
#include "itcfn/synthdata.hpp"

// Per-modality encoders mapping MRI, PET and clinical records into t tokens
// of width d_tok, refined by multi-head self-attention.
namespace itcfn::enc {

enum class Modality { Mri, Pet, Clinical };

const char* modality_name(Modality m);

struct EncoderConfig {
    std::array<std::size_t, 3> volume_shape{16, 16, 16};
    std::size_t tokens = 8;     // t
    std::size_t token_dim = 8;  // d_tok; d = t * d_tok
    std::size_t heads = 4;

    std::size_t feature_dim() const { return tokens * token_dim; }
    // Throws std::invalid_argument on zero sizes or when d % heads != 0.
    void validate() const;
};

// [N, t, d_tok] token block for one modality.
struct ModalityFeature {
    Tensor tokens;
    Modality modality = Modality::Mri;
};

// Three stride-2 conv blocks (1->8->16->32, relu), global average pool and a
// linear map to d, reshaped to t tokens.
class ImageEncoder {
public:
    ImageEncoder() = default;
    ImageEncoder(const EncoderConfig& config, Rng& rng);

    // [N,1,D,H,W] -> [N, t, d_tok]
    Tensor operator()(const Tensor& volumes) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

private:
    EncoderConfig config_;
    nn::Conv3d c1_, c2_, c3_;
    nn::Linear proj_;
};

// 7 -> 64 (relu) -> d, reshaped to t tokens.
class TabularEncoder {
public:
    TabularEncoder() = default;
    TabularEncoder(const EncoderConfig& config, Rng& rng);

    // [N, 7] standardized columns -> [N, t, d_tok]
    Tensor operator()(const Tensor& clinical) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

    nn::Linear& hidden() { return l1_; }
    nn::Linear& output() { return l2_; }

private:
    EncoderConfig config_;
    nn::Linear l1_, l2_;
};

// Standardized [N, 7] tensor; throws std::logic_error for an unfitted standardizer.
Tensor tabular_input(const std::vector<const SubjectRecord*>& subjects, const Standardizer& standardizer);

// Multi-head scaled dot-product self-attention over the token axis with an
// inner width of d = t * d_tok split across heads, output projection back to
// d_tok, residual connection and layer normalization.
class SelfAttention {
public:
    SelfAttention() = default;
    SelfAttention(const EncoderConfig& config, Rng& rng);

    Tensor operator()(const Tensor& tokens) const;
    // Softmax weights [N, heads, t, t] for the given input.
    Tensor attention_weights(const Tensor& tokens) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

    std::size_t heads() const { return heads_; }
    const nn::Linear& value_projection() const { return wv_; }
    const nn::Linear& output_projection() const { return wo_; }

private:
    Tensor split_heads(const Tensor& x) const;
    Tensor weights_from(const Tensor& q, const Tensor& k) const;

    std::size_t heads_ = 1, inner_ = 0;
    nn::Linear wq_, wk_, wv_, wo_;
    nn::LayerNorm norm_;
};

}  // namespace itcfn::enc
