#pragma once

#include <array>
#include <string>

#include "itcfn/encoders.hpp"
#include "itcfn/nn.hpp"

// Triple-modal co-attention fusion: a query built from all three modalities
// attends to each modality's keys and values; the three results are
// cross-concatenated and classified.
namespace itcfn::tcaf {

struct CoAttentionOutput {
    Tensor q_multi;                 // [N, t, d_k]
    std::array<Tensor, 3> keys;     // [N, t, d_k] each
    std::array<Tensor, 3> values;   // [N, t, d_k] each
    std::array<Tensor, 3> weights;  // [N, t, t] each, row-stochastic
    std::array<Tensor, 3> hidden;   // [N, t, d_k] each
};

class CoAttention {
public:
    CoAttention() = default;
    CoAttention(std::size_t token_dim, std::size_t key_dim, Rng& rng);

    // Inputs in modality order (MRI, PET, clinical), each [N, t, d_tok].
    CoAttentionOutput operator()(const Tensor& f_mri, const Tensor& f_pet, const Tensor& f_clin) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

    std::size_t key_dim() const { return key_dim_; }
    const nn::Linear& query() const { return wq_; }
    const nn::Linear& key(std::size_t i) const { return wk_[i]; }
    const nn::Linear& value(std::size_t i) const { return wv_[i]; }

private:
    std::size_t token_dim_ = 0, key_dim_ = 0;
    nn::Linear wq_;
    std::array<nn::Linear, 3> wk_, wv_;
};

// softmax(q k^T / sqrt(d_k)) v on [N, t, d_k] blocks; also returns the weights.
Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* weights = nullptr);

// Flattens each [N, t, d_k] block, interleaves F1 and F2 element by element
// (a1, b1, a2, b2, ...) and appends F3: [N, 3 * t * d_k].
Tensor cross_concat(const Tensor& f1, const Tensor& f2, const Tensor& f3);

// Two dense layers (in -> hidden -> 2) with relu.
class Classifier {
public:
    Classifier() = default;
    Classifier(std::size_t in, std::size_t hidden, Rng& rng);

    Tensor logits(const Tensor& features) const;
    std::size_t input_dim() const { return in_; }
    void collect(const std::string& prefix, nn::ParamList& out) const;

private:
    std::size_t in_ = 0;
    nn::Linear l1_, l2_;
};

struct Prediction {
    Tensor logits;  // [N, 2]
    Tensor probs;   // [N, 2]
};

Prediction classify(const Classifier& head, const Tensor& features);

}  // namespace itcfn::tcaf
