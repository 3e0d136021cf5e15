#include "itcfn/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace itcfn::enc {

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::Mri: return "mri";
        case Modality::Pet: return "pet";
        case Modality::Clinical: return "clinical";
    }
    return "?";
}

void EncoderConfig::validate() const {
    if (tokens == 0 || token_dim == 0) throw std::invalid_argument("encoder tokens and token_dim must be >= 1");
    if (heads == 0) throw std::invalid_argument("attention heads must be >= 1");
    if (feature_dim() % heads != 0)
        throw std::invalid_argument("feature dim " + std::to_string(feature_dim()) + " is not divisible by " +
                                    std::to_string(heads) + " heads");
    for (std::size_t d : volume_shape) {
        if (d < 8) throw std::invalid_argument("encoder volume dims must be >= 8");
    }
}

ImageEncoder::ImageEncoder(const EncoderConfig& config, Rng& rng)
    : config_(config),
      c1_(1, 8, 3, 2, 1, rng),
      c2_(8, 16, 3, 2, 1, rng),
      c3_(16, 32, 3, 2, 1, rng),
      proj_(32, config.feature_dim(), rng) {
    config_.validate();
}

Tensor ImageEncoder::operator()(const Tensor& volumes) const {
    const auto& vs = config_.volume_shape;
    if (volumes.rank() != 5 || volumes.dim(1) != 1 || volumes.dim(2) != vs[0] || volumes.dim(3) != vs[1] ||
        volumes.dim(4) != vs[2])
        throw std::invalid_argument("image encoder: expected [N,1," + std::to_string(vs[0]) + "," +
                                    std::to_string(vs[1]) + "," + std::to_string(vs[2]) + "], got " +
                                    shape_str(volumes.shape()));
    Tensor h = ops::relu(c1_(volumes));
    h = ops::relu(c2_(h));
    h = ops::relu(c3_(h));
    const Tensor f = proj_(ops::global_avg_pool3d(h));
    return ops::reshape(f, {volumes.dim(0), config_.tokens, config_.token_dim});
}

void ImageEncoder::collect(const std::string& prefix, nn::ParamList& out) const {
    c1_.collect(prefix + ".conv1", out);
    c2_.collect(prefix + ".conv2", out);
    c3_.collect(prefix + ".conv3", out);
    proj_.collect(prefix + ".proj", out);
}

TabularEncoder::TabularEncoder(const EncoderConfig& config, Rng& rng)
    : config_(config), l1_(ClinicalRecord::kFields, 64, rng), l2_(64, config.feature_dim(), rng) {
    config_.validate();
}

Tensor TabularEncoder::operator()(const Tensor& clinical) const {
    if (clinical.rank() != 2 || clinical.dim(1) != ClinicalRecord::kFields)
        throw std::invalid_argument("tabular encoder: expected [N,7], got " + shape_str(clinical.shape()));
    const Tensor f = l2_(ops::relu(l1_(clinical)));
    return ops::reshape(f, {clinical.dim(0), config_.tokens, config_.token_dim});
}

void TabularEncoder::collect(const std::string& prefix, nn::ParamList& out) const {
    l1_.collect(prefix + ".fc1", out);
    l2_.collect(prefix + ".fc2", out);
}

Tensor tabular_input(const std::vector<const SubjectRecord*>& subjects, const Standardizer& standardizer) {
    if (!standardizer.fitted()) throw std::logic_error("tabular input: standardizer has not been fitted");
    std::vector<double> v;
    v.reserve(subjects.size() * ClinicalRecord::kFields);
    for (const auto* s : subjects) {
        const auto row = standardizer.apply(s->clinical);
        v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor::from_data({subjects.size(), ClinicalRecord::kFields}, std::move(v));
}

SelfAttention::SelfAttention(const EncoderConfig& config, Rng& rng) : heads_(config.heads), inner_(config.feature_dim()) {
    config.validate();
    wq_ = nn::Linear(config.token_dim, inner_, rng);
    wk_ = nn::Linear(config.token_dim, inner_, rng);
    wv_ = nn::Linear(config.token_dim, inner_, rng);
    wo_ = nn::Linear(inner_, config.token_dim, rng);
    norm_ = nn::LayerNorm(config.token_dim);
}

// [N, t, inner] -> [N, heads, t, head_dim]
Tensor SelfAttention::split_heads(const Tensor& x) const {
    const std::size_t n = x.dim(0), t = x.dim(1);
    return ops::transpose(ops::reshape(x, {n, t, heads_, inner_ / heads_}), 1, 2);
}

Tensor SelfAttention::weights_from(const Tensor& q, const Tensor& k) const {
    const double scale = 1.0 / std::sqrt(static_cast<double>(inner_ / heads_));
    return ops::softmax(ops::mul_scalar(ops::matmul(q, ops::transpose(k, 2, 3)), scale), 3);
}

Tensor SelfAttention::attention_weights(const Tensor& tokens) const {
    return weights_from(split_heads(wq_(tokens)), split_heads(wk_(tokens)));
}

Tensor SelfAttention::operator()(const Tensor& tokens) const {
    if (tokens.rank() != 3) throw std::invalid_argument("self_attention: expected [N,t,d_tok], got " + shape_str(tokens.shape()));
    const std::size_t n = tokens.dim(0), t = tokens.dim(1);
    const Tensor w = weights_from(split_heads(wq_(tokens)), split_heads(wk_(tokens)));
    const Tensor mixed = ops::matmul(w, split_heads(wv_(tokens)));  // [N, heads, t, head_dim]
    const Tensor merged = ops::reshape(ops::transpose(mixed, 1, 2), {n, t, inner_});
    return norm_(ops::add(tokens, wo_(merged)));
}

void SelfAttention::collect(const std::string& prefix, nn::ParamList& out) const {
    wq_.collect(prefix + ".q", out);
    wk_.collect(prefix + ".k", out);
    wv_.collect(prefix + ".v", out);
    wo_.collect(prefix + ".o", out);
    norm_.collect(prefix + ".norm", out);
}

}  // namespace itcfn::enc
