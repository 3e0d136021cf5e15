#include "itcfn/tcaf.hpp"

#include <cmath>
#include <stdexcept>

namespace itcfn::tcaf {

CoAttention::CoAttention(std::size_t token_dim, std::size_t key_dim, Rng& rng)
    : token_dim_(token_dim), key_dim_(key_dim), wq_(3 * token_dim, key_dim, rng) {
    if (token_dim == 0 || key_dim == 0) throw std::invalid_argument("co-attention dims must be >= 1");
    for (std::size_t i = 0; i < 3; ++i) {
        wk_[i] = nn::Linear(token_dim, key_dim, rng);
        wv_[i] = nn::Linear(token_dim, key_dim, rng);
    }
}

Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* weights) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(k.shape().back()));
    const Tensor w = ops::softmax(ops::mul_scalar(ops::matmul(q, ops::transpose(k, 1, 2)), scale), 2);
    if (weights) *weights = w;
    return ops::matmul(w, v);
}

CoAttentionOutput CoAttention::operator()(const Tensor& f_mri, const Tensor& f_pet, const Tensor& f_clin) const {
    const std::array<const Tensor*, 3> f = {&f_mri, &f_pet, &f_clin};
    for (const Tensor* x : f) {
        if (x->rank() != 3 || x->shape() != f_mri.shape() || x->dim(2) != token_dim_)
            throw std::invalid_argument("co_attention: features must share shape [N, t, " + std::to_string(token_dim_) +
                                        "], got " + shape_str(f_mri.shape()) + ", " + shape_str(f_pet.shape()) + ", " +
                                        shape_str(f_clin.shape()));
    }
    CoAttentionOutput out;
    out.q_multi = wq_(ops::concat({f_mri, f_pet, f_clin}, 2));
    for (std::size_t i = 0; i < 3; ++i) {
        out.keys[i] = wk_[i](*f[i]);
        out.values[i] = wv_[i](*f[i]);
        out.hidden[i] = scaled_attention(out.q_multi, out.keys[i], out.values[i], &out.weights[i]);
    }
    return out;
}

void CoAttention::collect(const std::string& prefix, nn::ParamList& out) const {
    wq_.collect(prefix + ".q", out);
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string m = enc::modality_name(static_cast<enc::Modality>(i));
        wk_[i].collect(prefix + ".k_" + m, out);
        wv_[i].collect(prefix + ".v_" + m, out);
    }
}

Tensor cross_concat(const Tensor& f1, const Tensor& f2, const Tensor& f3) {
    if (f1.shape() != f2.shape() || f1.shape() != f3.shape() || f1.rank() < 1)
        throw std::invalid_argument("cross_concat: hidden features must share shape, got " + shape_str(f1.shape()) +
                                    ", " + shape_str(f2.shape()) + ", " + shape_str(f3.shape()));
    const std::size_t n = f1.dim(0), len = f1.numel() / n;
    const Tensor a = ops::reshape(f1, {n, len, 1});
    const Tensor b = ops::reshape(f2, {n, len, 1});
    const Tensor woven = ops::reshape(ops::concat({a, b}, 2), {n, 2 * len});
    return ops::concat({woven, ops::reshape(f3, {n, len})}, 1);
}

Classifier::Classifier(std::size_t in, std::size_t hidden, Rng& rng) : in_(in), l1_(in, hidden, rng), l2_(hidden, 2, rng) {}

Tensor Classifier::logits(const Tensor& features) const {
    if (features.rank() != 2 || features.dim(1) != in_)
        throw std::invalid_argument("classify: expected [N, " + std::to_string(in_) + "] features, got " +
                                    shape_str(features.shape()));
    return l2_(ops::relu(l1_(features)));
}

void Classifier::collect(const std::string& prefix, nn::ParamList& out) const {
    l1_.collect(prefix + ".fc1", out);
    l2_.collect(prefix + ".fc2", out);
}

Prediction classify(const Classifier& head, const Tensor& features) {
    Prediction p;
    p.logits = head.logits(features);
    p.probs = ops::softmax(p.logits, 1);
    return p;
}

}  // namespace itcfn::tcaf
