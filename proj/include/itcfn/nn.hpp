#pragma once

#include <string>
#include <vector>

#include "itcfn/checkpoint.hpp"
#include "itcfn/ops.hpp"
#include "itcfn/rng.hpp"

// Small parameterized layers shared by the models.
namespace itcfn::nn {

using ParamList = std::vector<NamedTensor>;

struct Linear {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);

    Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv3d {
    Tensor weight;  // [F, C, k, k, k]
    Tensor bias;    // [F]
    ops::Conv3dSpec spec;

    Conv3d() = default;
    Conv3d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng);

    Tensor operator()(const Tensor& x) const { return ops::conv3d(x, weight, bias, spec); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct ConvTranspose3d {
    Tensor weight;  // [C, F, k, k, k]
    Tensor bias;    // [F]
    ops::Conv3dSpec spec;

    ConvTranspose3d() = default;
    ConvTranspose3d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng);

    Tensor operator()(const Tensor& x) const { return ops::conv_transpose3d(x, weight, bias, spec); }
    void collect(const std::string& prefix, ParamList& out) const;
};

// Learned affine after normalization over the last axis.
struct LayerNorm {
    Tensor gain;
    Tensor shift;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim);

    Tensor operator()(const Tensor& x) const { return ops::add(ops::mul(ops::layer_norm(x), gain), shift); }
    void collect(const std::string& prefix, ParamList& out) const;
};

void set_trainable(const ParamList& params, bool on);
void zero_grads(const ParamList& params);

}  // namespace itcfn::nn
