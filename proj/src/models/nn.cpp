#include "itcfn/nn.hpp"

#include <algorithm>
#include <cmath>

namespace itcfn::nn {

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, double gain)
    : weight(kaiming_uniform({out, in}, in, rng, gain)),
      bias(uniform_tensor({out}, -1.0 / std::sqrt(static_cast<double>(in)), 1.0 / std::sqrt(static_cast<double>(in)), rng)) {
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

Conv3d::Conv3d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng)
    : weight(kaiming_uniform({out, in, kernel, kernel, kernel}, in * kernel * kernel * kernel, rng)),
      bias(Tensor::zeros({out})),
      spec{stride, padding} {
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
}

void Conv3d::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

ConvTranspose3d::ConvTranspose3d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                                 std::size_t padding, Rng& rng)
    // Each output voxel receives about in * (kernel/stride)^3 contributions.
    : weight(kaiming_uniform({in, out, kernel, kernel, kernel},
                             in * std::max<std::size_t>(1, (kernel / stride) * (kernel / stride) * (kernel / stride)), rng)),
      bias(Tensor::zeros({out})),
      spec{stride, padding} {
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
}

void ConvTranspose3d::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t dim) : gain(Tensor::full({dim}, 1.0, true)), shift(Tensor::zeros({dim}, true)) {}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gain", gain});
    out.push_back({prefix + ".shift", shift});
}

void set_trainable(const ParamList& params, bool on) {
    for (auto p : params) p.tensor.set_requires_grad(on);
}

void zero_grads(const ParamList& params) {
    for (auto p : params) p.tensor.zero_grad();
}

}  // namespace itcfn::nn
