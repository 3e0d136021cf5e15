#pragma once

#include <cstddef>
#include <vector>

#include "itcfn/tensor.hpp"

// Reference implementations written with explicit loops over plain arrays.
// They share no code with the engine and exist only to cross-check it.
namespace itcfn::oracle {

// Direct convolution with bounds checks in the innermost loop.
std::vector<double> conv3d_naive(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

// Scatter form of the transposed convolution.
std::vector<double> conv_transpose3d_naive(const Tensor& input, const Tensor& kernel, std::size_t stride,
                                           std::size_t padding);

// Exhaustive nearest code per row of `points` [P, d]; ties resolve to the lowest index.
std::vector<std::size_t> nearest_codes(const std::vector<std::vector<double>>& points,
                                       const std::vector<std::vector<double>>& codes);

// Fraction of (positive, negative) pairs ordered correctly, ties worth one half.
double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// softmax(q k^T / sqrt(d)) v over rows, for one subject.
std::vector<std::vector<double>> attention_rows(const std::vector<std::vector<double>>& q,
                                                const std::vector<std::vector<double>>& k,
                                                const std::vector<std::vector<double>>& v);

}  // namespace itcfn::oracle
