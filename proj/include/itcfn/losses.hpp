#pragma once

#include <array>
#include <vector>

#include "itcfn/tensor.hpp"

// Classification-side objectives: focal loss, similarity-distribution
// matching between modality pairs, their triple mix and the total.
namespace itcfn::loss {

struct LossConfig {
    double gamma = 2.0;
    // Per-class focal weights. When alpha_from_frequency is set the trainer
    // replaces them with inverse class frequencies of the training fold.
    std::array<double, 2> alpha_focal{1.0, 1.0};
    bool alpha_from_frequency = true;
    double tau = 0.1;
    double lambda = 0.5;
    double alpha_total = 0.1;
    double eps = 1e-8;

    void validate() const;
};

// alpha_c = N / (2 * N_c); throws when a class is absent.
std::array<double, 2> inverse_frequency_alpha(const std::vector<int>& labels);

// mean_i -alpha_{y_i} (1 - p_{i,y_i})^gamma log p_{i,y_i} for probs [N,2].
Tensor focal_loss(const Tensor& probs, const std::vector<int>& labels, double gamma, std::array<double, 2> alpha);

// Similarity-distribution matching between paired features a[N,d], b[N,d]:
//   p_i = softmax_j(cos(a_i, b_j) / tau),  q_i = normalize(1[y_i == y_j] + eps)
//   loss = mean_i KL(p_i || q_i) + mean_j KL(p'_j || q_j)
// where p' is the same construction from b to a.
Tensor sdm_loss(const Tensor& a, const Tensor& b, const std::vector<int>& labels, double tau, double eps);

// lambda * (l_mt + l_pt) / 2 + (1 - lambda) * l_mp
Tensor triple_loss(const Tensor& l_mt, const Tensor& l_pt, const Tensor& l_mp, double lambda);

// l_focal + alpha * l_triple
Tensor total_loss(const Tensor& l_focal, const Tensor& l_triple, double alpha);

}  // namespace itcfn::loss
