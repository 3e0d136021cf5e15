#include "itcfn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "itcfn/ops.hpp"

namespace itcfn::loss {

void LossConfig::validate() const {
    if (!(gamma >= 0.0)) throw std::invalid_argument("loss.gamma must be >= 0");
    if (!(tau > 0.0)) throw std::invalid_argument("loss.tau must be > 0");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("loss.lambda must lie in [0, 1]");
    if (!(alpha_total >= 0.0)) throw std::invalid_argument("loss.alpha_total must be >= 0");
    if (!(eps > 0.0)) throw std::invalid_argument("loss.eps must be > 0");
    for (double a : alpha_focal) {
        if (!(a >= 0.0) || !std::isfinite(a)) throw std::invalid_argument("loss.alpha_focal entries must be >= 0");
    }
}

std::array<double, 2> inverse_frequency_alpha(const std::vector<int>& labels) {
    std::array<std::size_t, 2> count{0, 0};
    for (int y : labels) {
        if (y != 0 && y != 1) throw std::invalid_argument("labels must be 0 or 1");
        ++count[static_cast<std::size_t>(y)];
    }
    if (count[0] == 0 || count[1] == 0) throw std::invalid_argument("inverse_frequency_alpha: both classes must be present");
    const double n = static_cast<double>(labels.size());
    return {n / (2.0 * static_cast<double>(count[0])), n / (2.0 * static_cast<double>(count[1]))};
}

namespace {

void check_labels(const char* op, const std::vector<int>& labels, std::size_t n) {
    if (labels.size() != n)
        throw std::invalid_argument(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(n) + " rows");
    for (int y : labels) {
        if (y != 0 && y != 1) throw std::invalid_argument(std::string(op) + ": labels must be 0 or 1");
    }
}

Tensor one_hot(const std::vector<int>& labels) {
    std::vector<double> v(labels.size() * 2, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) v[i * 2 + static_cast<std::size_t>(labels[i])] = 1.0;
    return Tensor::from_data({labels.size(), 2}, std::move(v));
}

// Row-wise log-softmax. The subtracted row maximum is a constant, which the
// log-softmax is invariant to, so detaching it is exact.
Tensor log_softmax_rows(const Tensor& s) {
    const std::size_t n = s.dim(0), m = s.dim(1);
    std::vector<double> mx(n);
    for (std::size_t i = 0; i < n; ++i) {
        double best = s.at(i * m);
        for (std::size_t j = 1; j < m; ++j) best = std::max(best, s.at(i * m + j));
        mx[i] = best;
    }
    const Tensor z = ops::sub(s, Tensor::from_data({n, 1}, mx));
    return ops::sub(z, ops::log(ops::sum(ops::exp(z), 1, true)));
}

Tensor row_normalize(const Tensor& x) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += x.at(i * d + j) * x.at(i * d + j);
        if (!(ss > 0.0)) throw std::invalid_argument("sdm_loss: feature row " + std::to_string(i) + " has zero norm");
    }
    return ops::div(x, ops::sqrt(ops::sum(ops::square(x), 1, true)));
}

// mean_i KL(softmax(s_i) || q_i)
Tensor directional_kl(const Tensor& scores, const Tensor& log_q) {
    const Tensor log_p = log_softmax_rows(scores);
    const Tensor p = ops::exp(log_p);
    return ops::mean(ops::sum(ops::mul(p, ops::sub(log_p, log_q)), 1));
}

}  // namespace

Tensor focal_loss(const Tensor& probs, const std::vector<int>& labels, double gamma, std::array<double, 2> alpha) {
    if (probs.rank() != 2 || probs.dim(1) != 2)
        throw std::invalid_argument("focal_loss: probs must be [N,2], got " + shape_str(probs.shape()));
    if (probs.dim(0) == 0) throw std::invalid_argument("focal_loss: empty batch");
    check_labels("focal_loss", labels, probs.dim(0));
    if (!(gamma >= 0.0)) throw std::invalid_argument("focal_loss: gamma must be >= 0");
    for (double v : probs.data()) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("focal_loss: probability " + std::to_string(v) + " outside [0,1]");
    }
    std::vector<double> a(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) a[i] = alpha[static_cast<std::size_t>(labels[i])];
    const Tensor p_t = ops::sum(ops::mul(probs, one_hot(labels)), 1);
    // A fully confident wrong prediction would give log(0); only such
    // entries are lifted to 1e-12, all others are used as-is.
    std::vector<double> lift(labels.size());
    for (std::size_t i = 0; i < lift.size(); ++i) lift[i] = p_t.at(i) < 1e-12 ? 1e-12 : 0.0;
    const Tensor nll = ops::neg(ops::log(ops::add(p_t, Tensor::from_data({labels.size()}, std::move(lift)))));
    Tensor weighted = ops::mul(nll, Tensor::from_data({labels.size()}, std::move(a)));
    if (gamma != 0.0) weighted = ops::mul(weighted, ops::pow(ops::add_scalar(ops::neg(p_t), 1.0), gamma));
    return ops::mean(weighted);
}

Tensor sdm_loss(const Tensor& a, const Tensor& b, const std::vector<int>& labels, double tau, double eps) {
    if (a.rank() != 2 || b.shape() != a.shape())
        throw std::invalid_argument("sdm_loss: features must share shape [N,d], got " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    const std::size_t n = a.dim(0);
    if (n < 2) throw std::invalid_argument("sdm_loss: needs at least 2 samples");
    check_labels("sdm_loss", labels, n);
    if (!(tau > 0.0)) throw std::invalid_argument("sdm_loss: tau must be > 0");
    if (!(eps > 0.0)) throw std::invalid_argument("sdm_loss: eps must be > 0");

    std::vector<double> log_q(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) row += (labels[i] == labels[j] ? 1.0 : 0.0) + eps;
        for (std::size_t j = 0; j < n; ++j)
            log_q[i * n + j] = std::log(((labels[i] == labels[j] ? 1.0 : 0.0) + eps) / row);
    }
    // The label-match matrix is symmetric, so both directions share q.
    const Tensor lq = Tensor::from_data({n, n}, std::move(log_q));
    const Tensor cos = ops::matmul(row_normalize(a), ops::transpose(row_normalize(b), 0, 1));
    const Tensor scores = ops::mul_scalar(cos, 1.0 / tau);
    return ops::add(directional_kl(scores, lq), directional_kl(ops::transpose(scores, 0, 1), lq));
}

Tensor triple_loss(const Tensor& l_mt, const Tensor& l_pt, const Tensor& l_mp, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("triple_loss: lambda must lie in [0, 1]");
    return ops::add(ops::mul_scalar(ops::add(l_mt, l_pt), lambda / 2.0), ops::mul_scalar(l_mp, 1.0 - lambda));
}

Tensor total_loss(const Tensor& l_focal, const Tensor& l_triple, double alpha) {
    if (!(alpha >= 0.0)) throw std::invalid_argument("total_loss: alpha must be >= 0");
    return ops::add(l_focal, ops::mul_scalar(l_triple, alpha));
}

}  // namespace itcfn::loss
