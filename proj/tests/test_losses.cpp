#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "itcfn/grad_check.hpp"
#include "itcfn/losses.hpp"
#include "itcfn/metrics.hpp"
#include "itcfn/ops.hpp"
#include "itcfn/rng.hpp"
#include "itcfn/verify/oracles.hpp"

using namespace itcfn;

namespace {

Tensor probs_of(const std::vector<double>& p1) {
    std::vector<double> v;
    for (double p : p1) {
        v.push_back(1.0 - p);
        v.push_back(p);
    }
    return Tensor::from_data({p1.size(), 2}, v);
}

}  // namespace

TEST(FocalLoss, GammaZeroIsCrossEntropy) {
    PrecisionScope wide(Precision::Float64);
    Rng rng(1);
    std::vector<double> p1(12);
    std::vector<int> y(12);
    for (std::size_t i = 0; i < 12; ++i) {
        p1[i] = rng.uniform(0.01, 0.99);
        y[i] = static_cast<int>(i % 2);
    }
    double ce = 0.0;
    for (std::size_t i = 0; i < 12; ++i) ce -= std::log(y[i] == 1 ? p1[i] : 1.0 - p1[i]);
    ce /= 12.0;
    EXPECT_NEAR(loss::focal_loss(probs_of(p1), y, 0.0, {1.0, 1.0}).item(), ce, 1e-7);
}

TEST(FocalLoss, CertainCorrectPredictionsGiveZero) {
    EXPECT_EQ(loss::focal_loss(probs_of({1.0, 0.0, 1.0}), {1, 0, 1}, 2.0, {1.0, 1.0}).item(), 0.0);
    EXPECT_EQ(loss::focal_loss(probs_of({1.0, 0.0}), {1, 0}, 0.0, {1.0, 1.0}).item(), 0.0);
}

TEST(FocalLoss, HandValueForSingleSample) {
    PrecisionScope wide(Precision::Float64);
    const double v = loss::focal_loss(probs_of({0.9}), {1}, 2.0, {1.0, 1.0}).item();
    EXPECT_NEAR(v, 0.01 * -std::log(0.9), 1e-15);
    EXPECT_NEAR(v, 1.0536e-3, 1e-7);
}

TEST(FocalLoss, MonotoneDecreasingInTrueClassProbability) {
    double prev = INFINITY;
    for (double p = 0.05; p < 1.0; p += 0.05) {
        const double v = loss::focal_loss(probs_of({p, 0.3}), {1, 0}, 2.0, {0.8, 1.3}).item();
        EXPECT_LT(v, prev);
        prev = v;
    }
}

TEST(FocalLoss, RejectsInvalidInput) {
    EXPECT_THROW(loss::focal_loss(Tensor::from_data({1, 2}, {-0.1, 1.1}), {1}, 2.0, {1, 1}), std::invalid_argument);
    EXPECT_THROW(loss::focal_loss(probs_of({0.5}), {2}, 2.0, {1, 1}), std::invalid_argument);
    EXPECT_THROW(loss::focal_loss(probs_of({0.5}), {1, 0}, 2.0, {1, 1}), std::invalid_argument);
}

TEST(FocalLoss, InverseFrequencyAlpha) {
    const auto a = loss::inverse_frequency_alpha({0, 0, 0, 1});
    EXPECT_DOUBLE_EQ(a[0], 4.0 / 6.0);
    EXPECT_DOUBLE_EQ(a[1], 2.0);
    EXPECT_THROW(loss::inverse_frequency_alpha({1, 1}), std::invalid_argument);
}

TEST(SdmLoss, ZeroWhenDistributionsMatch) {
    // All labels equal gives uniform q; a constant cosine matrix gives
    // uniform p in both directions.
    const Tensor a = Tensor::from_data({2, 2}, {1.0, 0.3, 2.0, 0.6});
    const Tensor b = Tensor::from_data({2, 2}, {0.5, 0.5, 0.5, 0.5});
    EXPECT_NEAR(loss::sdm_loss(a, b, {0, 0}, 0.1, 1e-8).item(), 0.0, 1e-7);
}

TEST(SdmLoss, NonNegativeOnRandomInputs) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.below(7);
        std::vector<int> y(n);
        for (auto& v : y) v = static_cast<int>(rng.below(2));
        const double l = loss::sdm_loss(normal_tensor({n, 5}, 1.0, rng), normal_tensor({n, 5}, 1.0, rng), y, 0.1, 1e-8).item();
        EXPECT_GE(l, -1e-7);
        EXPECT_TRUE(std::isfinite(l));
    }
}

TEST(SdmLoss, MatchesHandComputedKl) {
    PrecisionScope wide(Precision::Float64);
    const double t1 = 0.3, t2 = 2.0, tau = 0.5, eps = 1e-8;
    const Tensor a = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 2.0});
    const Tensor b = Tensor::from_data({2, 2}, {std::cos(t1), std::sin(t1), 3 * std::cos(t2), 3 * std::sin(t2)});
    // cos(a_i, b_j) = cos(angle_i - theta_j) with angle_1 = 0, angle_2 = pi/2.
    const double pi2 = std::acos(0.0);
    const double c[2][2] = {{std::cos(t1), std::cos(t2)}, {std::cos(pi2 - t1), std::cos(pi2 - t2)}};
    const double q_same = (1 + eps) / (1 + 2 * eps), q_diff = eps / (1 + 2 * eps);
    auto kl_rows = [&](bool transpose) {
        double total = 0.0;
        for (int i = 0; i < 2; ++i) {
            const double s0 = (transpose ? c[0][i] : c[i][0]) / tau, s1 = (transpose ? c[1][i] : c[i][1]) / tau;
            const double p0 = std::exp(s0) / (std::exp(s0) + std::exp(s1)), p1 = 1 - p0;
            const double q0 = i == 0 ? q_same : q_diff, q1 = i == 1 ? q_same : q_diff;
            total += p0 * std::log(p0 / q0) + p1 * std::log(p1 / q1);
        }
        return total / 2.0;
    };
    EXPECT_NEAR(loss::sdm_loss(a, b, {0, 1}, tau, eps).item(), kl_rows(false) + kl_rows(true), 1e-5);
}

TEST(SdmLoss, InvariantToPositiveRescalingOfOneRow) {
    Rng rng(3);
    const Tensor a = normal_tensor({4, 6}, 1.0, rng), b = normal_tensor({4, 6}, 1.0, rng);
    std::vector<double> scaled(a.data().begin(), a.data().end());
    for (std::size_t j = 0; j < 6; ++j) scaled[2 * 6 + j] *= 7.5;
    const std::vector<int> y = {0, 1, 1, 0};
    EXPECT_NEAR(loss::sdm_loss(a, b, y, 0.1, 1e-8).item(),
                loss::sdm_loss(Tensor::from_data({4, 6}, scaled), b, y, 0.1, 1e-8).item(), 1e-5);
}

TEST(SdmLoss, Errors) {
    EXPECT_THROW(loss::sdm_loss(Tensor::zeros({2, 3}), Tensor::full({2, 3}, 1.0), {0, 1}, 0.1, 1e-8), std::invalid_argument);
    EXPECT_THROW(loss::sdm_loss(Tensor::full({1, 3}, 1.0), Tensor::full({1, 3}, 1.0), {0}, 0.1, 1e-8), std::invalid_argument);
    EXPECT_THROW(loss::sdm_loss(Tensor::full({2, 3}, 1.0), Tensor::full({2, 4}, 1.0), {0, 1}, 0.1, 1e-8), std::invalid_argument);
}

TEST(TripleLoss, EndpointsAndHandValue) {
    const Tensor a = Tensor::scalar(0.2), b = Tensor::scalar(0.4), c = Tensor::scalar(0.6);
    PrecisionScope wide(Precision::Float64);
    const Tensor a64 = Tensor::scalar(0.2), b64 = Tensor::scalar(0.4), c64 = Tensor::scalar(0.6);
    EXPECT_EQ(loss::triple_loss(a64, b64, c64, 1.0).item(), (0.2 + 0.4) / 2);
    EXPECT_EQ(loss::triple_loss(a64, b64, c64, 0.0).item(), 0.6);
    EXPECT_NEAR(loss::triple_loss(a64, b64, c64, 0.5).item(), 0.45, 1e-12);
    EXPECT_THROW(loss::triple_loss(a, b, c, 1.5), std::invalid_argument);
    EXPECT_THROW(loss::triple_loss(a, b, c, -0.1), std::invalid_argument);
}

TEST(TotalLoss, EndpointsAndLinearity) {
    PrecisionScope wide(Precision::Float64);
    const Tensor f = Tensor::scalar(0.5), t = Tensor::scalar(0.25);
    EXPECT_EQ(loss::total_loss(f, t, 0.0).item(), 0.5);
    EXPECT_EQ(loss::total_loss(f, t, 1.0).item(), 0.75);
    const double g1 = loss::total_loss(f, t, 0.3).item() - 0.5;
    const double g2 = loss::total_loss(f, t, 0.6).item() - 0.5;
    EXPECT_NEAR(g2, 2 * g1, 1e-12);
    EXPECT_THROW(loss::total_loss(f, t, -1.0), std::invalid_argument);
}

TEST(AffineLosses, MatchIndependentArithmetic) {
    PrecisionScope wide(Precision::Float64);
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
        const double x = rng.uniform(0, 3), y = rng.uniform(0, 3), z = rng.uniform(0, 3), lam = rng.uniform(), al = rng.uniform(0, 2);
        const double tri = loss::triple_loss(Tensor::scalar(x), Tensor::scalar(y), Tensor::scalar(z), lam).item();
        EXPECT_NEAR(tri, lam * (x + y) / 2 + (1 - lam) * z, 1e-12);
        EXPECT_NEAR(loss::total_loss(Tensor::scalar(x), Tensor::scalar(tri), al).item(), x + al * tri, 1e-12);
    }
}

TEST(LossGradCheck, EachLossThroughFeatureGenerator) {
    Rng rng(5);
    Tensor w1 = normal_tensor({6, 4}, 0.7, rng), w2 = normal_tensor({6, 4}, 0.7, rng), w3 = normal_tensor({6, 4}, 0.7, rng);
    Tensor wc = normal_tensor({2, 6}, 0.7, rng);
    const Tensor x = normal_tensor({5, 4}, 1.0, rng);
    const std::vector<int> y = {0, 1, 1, 0, 1};
    auto feat = [&](const Tensor& w) { return ops::tanh(ops::linear(x, w, Tensor())); };
    auto sdm = [&](const Tensor& a, const Tensor& b) { return loss::sdm_loss(feat(a), feat(b), y, 0.1, 1e-8); };
    auto focal = [&] { return loss::focal_loss(ops::softmax(ops::linear(feat(w1), wc, Tensor()), 1), y, 2.0, {1.25, 0.8333}); };
    auto triple = [&] { return loss::triple_loss(sdm(w1, w3), sdm(w2, w3), sdm(w1, w2), 0.5); };
    const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"focal", focal},
        {"sdm", [&] { return sdm(w1, w2); }},
        {"triple", triple},
        {"total", [&] { return loss::total_loss(focal(), triple(), 0.1); }},
    };
    for (const auto& [name, f] : cases) {
        const auto r = grad_check_params(f, {w1, w2, w3, wc}, 1e-3);
        EXPECT_LT(r.max_rel_error, 1e-2) << name;
    }
}

TEST(Confusion, PerfectPredictions) {
    const auto c = metrics::confusion_metrics({1, 0, 1, 0}, {1, 0, 1, 0});
    EXPECT_EQ(c.acc, 1.0);
    EXPECT_EQ(c.sen, 1.0);
    EXPECT_EQ(c.spe, 1.0);
    EXPECT_EQ(c.f1, 1.0);
}

TEST(Confusion, AllNegativePredictor) {
    const auto c = metrics::confusion_metrics({0, 0, 0, 0}, {1, 1, 0, 0});
    EXPECT_EQ(c.acc, 0.5);
    EXPECT_EQ(c.sen, 0.0);
    EXPECT_EQ(c.spe, 1.0);
    EXPECT_EQ(c.f1, 0.0);
}

TEST(Confusion, HandCountedMatrix) {
    const auto c = metrics::confusion_metrics({1, 1, 0, 0}, {1, 0, 1, 0});
    EXPECT_EQ(c.tp, 1u);
    EXPECT_EQ(c.fp, 1u);
    EXPECT_EQ(c.fn, 1u);
    EXPECT_EQ(c.tn, 1u);
    EXPECT_EQ(c.acc, 0.5);
    EXPECT_EQ(c.sen, 0.5);
    EXPECT_EQ(c.spe, 0.5);
    EXPECT_EQ(c.f1, 0.5);
    EXPECT_EQ(c.acc, static_cast<double>(c.tp + c.tn) / 4.0);
}

TEST(Confusion, ZeroDenominatorsAreFlagged) {
    const auto c = metrics::confusion_metrics({0, 0}, {0, 0});
    EXPECT_EQ(c.sen, 0.0);
    EXPECT_EQ(c.f1, 0.0);
    EXPECT_EQ(c.undefined, (std::vector<std::string>{"sen", "f1"}));
    EXPECT_THROW(metrics::confusion_metrics({}, {}), std::invalid_argument);
    EXPECT_THROW(metrics::confusion_metrics({1}, {1, 0}), std::invalid_argument);
}

TEST(Auc, Examples) {
    EXPECT_EQ(metrics::auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
    EXPECT_EQ(metrics::auc({0.4, 0.4, 0.4, 0.4}, {0, 1, 0, 1}), 0.5);
    EXPECT_THROW(metrics::auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
}

TEST(Auc, MatchesPairwiseOracleExactly) {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> s(30);
        std::vector<int> y(30);
        for (std::size_t i = 0; i < 30; ++i) {
            s[i] = std::round(rng.uniform() * 10.0) / 10.0;  // coarse grid forces ties
            y[i] = static_cast<int>(i % 3 == 0);
        }
        EXPECT_EQ(metrics::auc(s, y), oracle::pairwise_auc(s, y));
    }
}

TEST(Auc, Properties) {
    Rng rng(7);
    std::vector<double> s(40), neg(40), mono(40);
    std::vector<int> y(40);
    for (std::size_t i = 0; i < 40; ++i) {
        s[i] = std::round(rng.normal() * 4.0) / 4.0;
        y[i] = static_cast<int>(rng.below(2));
        neg[i] = -s[i];
        mono[i] = std::exp(3.0 * s[i]) + 1.0;
    }
    EXPECT_EQ(metrics::auc(s, y) + metrics::auc(neg, y), 1.0);
    EXPECT_EQ(metrics::auc(mono, y), metrics::auc(s, y));
    std::vector<std::size_t> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<double> ps(40);
    std::vector<int> py(40);
    for (std::size_t i = 0; i < 40; ++i) ps[i] = s[perm[i]], py[i] = y[perm[i]];
    EXPECT_EQ(metrics::auc(ps, py), metrics::auc(s, y));
    const auto pred = metrics::threshold(s, 0.0);
    std::vector<int> ppred(40);
    for (std::size_t i = 0; i < 40; ++i) ppred[i] = pred[perm[i]];
    const auto a = metrics::confusion_metrics(pred, y), b = metrics::confusion_metrics(ppred, py);
    EXPECT_EQ(a.acc, b.acc);
    EXPECT_EQ(a.f1, b.f1);
}
