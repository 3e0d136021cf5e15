#include "itcfn/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace itcfn::metrics {

namespace {

void check(const std::vector<int>& labels, const char* what) {
    for (int y : labels) {
        if (y != 0 && y != 1) throw std::invalid_argument(std::string(what) + " must be 0 or 1");
    }
}

double ratio(std::size_t num, std::size_t den, const char* name, std::vector<std::string>& undefined) {
    if (den == 0) {
        undefined.emplace_back(name);
        return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Confusion confusion_metrics(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.empty()) throw std::invalid_argument("confusion_metrics: empty input");
    if (predicted.size() != truth.size()) throw std::invalid_argument("confusion_metrics: length mismatch");
    check(predicted, "predicted labels");
    check(truth, "true labels");
    Confusion c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == 1) {
            (predicted[i] == 1 ? c.tp : c.fn)++;
        } else {
            (predicted[i] == 1 ? c.fp : c.tn)++;
        }
    }
    c.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(truth.size());
    c.sen = ratio(c.tp, c.tp + c.fn, "sen", c.undefined);
    c.spe = ratio(c.tn, c.tn + c.fp, "spe", c.undefined);
    c.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, "f1", c.undefined);
    return c;
}

double auc(const std::vector<double>& scores, const std::vector<int>& truth) {
    if (scores.size() != truth.size()) throw std::invalid_argument("auc: length mismatch");
    check(truth, "true labels");
    const std::size_t n_pos = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), 1));
    const std::size_t n_neg = truth.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc: both classes must be present");

    // Rank-sum form with midranks for ties; counts are exact in half units.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Twice the Mann-Whitney U statistic, as an integer.
    unsigned long long twice_u = 0;
    std::size_t negatives_below = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::size_t pos = 0, neg = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (truth[order[j]] == 1 ? pos : neg)++;
            ++j;
        }
        twice_u += 2ull * pos * negatives_below + static_cast<unsigned long long>(pos) * neg;
        negatives_below += neg;
        i = j;
    }
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<int> threshold(const std::vector<double>& positive_probs, double cut) {
    std::vector<int> out(positive_probs.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = positive_probs[i] >= cut ? 1 : 0;
    return out;
}

}  // namespace itcfn::metrics
