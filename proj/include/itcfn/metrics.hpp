#pragma once

#include <cstddef>
#include <string>
#include <vector>

// Binary classification metrics with pMCI (label 1) as the positive class.
namespace itcfn::metrics {

struct Confusion {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    double acc = 0.0, sen = 0.0, spe = 0.0, f1 = 0.0;
    // Names of metrics whose denominator was zero; those are reported as 0.
    std::vector<std::string> undefined;
};

Confusion confusion_metrics(const std::vector<int>& predicted, const std::vector<int>& truth);

// Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly,
// ties counted one half. Throws when either class is absent.
double auc(const std::vector<double>& scores, const std::vector<int>& truth);

// Labels from positive-class probabilities with the 0.5 threshold.
std::vector<int> threshold(const std::vector<double>& positive_probs, double cut = 0.5);

}  // namespace itcfn::metrics
