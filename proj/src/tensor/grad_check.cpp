#include "itcfn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace itcfn {

namespace {

void validate_eps(double eps) {
    if (!(eps >= 1e-5 && eps <= 1e-2)) {
        throw std::invalid_argument("grad_check: eps " + std::to_string(eps) + " outside [1e-5, 1e-2]");
    }
}

double scalar_of(const Tensor& y) {
    if (y.numel() != 1) throw std::invalid_argument("grad_check: function output must be scalar, got " + shape_str(y.shape()));
    return y.item();
}

}  // namespace

GradCheckResult grad_check_params(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps,
                                  std::size_t max_per_tensor) {
    validate_eps(eps);
    PrecisionScope wide(Precision::Float64);

    std::vector<bool> saved_flags;
    for (auto& p : params) {
        saved_flags.push_back(p.requires_grad());
        p.zero_grad();
        p.set_requires_grad(true);
    }
    Tensor y;
    std::uint64_t base_trace = 0;
    {
        BranchTrace trace;
        y = f();
        base_trace = trace.value();
    }
    scalar_of(y);
    y.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& p : params) {
        if (p.has_grad()) {
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        } else {
            analytic.emplace_back(p.numel(), 0.0);
        }
        p.zero_grad();
    }

    GradCheckResult result;
    NoGradGuard no_grad;
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto data = params[t].mutable_data();
        const std::size_t step =
            max_per_tensor == 0 ? 1 : std::max<std::size_t>(1, (data.size() + max_per_tensor - 1) / max_per_tensor);
        for (std::size_t i = 0; i < data.size(); i += step) {
            const double orig = data[i];
            auto traced = [&](double v, std::uint64_t& h) {
                data[i] = v;
                BranchTrace trace;
                const double out = scalar_of(f());
                h = trace.value();
                return out;
            };
            std::uint64_t h_up = 0, h_down = 0;
            const double up = traced(orig + eps, h_up);
            const double down = traced(orig - eps, h_down);
            data[i] = orig;
            ++result.probed;
            if (h_up != base_trace || h_down != base_trace) {
                ++result.straddled;
                continue;
            }
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[t][i];
            const double err = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            if (!std::isfinite(err) || err > result.max_rel_error || result.probed == result.straddled + 1) {
                result.max_rel_error = std::isfinite(err) ? err : HUGE_VAL;
                result.worst_tensor = t;
                result.worst_index = i;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
    }
    for (std::size_t t = 0; t < params.size(); ++t) params[t].set_requires_grad(saved_flags[t]);
    return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
    Tensor probe = x.detach();
    return grad_check_params([&] { return f(probe); }, {probe}, eps);
}

}  // namespace itcfn
