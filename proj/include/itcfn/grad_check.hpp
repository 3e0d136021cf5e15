#pragma once

#include <functional>
#include <vector>

#include "itcfn/tensor.hpp"

namespace itcfn {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t probed = 0;
    // Probes whose +eps or -eps evaluation changed a branch of a non-smooth
    // op; central differences are meaningless there and they are excluded.
    std::size_t straddled = 0;
};

// Compares the reverse-mode gradient of a scalar function against central
// differences, element by element:
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// Runs in Float64 precision. eps must lie in [1e-5, 1e-2]. Elements whose
// probes cross a kink (see BranchTrace) are counted in `straddled` and left
// out of the maximum.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

// Same check for a closure over existing tensors (typically model
// parameters). Their values are perturbed in place and restored.
// max_per_tensor > 0 limits the finite-difference probes to that many evenly
// strided elements of each tensor; the analytic gradient is still complete.
GradCheckResult grad_check_params(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps,
                                  std::size_t max_per_tensor = 0);

}  // namespace itcfn
