#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "caries/autograd/tensor.hpp"

namespace caries::ag {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Compares the analytic gradient of scalar `f` at `x` with central
/// differences (f(x+eps) - f(x-eps)) / 2eps for every element of `x`.
/// `x` must be a leaf; its requires_grad flag is set for the duration.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps = 1e-5,
                           double floor = 1e-6);

/// Same comparison for selected elements of a tensor captured inside
/// `loss` (typically a model parameter).
GradCheckResult grad_check_elements(const std::function<Tensor()>& loss, Tensor param,
                                    const std::vector<std::size_t>& elements, double eps = 1e-5,
                                    double floor = 1e-6);

}  // namespace caries::ag
