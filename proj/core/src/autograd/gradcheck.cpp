#include "caries/autograd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "caries/error.hpp"

namespace caries::ag {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
    return std::fabs(analytic - numeric) / denom;
}

GradCheckResult grad_check_elements(const std::function<Tensor()>& loss, Tensor param,
                                    const std::vector<std::size_t>& elements, double eps, double floor) {
    if (eps <= 0) throw ValueError("grad_check: eps must be positive");
    const bool was_tracking = param.requires_grad();
    param.set_requires_grad(true);
    param.zero_grad();
    Tensor y = loss();
    if (y.numel() != 1) throw ShapeError("grad_check: function must be scalar, got " + shape_str(y.shape()));
    y.backward();
    std::vector<double> analytic(param.numel(), 0.0);
    if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
    param.zero_grad();

    GradCheckResult result;
    NoGradGuard guard;
    auto data = param.mutable_data();
    for (std::size_t i : elements) {
        const double orig = data[i];
        data[i] = orig + eps;
        const double fp = loss().item();
        data[i] = orig - eps;
        const double fm = loss().item();
        data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err = relative_error(analytic[i], numeric, floor);
        if (err >= result.max_rel_error) {
            result = {err, i, analytic[i], numeric};
        }
    }
    param.set_requires_grad(was_tracking);
    return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps, double floor) {
    if (!x.is_leaf()) throw ValueError("grad_check: input must be a leaf tensor");
    std::vector<std::size_t> all(x.numel());
    std::iota(all.begin(), all.end(), 0);
    return grad_check_elements([&] { return f(x); }, x, all, eps, floor);
}

}  // namespace caries::ag
