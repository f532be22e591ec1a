#include "sctdet/gradcheck.hpp"

#include <cmath>

namespace sctdet {

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> theta, double eps) {
    if (eps <= 0.0) throw ShapeError("finite_diff_grad: eps must be positive");
    std::vector<double> grad(theta.size(), 0.0);
    for (size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + eps;
        const double hi = f(theta);
        theta[i] = saved - eps;
        const double lo = f(theta);
        theta[i] = saved;
        if (!std::isfinite(hi) || !std::isfinite(lo))
            throw NumericError("finite_diff_grad: objective returned a non-finite value");
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    return grad;
}

double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                     double floor) {
    if (analytic.size() != numeric.size())
        throw ShapeError("max_rel_error: vector lengths differ");
    double worst = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({floor, std::abs(analytic[i]), std::abs(numeric[i])});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

}  // namespace sctdet
