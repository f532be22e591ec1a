// Central finite differences, the oracle every hand-written backward pass is
// verified against.
#pragma once

#include <functional>
#include <vector>

#include "sctdet/matrix.hpp"

namespace sctdet {

// (f(theta + eps*e_i) - f(theta - eps*e_i)) / (2*eps) per coordinate.
// Throws NumericError if f returns a non-finite value.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> theta, double eps = 1e-5);

// max_i |a_i - n_i| / max(floor, |a_i|, |n_i|). The floor absorbs finite
// difference roundoff on coordinates whose true gradient is ~0.
double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                     double floor = 1e-6);

}  // namespace sctdet
