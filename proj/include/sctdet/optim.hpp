// SGD with classic momentum and L2 weight decay folded into the gradient.
#pragma once

#include <vector>

#include "sctdet/matrix.hpp"

namespace sctdet {

struct SgdState {
    double learning_rate = 0.0;
    double momentum = 0.0;      // in [0, 1)
    double weight_decay = 0.0;  // nonnegative
    std::vector<Matrix> velocity;  // sized on first step, one buffer per parameter
};

// v <- momentum * v + (g + weight_decay * p); p <- p - lr * v.
// Parameter order must be stable across calls; buffer shapes are validated.
void sgd_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
              SgdState& state);

// Fixed-step decay: learning_rate * factor^(number of decay iterations passed).
struct LrSchedule {
    double base_lr = 0.0;
    std::vector<int> decay_iters;
    double decay_factor = 0.1;

    double at(int iteration) const;
};

}  // namespace sctdet
