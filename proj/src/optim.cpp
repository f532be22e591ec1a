#include "sctdet/optim.hpp"

namespace sctdet {

void sgd_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
              SgdState& state) {
    if (params.size() != grads.size()) throw ShapeError("sgd_step: param/grad count mismatch");
    if (state.momentum < 0.0 || state.momentum >= 1.0)
        throw ShapeError("sgd_step: momentum must be in [0, 1)");
    if (state.weight_decay < 0.0) throw ShapeError("sgd_step: weight_decay must be nonnegative");

    if (state.velocity.empty()) {
        state.velocity.reserve(params.size());
        for (const Matrix* p : params) state.velocity.emplace_back(p->rows, p->cols);
    }
    if (state.velocity.size() != params.size())
        throw ShapeError("sgd_step: state holds a different parameter count");

    for (size_t k = 0; k < params.size(); ++k) {
        Matrix& p = *params[k];
        const Matrix& g = *grads[k];
        Matrix& v = state.velocity[k];
        if (!p.same_shape(g) || !p.same_shape(v))
            throw ShapeError("sgd_step: parameter/gradient/buffer shape mismatch");
        for (size_t i = 0; i < p.data.size(); ++i) {
            const double eff = g.data[i] + state.weight_decay * p.data[i];
            v.data[i] = state.momentum * v.data[i] + eff;
            p.data[i] -= state.learning_rate * v.data[i];
        }
        ensure_finite(p, "sgd_step");
    }
}

double LrSchedule::at(int iteration) const {
    double lr = base_lr;
    for (int d : decay_iters)
        if (iteration >= d) lr *= decay_factor;
    return lr;
}

}  // namespace sctdet
