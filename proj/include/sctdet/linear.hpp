// Fully-connected layer with an optional residual connection: y = xW + b (+ x).
#pragma once

#include <random>

#include "sctdet/matrix.hpp"

namespace sctdet {

struct LinearMap {
    int in_dim = 0;
    int out_dim = 0;
    Matrix weight;  // in_dim x out_dim
    Matrix bias;    // 1 x out_dim
    bool residual = false;
};

// Weight ~ Uniform(-1/sqrt(in_dim), +1/sqrt(in_dim)), bias zero.
LinearMap make_linear(int in_dim, int out_dim, bool residual, std::mt19937_64& rng);
// Weight and bias zero. Used where a layer must start as a no-op.
LinearMap make_zero_linear(int in_dim, int out_dim, bool residual = false);

Matrix linear_forward(const LinearMap& layer, const Matrix& x);

struct LinearGrads {
    Matrix x;       // n x in_dim
    Matrix weight;  // in_dim x out_dim
    Matrix bias;    // 1 x out_dim
};

LinearGrads linear_backward(const LinearMap& layer, const Matrix& x, const Matrix& upstream);

}  // namespace sctdet
