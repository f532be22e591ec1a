#include "sctdet/linear.hpp"

#include <cmath>

namespace sctdet {

static void validate(int in_dim, int out_dim, bool residual) {
    if (in_dim <= 0 || out_dim <= 0) throw ShapeError("LinearMap: dimensions must be positive");
    if (residual && in_dim != out_dim)
        throw ShapeError("LinearMap: residual requires in_dim == out_dim");
}

LinearMap make_linear(int in_dim, int out_dim, bool residual, std::mt19937_64& rng) {
    validate(in_dim, out_dim, residual);
    LinearMap layer;
    layer.in_dim = in_dim;
    layer.out_dim = out_dim;
    layer.residual = residual;
    layer.weight = Matrix(in_dim, out_dim);
    layer.bias = Matrix(1, out_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : layer.weight.data) v = dist(rng);
    return layer;
}

LinearMap make_zero_linear(int in_dim, int out_dim, bool residual) {
    validate(in_dim, out_dim, residual);
    LinearMap layer;
    layer.in_dim = in_dim;
    layer.out_dim = out_dim;
    layer.residual = residual;
    layer.weight = Matrix(in_dim, out_dim);
    layer.bias = Matrix(1, out_dim);
    return layer;
}

Matrix linear_forward(const LinearMap& layer, const Matrix& x) {
    if (x.cols != layer.in_dim)
        throw ShapeError("linear_forward: input has " + std::to_string(x.cols) +
                         " cols, layer expects " + std::to_string(layer.in_dim));
    Matrix y = matmul(x, layer.weight);
    for (int i = 0; i < y.rows; ++i)
        for (int j = 0; j < y.cols; ++j) y(i, j) += layer.bias(0, j);
    if (layer.residual) {
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
    }
    ensure_finite(y, "linear_forward");
    return y;
}

LinearGrads linear_backward(const LinearMap& layer, const Matrix& x, const Matrix& upstream) {
    if (x.cols != layer.in_dim || upstream.cols != layer.out_dim || upstream.rows != x.rows)
        throw ShapeError("linear_backward: shapes inconsistent with forward");
    LinearGrads g;
    g.x = matmul(upstream, transpose(layer.weight));
    if (layer.residual) {
        for (size_t i = 0; i < g.x.data.size(); ++i) g.x.data[i] += upstream.data[i];
    }
    g.weight = matmul(transpose(x), upstream);
    g.bias = Matrix(1, layer.out_dim);
    for (int i = 0; i < upstream.rows; ++i)
        for (int j = 0; j < upstream.cols; ++j) g.bias(0, j) += upstream(i, j);
    return g;
}

}  // namespace sctdet
