// Dense row-major matrix kernels. Everything else in the project is built on
// these; all math is double precision and every public op checks that its
// result is finite.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sctdet {

// Shape/precondition violations.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite values produced or consumed by a numeric kernel.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // row-major, rows*cols entries

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0);

    double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    size_t size() const { return data.size(); }
};

// Throws NumericError if any entry of m is NaN or infinite.
void ensure_finite(const Matrix& m, const char* what);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& x);
Matrix add(const Matrix& a, const Matrix& b);
// lambda * x + y, the context fusion primitive. lambda must be >= 0.
Matrix scalar_scale_add(double lambda, const Matrix& x, const Matrix& y);
Matrix scale(const Matrix& x, double s);
Matrix concat_rows(const std::vector<Matrix>& parts);
Matrix concat_columns(const std::vector<Matrix>& parts);

// Row-wise softmax, stabilized by row-max subtraction.
Matrix row_softmax(const Matrix& x);
// dx for y = row_softmax(x) given y and dL/dy.
Matrix row_softmax_backward(const Matrix& y, const Matrix& upstream);

// Softmax restricted to mask!=0 entries; masked-out entries are exactly 0.
// A fully masked row falls back to the uniform distribution over all columns.
Matrix masked_row_softmax(const Matrix& x, const Matrix& mask);
Matrix masked_row_softmax_backward(const Matrix& y, const Matrix& mask, const Matrix& upstream);

// out_ij = sign(x_ij) * max(|x_ij| - tau, 0)
Matrix soft_threshold(const Matrix& x, double tau);
// Subgradient: passes upstream where the thresholded output is nonzero.
Matrix soft_threshold_backward(const Matrix& out, const Matrix& upstream);

// Column means as a 1 x cols matrix.
Matrix global_average_pool(const Matrix& x);

int count_nonzero(const Matrix& x);

// h x w x c grid, used for backbone feature maps and per-scale score maps.
struct Grid {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<double> v;  // (i*w + j)*c + ch

    Grid() = default;
    Grid(int h_, int w_, int c_, double fill = 0.0);

    double& at(int i, int j, int ch) { return v[(static_cast<size_t>(i) * w + j) * c + ch]; }
    double at(int i, int j, int ch) const { return v[(static_cast<size_t>(i) * w + j) * c + ch]; }
};

struct GridMaxPool {
    Grid pooled;
    // flat source cell index (i*w + j) per pooled element, indexed like pooled.v
    std::vector<int> argmax;
};

// 2-D max pooling with kernel == stride, kernel in {2, 3}. Partial windows at
// the grid edge are dropped.
GridMaxPool grid_max_pool(const Grid& g, int kernel);

// Area-weighted average resampling of a grid onto an out_h x out_w layout.
Grid resample_average(const Grid& g, int out_h, int out_w);

}  // namespace sctdet
