#include "sctdet/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace sctdet {

Matrix::Matrix(int r, int c, double fill) : rows(r), cols(c) {
    if (r <= 0 || c <= 0) {
        throw ShapeError("Matrix: dimensions must be positive, got " + std::to_string(r) + "x" +
                         std::to_string(c));
    }
    data.assign(static_cast<size_t>(r) * c, fill);
}

void ensure_finite(const Matrix& m, const char* what) {
    for (double v : m.data) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(what) + ": non-finite entry");
        }
    }
}

static void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols == b.rows, "matmul: inner dimensions differ (" + std::to_string(a.cols) +
                                  " vs " + std::to_string(b.rows) + ")");
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(k) * b.cols];
            double* orow = &out.data[static_cast<size_t>(i) * out.cols];
            for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    ensure_finite(out, "matmul");
    return out;
}

Matrix transpose(const Matrix& x) {
    Matrix out(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out(j, i) = x(i, j);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require(a.same_shape(b), "add: shape mismatch");
    Matrix out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    ensure_finite(out, "add");
    return out;
}

Matrix scalar_scale_add(double lambda, const Matrix& x, const Matrix& y) {
    if (lambda < 0.0) throw ShapeError("scalar_scale_add: lambda must be nonnegative");
    require(x.same_shape(y), "scalar_scale_add: shape mismatch");
    Matrix out = y;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += lambda * x.data[i];
    ensure_finite(out, "scalar_scale_add");
    return out;
}

Matrix scale(const Matrix& x, double s) {
    Matrix out = x;
    for (double& v : out.data) v *= s;
    ensure_finite(out, "scale");
    return out;
}

Matrix concat_rows(const std::vector<Matrix>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    int cols = parts.front().cols;
    int rows = 0;
    for (const Matrix& p : parts) {
        require(p.cols == cols, "concat_rows: column counts differ");
        rows += p.rows;
    }
    Matrix out(rows, cols);
    size_t off = 0;
    for (const Matrix& p : parts) {
        std::copy(p.data.begin(), p.data.end(), out.data.begin() + off);
        off += p.data.size();
    }
    return out;
}

Matrix concat_columns(const std::vector<Matrix>& parts) {
    require(!parts.empty(), "concat_columns: no inputs");
    int rows = parts.front().rows;
    int cols = 0;
    for (const Matrix& p : parts) {
        require(p.rows == rows, "concat_columns: row counts differ");
        cols += p.cols;
    }
    Matrix out(rows, cols);
    for (int i = 0; i < rows; ++i) {
        int at = 0;
        for (const Matrix& p : parts) {
            for (int j = 0; j < p.cols; ++j) out(i, at + j) = p(i, j);
            at += p.cols;
        }
    }
    return out;
}

Matrix row_softmax(const Matrix& x) {
    Matrix out(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        double mx = x(i, 0);
        for (int j = 1; j < x.cols; ++j) mx = std::max(mx, x(i, j));
        double sum = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            const double e = std::exp(x(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < x.cols; ++j) out(i, j) /= sum;
    }
    ensure_finite(out, "row_softmax");
    return out;
}

Matrix row_softmax_backward(const Matrix& y, const Matrix& upstream) {
    require(y.same_shape(upstream), "row_softmax_backward: shape mismatch");
    Matrix dx(y.rows, y.cols);
    for (int i = 0; i < y.rows; ++i) {
        double dot = 0.0;
        for (int j = 0; j < y.cols; ++j) dot += upstream(i, j) * y(i, j);
        for (int j = 0; j < y.cols; ++j) dx(i, j) = y(i, j) * (upstream(i, j) - dot);
    }
    ensure_finite(dx, "row_softmax_backward");
    return dx;
}

Matrix masked_row_softmax(const Matrix& x, const Matrix& mask) {
    require(x.same_shape(mask), "masked_row_softmax: shape mismatch");
    Matrix out(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        bool any = false;
        double mx = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            if (mask(i, j) == 0.0) continue;
            mx = any ? std::max(mx, x(i, j)) : x(i, j);
            any = true;
        }
        if (!any) {
            // all entries masked out: uniform fallback over the full row
            for (int j = 0; j < x.cols; ++j) out(i, j) = 1.0 / x.cols;
            continue;
        }
        double sum = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            if (mask(i, j) == 0.0) continue;
            const double e = std::exp(x(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < x.cols; ++j)
            if (mask(i, j) != 0.0) out(i, j) /= sum;
    }
    ensure_finite(out, "masked_row_softmax");
    return out;
}

Matrix masked_row_softmax_backward(const Matrix& y, const Matrix& mask, const Matrix& upstream) {
    require(y.same_shape(mask) && y.same_shape(upstream),
            "masked_row_softmax_backward: shape mismatch");
    Matrix dx(y.rows, y.cols);
    for (int i = 0; i < y.rows; ++i) {
        bool any = false;
        for (int j = 0; j < y.cols; ++j) any = any || mask(i, j) != 0.0;
        if (!any) continue;  // uniform fallback row: constant in x, zero gradient
        double dot = 0.0;
        for (int j = 0; j < y.cols; ++j)
            if (mask(i, j) != 0.0) dot += upstream(i, j) * y(i, j);
        for (int j = 0; j < y.cols; ++j)
            if (mask(i, j) != 0.0) dx(i, j) = y(i, j) * (upstream(i, j) - dot);
    }
    ensure_finite(dx, "masked_row_softmax_backward");
    return dx;
}

Matrix soft_threshold(const Matrix& x, double tau) {
    if (tau < 0.0) throw ShapeError("soft_threshold: tau must be nonnegative");
    Matrix out(x.rows, x.cols);
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double v = x.data[i];
        const double mag = std::abs(v) - tau;
        out.data[i] = mag > 0.0 ? (v < 0.0 ? -mag : mag) : 0.0;
    }
    ensure_finite(out, "soft_threshold");
    return out;
}

Matrix soft_threshold_backward(const Matrix& out, const Matrix& upstream) {
    require(out.same_shape(upstream), "soft_threshold_backward: shape mismatch");
    Matrix dx(out.rows, out.cols);
    for (size_t i = 0; i < out.data.size(); ++i)
        dx.data[i] = out.data[i] != 0.0 ? upstream.data[i] : 0.0;
    return dx;
}

Matrix global_average_pool(const Matrix& x) {
    Matrix out(1, x.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out(0, j) += x(i, j);
    for (int j = 0; j < x.cols; ++j) out(0, j) /= x.rows;
    ensure_finite(out, "global_average_pool");
    return out;
}

int count_nonzero(const Matrix& x) {
    int n = 0;
    for (double v : x.data) n += v != 0.0;
    return n;
}

Grid::Grid(int h_, int w_, int c_, double fill) : h(h_), w(w_), c(c_) {
    if (h_ <= 0 || w_ <= 0 || c_ <= 0) throw ShapeError("Grid: dimensions must be positive");
    v.assign(static_cast<size_t>(h_) * w_ * c_, fill);
}

GridMaxPool grid_max_pool(const Grid& g, int kernel) {
    if (kernel != 2 && kernel != 3) throw ShapeError("grid_max_pool: kernel must be 2 or 3");
    const int oh = g.h / kernel;
    const int ow = g.w / kernel;
    require(oh >= 1 && ow >= 1, "grid_max_pool: grid smaller than kernel");
    GridMaxPool res;
    res.pooled = Grid(oh, ow, g.c);
    res.argmax.assign(res.pooled.v.size(), -1);
    for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
            for (int ch = 0; ch < g.c; ++ch) {
                double best = 0.0;
                int best_cell = -1;
                for (int di = 0; di < kernel; ++di) {
                    for (int dj = 0; dj < kernel; ++dj) {
                        const int si = i * kernel + di;
                        const int sj = j * kernel + dj;
                        const double val = g.at(si, sj, ch);
                        if (best_cell < 0 || val > best) {
                            best = val;
                            best_cell = si * g.w + sj;
                        }
                    }
                }
                res.pooled.at(i, j, ch) = best;
                res.argmax[(static_cast<size_t>(i) * ow + j) * g.c + ch] = best_cell;
            }
        }
    }
    return res;
}

// Per-axis weights of source bins overlapping each target bin.
static std::vector<std::vector<std::pair<int, double>>> axis_weights(int src, int dst) {
    std::vector<std::vector<std::pair<int, double>>> w(dst);
    const double step = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        const double lo = i * step;
        const double hi = (i + 1) * step;
        for (int s = static_cast<int>(lo); s < src && s < hi; ++s) {
            const double overlap = std::min(hi, static_cast<double>(s + 1)) -
                                   std::max(lo, static_cast<double>(s));
            if (overlap > 1e-12) w[i].push_back({s, overlap / step});
        }
    }
    return w;
}

Grid resample_average(const Grid& g, int out_h, int out_w) {
    require(out_h >= 1 && out_w >= 1, "resample_average: bad output shape");
    const auto wi = axis_weights(g.h, out_h);
    const auto wj = axis_weights(g.w, out_w);
    Grid out(out_h, out_w, g.c);
    for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
            for (const auto& [si, fi] : wi[i]) {
                for (const auto& [sj, fj] : wj[j]) {
                    const double f = fi * fj;
                    for (int ch = 0; ch < g.c; ++ch) out.at(i, j, ch) += f * g.at(si, sj, ch);
                }
            }
        }
    }
    return out;
}

}  // namespace sctdet
