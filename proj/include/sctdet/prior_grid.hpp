// Layout of prior-box rows across spatial scales: the bijection between
// (scale, ratio, row, col) and a row index of the score matrix P.
#pragma once

#include <vector>

#include "sctdet/matrix.hpp"

namespace sctdet {

struct ScaleSpec {
    int grid = 0;      // the scale's feature map is grid x grid
    int n_ratios = 0;  // aspect ratios per cell
};

struct PriorLayout {
    std::vector<ScaleSpec> scales;
    std::vector<int> offsets;  // first row of each scale block
    int total_rows = 0;        // D_p

    static PriorLayout from_scales(const std::vector<ScaleSpec>& scales);

    int num_scales() const { return static_cast<int>(scales.size()); }

    // (k, m, h, w) -> row in [0, D_p)
    int row(int k, int m, int h, int w) const;

    struct Cell {
        int scale, ratio, row, col;
    };
    Cell cell_of(int row) const;
};

}  // namespace sctdet
