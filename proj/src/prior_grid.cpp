#include "sctdet/prior_grid.hpp"

namespace sctdet {

PriorLayout PriorLayout::from_scales(const std::vector<ScaleSpec>& scales) {
    if (scales.empty()) throw ShapeError("PriorLayout: no scales");
    PriorLayout layout;
    layout.scales = scales;
    layout.offsets.reserve(scales.size());
    int at = 0;
    for (const ScaleSpec& s : scales) {
        if (s.grid <= 0 || s.n_ratios <= 0)
            throw ShapeError("PriorLayout: grid and ratio counts must be positive");
        layout.offsets.push_back(at);
        at += s.grid * s.grid * s.n_ratios;
    }
    layout.total_rows = at;
    return layout;
}

int PriorLayout::row(int k, int m, int h, int w) const {
    const ScaleSpec& s = scales.at(k);
    if (m < 0 || m >= s.n_ratios || h < 0 || h >= s.grid || w < 0 || w >= s.grid)
        throw ShapeError("PriorLayout::row: index out of range");
    return offsets[k] + (h * s.grid + w) * s.n_ratios + m;
}

PriorLayout::Cell PriorLayout::cell_of(int r) const {
    if (r < 0 || r >= total_rows) throw ShapeError("PriorLayout::cell_of: row out of range");
    int k = static_cast<int>(scales.size()) - 1;
    while (offsets[k] > r) --k;
    const ScaleSpec& s = scales[k];
    int rel = r - offsets[k];
    const int m = rel % s.n_ratios;
    rel /= s.n_ratios;
    return Cell{k, m, rel / s.grid, rel % s.grid};
}

}  // namespace sctdet
