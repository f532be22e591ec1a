// Prior (anchor) box generation and SSD-style box offset coding.
#pragma once

#include <vector>

#include "sctdet/box.hpp"
#include "sctdet/prior_grid.hpp"

namespace sctdet {

struct AnchorConfig {
    std::vector<int> scale_grid_sizes = {16, 8, 4, 2};      // strictly decreasing
    std::vector<double> aspect_ratios = {1.0, 2.0, 0.5};    // shared across scales
    double box_size_min = 0.15;                             // fraction of image side
    double box_size_max = 0.5;

    void validate() const;
    PriorLayout layout() const;
};

// Center-form anchor, normalized to [0, 1] image coordinates.
struct Anchor {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

    Box to_box() const;
};

// One anchor per (scale cell x ratio), ordered by the PriorLayout row map.
// Sizes interpolate box_size_min -> box_size_max across scales; ratio r gives
// w = s*sqrt(r), h = s/sqrt(r).
std::vector<Anchor> generate_anchors(const AnchorConfig& cfg);

// Anchor count by the closed-form formula (cross-checked against enumeration
// in the tests).
int anchor_count(const AnchorConfig& cfg);

// Standard SSD decode: center shifted by delta * anchor size, log-scaled
// width/height, clipped to [0, 1].
Box decode_box(const Anchor& a, const double* delta4);
// Inverse of decode_box (without the clipping).
void encode_box(const Anchor& a, const Box& b, double* delta4);

}  // namespace sctdet
