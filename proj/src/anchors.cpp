#include "sctdet/anchors.hpp"

#include <algorithm>
#include <cmath>

namespace sctdet {

double iou(const Box& a, const Box& b) {
    if (!a.valid() || !b.valid()) throw ShapeError("iou: degenerate box");
    const double ix = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
    const double iy = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

void AnchorConfig::validate() const {
    if (scale_grid_sizes.empty()) throw ShapeError("AnchorConfig: no scales");
    for (size_t i = 0; i < scale_grid_sizes.size(); ++i) {
        if (scale_grid_sizes[i] <= 0) throw ShapeError("AnchorConfig: grid sizes must be positive");
        if (i > 0 && scale_grid_sizes[i] >= scale_grid_sizes[i - 1])
            throw ShapeError("AnchorConfig: grid sizes must be strictly decreasing");
    }
    if (aspect_ratios.empty()) throw ShapeError("AnchorConfig: no aspect ratios");
    for (double r : aspect_ratios)
        if (r <= 0.0) throw ShapeError("AnchorConfig: ratios must be positive");
    if (box_size_min <= 0.0 || box_size_max < box_size_min)
        throw ShapeError("AnchorConfig: bad box size range");
}

PriorLayout AnchorConfig::layout() const {
    validate();
    std::vector<ScaleSpec> specs;
    for (int g : scale_grid_sizes)
        specs.push_back(ScaleSpec{g, static_cast<int>(aspect_ratios.size())});
    return PriorLayout::from_scales(specs);
}

Box Anchor::to_box() const {
    return Box{cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0};
}

std::vector<Anchor> generate_anchors(const AnchorConfig& cfg) {
    cfg.validate();
    const PriorLayout lay = cfg.layout();
    std::vector<Anchor> anchors(lay.total_rows);
    const int n_scales = static_cast<int>(cfg.scale_grid_sizes.size());
    for (int k = 0; k < n_scales; ++k) {
        const int g = cfg.scale_grid_sizes[k];
        const double s = n_scales == 1 ? cfg.box_size_min
                                       : cfg.box_size_min + (cfg.box_size_max - cfg.box_size_min) *
                                                                k / (n_scales - 1.0);
        for (int h = 0; h < g; ++h) {
            for (int w = 0; w < g; ++w) {
                for (int m = 0; m < static_cast<int>(cfg.aspect_ratios.size()); ++m) {
                    const double r = cfg.aspect_ratios[m];
                    Anchor a;
                    a.cx = (w + 0.5) / g;
                    a.cy = (h + 0.5) / g;
                    a.w = s * std::sqrt(r);
                    a.h = s / std::sqrt(r);
                    anchors[lay.row(k, m, h, w)] = a;
                }
            }
        }
    }
    return anchors;
}

int anchor_count(const AnchorConfig& cfg) {
    cfg.validate();
    int n = 0;
    for (int g : cfg.scale_grid_sizes) n += g * g;
    return n * static_cast<int>(cfg.aspect_ratios.size());
}

Box decode_box(const Anchor& a, const double* d) {
    const double cx = a.cx + d[0] * a.w;
    const double cy = a.cy + d[1] * a.h;
    const double w = a.w * std::exp(d[2]);
    const double h = a.h * std::exp(d[3]);
    Box b{cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0};
    b.xmin = std::clamp(b.xmin, 0.0, 1.0);
    b.ymin = std::clamp(b.ymin, 0.0, 1.0);
    b.xmax = std::clamp(b.xmax, 0.0, 1.0);
    b.ymax = std::clamp(b.ymax, 0.0, 1.0);
    return b;
}

void encode_box(const Anchor& a, const Box& b, double* d) {
    const double cx = (b.xmin + b.xmax) / 2.0;
    const double cy = (b.ymin + b.ymax) / 2.0;
    const double w = b.xmax - b.xmin;
    const double h = b.ymax - b.ymin;
    if (w <= 0.0 || h <= 0.0) throw ShapeError("encode_box: degenerate box");
    d[0] = (cx - a.cx) / a.w;
    d[1] = (cy - a.cy) / a.h;
    d[2] = std::log(w / a.w);
    d[3] = std::log(h / a.h);
}

}  // namespace sctdet
