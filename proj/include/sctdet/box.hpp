// Axis-aligned boxes, detections, and ground truth records shared by the
// detector and the evaluation code.
#pragma once

#include <vector>

#include "sctdet/matrix.hpp"

namespace sctdet {

struct Box {
    double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;

    double area() const { return (xmax - xmin) * (ymax - ymin); }
    bool valid() const { return xmin < xmax && ymin < ymax; }
};

// Intersection over union. Degenerate boxes are rejected.
double iou(const Box& a, const Box& b);

struct Detection {
    int class_id = 0;
    double confidence = 0.0;
    Box box;
};

struct GroundTruthBox {
    int class_id = 0;
    Box box;
    bool difficult = false;
};

}  // namespace sctdet
