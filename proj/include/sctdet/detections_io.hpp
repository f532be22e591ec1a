// Line-delimited JSON persistence for detections.
#pragma once

#include <string>
#include <vector>

#include "sctdet/box.hpp"

namespace sctdet {

struct ImageDetection {
    int image_id = 0;
    Detection det;
};

// One JSON object per line: {image_id, class_id, confidence, box}.
// import(export(x)) == x, bit for bit.
void export_detections(const std::vector<ImageDetection>& detections, const std::string& path);
std::vector<ImageDetection> import_detections(const std::string& path);

}  // namespace sctdet
