// Detection metrics: greedy detection-to-truth matching, all-point
// interpolated average precision, mAP at one or many IoU thresholds.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sctdet/box.hpp"

namespace sctdet {

enum class MatchFlag { TP, FP, Ignored };

// Detections and truths must share one class. Detections are processed in
// confidence-descending order with a stable tie-break on input order; each
// one takes the highest-IoU unmatched truth at or above iou_thresh. A
// detection whose best admissible truth is marked difficult is ignored, and
// difficult truths do not count toward recall.
std::vector<MatchFlag> match_for_ap(const std::vector<Detection>& detections,
                                    const std::vector<GroundTruthBox>& truths, double iou_thresh);

// flags must be in confidence order (Ignored entries are skipped).
// num_truths counts non-difficult truths. Zero truths with zero counted
// detections -> nullopt (undefined); zero truths with detections -> 0.
std::optional<double> average_precision(const std::vector<MatchFlag>& flags, int num_truths);

struct ClassEval {
    std::optional<double> ap;
    int num_truths = 0;
};

struct MapResult {
    std::map<int, ClassEval> per_class;
    std::optional<double> map;  // mean over classes with >= 1 truth
};

MapResult map_at(const std::map<int, std::vector<Detection>>& detections_by_class,
                 const std::map<int, std::vector<GroundTruthBox>>& truths_by_class,
                 double iou_thresh);

// Per-image detections/truths, grouped by class internally.
struct EvalSample {
    std::vector<Detection> detections;
    std::vector<GroundTruthBox> truths;
};

struct MetricsReport {
    int split = 0;
    int shot = 0;
    unsigned long long seed = 0;
    std::map<int, double> per_class_ap;  // AP50, classes with >= 1 truth
    double map50 = 0.0;
    double map75 = 0.0;
    double map = 0.0;  // COCO style: mean over IoU 0.50:0.05:0.95
    std::optional<double> runtime_ms;

    std::string to_json() const;
    std::string to_csv() const;  // one row per class plus a summary row
};

MetricsReport evaluate_detections(const std::vector<EvalSample>& samples, int split, int shot,
                                  unsigned long long seed);

}  // namespace sctdet
