// Toy SSD-style detector: per-scale linear patch embeddings with a tanh
// nonlinearity feed per-scale classifier (object + background) and box
// regressor heads. Supplies the score matrix P and the feature grids the
// transformer consumes.
#pragma once

#include <random>
#include <vector>

#include "sctdet/anchors.hpp"
#include "sctdet/linear.hpp"
#include "sctdet/transformer.hpp"

namespace sctdet {

struct DetectorConfig {
    AnchorConfig anchors;
    int image_side = 64;
    int num_source_classes = 0;            // C_s, foreground only
    std::vector<int> feature_channels;     // c_k per scale

    void validate() const;
    int patch_size(int scale_idx) const;   // image_side / grid
};

struct DetectorModel {
    DetectorConfig cfg;
    std::vector<LinearMap> backbone;     // patch_size^2 -> c_k
    std::vector<LinearMap> class_heads;  // c_k -> n_ratios * (C_s + 1), col 0 = background
    std::vector<LinearMap> reg_heads;    // c_k -> n_ratios * 4
};

DetectorModel make_detector(const DetectorConfig& cfg, std::mt19937_64& rng);

std::vector<Matrix*> detector_param_refs(DetectorModel& model);
// Backbone and regressor blocks only; these stay frozen during fine-tuning.
std::vector<const Matrix*> frozen_param_refs(const DetectorModel& model);
// Classifier head blocks (trainable during fine-tuning only when flagged).
std::vector<Matrix*> class_head_param_refs(DetectorModel& model);

struct BackboneTrace {
    std::vector<Grid> features;    // tanh activations, one grid per scale
    std::vector<Matrix> patches;   // per scale: (grid*grid) x patch_size^2 inputs
};

// Image is an image_side x image_side matrix of reals; its side must be
// divisible by every grid size.
BackboneTrace backbone_forward(const Matrix& image, const DetectorModel& model);

struct HeadsOut {
    Matrix scores;  // D_p x (C_s + 1), raw logits, col 0 = background
    Matrix p;       // D_p x C_s foreground block of scores
    Matrix deltas;  // D_p x 4
};

HeadsOut heads_forward(const BackboneTrace& bt, const DetectorModel& model);

struct DetectorGrads {
    std::vector<LinearGrads> backbone, class_heads, reg_heads;
};

DetectorGrads zero_detector_grads(const DetectorModel& model);
void accumulate(DetectorGrads& into, const DetectorGrads& from);

// Backpropagates score/delta gradients through the heads and backbone.
// Either upstream may be empty (treated as zero).
void detector_backward(const DetectorModel& model, const BackboneTrace& bt,
                       const Matrix& d_scores, const Matrix& d_deltas, DetectorGrads& grads);

struct MatchResult {
    std::vector<int> labels;      // 0 = background, -1 = ignored, else the truth class id
    std::vector<int> matched_gt;  // index into the ground truth list, -1 for background
    Matrix reg_targets;           // D_p x 4, encoded offsets, zero for background rows
    int n_positive = 0;
};

// SSD matching: anchors with IoU >= iou_thresh to any ground truth are
// positive, and every ground truth claims its best-IoU anchor regardless.
// Anchors whose best IoU falls in [ignore_lo, iou_thresh) are labeled -1 and
// stay out of the negative pool; ignore_lo >= iou_thresh disables the band.
MatchResult match_anchors(const std::vector<Anchor>& anchors,
                          const std::vector<GroundTruthBox>& gts, double iou_thresh = 0.5,
                          double ignore_lo = 1.0);

struct MultiboxLoss {
    double total = 0.0;
    double cls = 0.0;
    double reg = 0.0;
    Matrix d_scores;  // same shape as scores
    Matrix d_deltas;  // same shape as deltas
    int n_negatives_used = 0;
};

// Cross-entropy over (background + classes) with 3:1 hard negative mining,
// smooth-L1 on positive-anchor offsets, normalized by the positive count.
MultiboxLoss multibox_loss(const Matrix& scores, const Matrix& deltas, const MatchResult& match,
                           double neg_ratio = 3.0);

struct NmsConfig {
    double score_threshold = 0.01;
    double iou_threshold = 0.45;
    int top_k = 200;
};

// Greedy per-class non-maximum suppression; candidates must share a class.
std::vector<Detection> nms(std::vector<Detection> candidates, double iou_threshold);

// Turns classifier probabilities (col 0 = background) and box deltas into
// detections: threshold, decode, per-class NMS, global top-k.
std::vector<Detection> detections_from_scores(const Matrix& probs, const Matrix& deltas,
                                              const std::vector<Anchor>& anchors,
                                              const NmsConfig& nms_cfg);

// Full target-domain inference: backbone, heads, transformer, classifier.
// Detection class ids are the columns of Y_hat (0 is background and never
// emitted).
std::vector<Detection> infer(const DetectorModel& model, const SctParams& sct,
                             const SctConfig& sct_cfg, const Matrix& image,
                             const NmsConfig& nms_cfg);

}  // namespace sctdet
