// Source-domain pretraining and target-domain episode fine-tuning.
#pragma once

#include <functional>
#include <optional>

#include "sctdet/detector.hpp"
#include "sctdet/metrics.hpp"
#include "sctdet/synth.hpp"

namespace sctdet {

struct TrainSchedule {
    int iterations = 0;
    int batch_size = 1;
    double lr = 0.0;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<int> decay_iters;
    double decay_factor = 0.1;
    unsigned long long seed = 0;
    double clip_norm = 10.0;  // global gradient-norm ceiling; <= 0 disables
};

struct TrainLogEntry {
    int iteration = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

using LogSink = std::function<void(const TrainLogEntry&)>;

// Maps global category ids onto local classifier labels: position in
// class_list + 1, with 0 reserved for background. Truths of other classes
// are dropped.
std::vector<GroundTruthBox> remap_truths(const std::vector<GroundTruthBox>& truths,
                                         const std::vector<int>& class_list);

// Trains backbone and heads with the multibox loss on source scenes.
// Aborts with NumericError if the loss goes non-finite.
void pretrain(DetectorModel& model, const std::vector<Scene>& source,
              const std::vector<int>& source_classes, const TrainSchedule& sched,
              const LogSink& log = nullptr);

struct AblationFlags {
    bool context = true;           // off forces lambda = 0 (no feature fusion)
    bool sparse = true;            // off forces tau = 0 (dense relations)
    bool use_gap = false;          // pooled-average attention instead of attention focus
    bool train_class_heads = false;
};

// Cross-entropy on the transformer's target scores with 3:1 hard negative
// mining, normalized by the positive count. The gradient is taken w.r.t. the
// classifier logits (softmax and cross-entropy fused), so it stays bounded
// no matter how saturated the scores get.
struct TargetClsLoss {
    double loss = 0.0;
    Matrix d_logits;
    int n_positive = 0;
};
TargetClsLoss target_ce_loss(const Matrix& y_hat, const MatchResult& match,
                             double neg_ratio = 3.0);

struct FinetuneStats {
    std::vector<TrainLogEntry> log;
    long long gate_fallback_rows = 0;  // all-pruned relation rows seen during training
};

// Fine-tunes the transformer (and optionally the classifier heads) on an
// N-shot episode. Backbone and regressor heads stay frozen. The flags mutate
// sct.lambda / sct.tau as described above.
FinetuneStats finetune(DetectorModel& model, SctParams& sct, SctConfig& sct_cfg,
                       const Episode& episode, const std::vector<int>& target_classes,
                       const TrainSchedule& sched, const AblationFlags& flags,
                       const LogSink& log = nullptr);

// Runs inference over scenes and scores it against their truths. Detection
// class ids are mapped back to global category ids via target_classes.
MetricsReport evaluate_model(const DetectorModel& model, const SctParams& sct,
                             const SctConfig& sct_cfg, const std::vector<Scene>& scenes,
                             const std::vector<int>& target_classes, const NmsConfig& nms_cfg,
                             int split, int shot, unsigned long long seed);

std::vector<EvalSample> collect_eval_samples(const DetectorModel& model, const SctParams& sct,
                                             const SctConfig& sct_cfg,
                                             const std::vector<Scene>& scenes,
                                             const std::vector<int>& target_classes,
                                             const NmsConfig& nms_cfg);

}  // namespace sctdet
