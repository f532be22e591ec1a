#include "sctdet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "sctdet/optim.hpp"

namespace sctdet {

using Clock = std::chrono::steady_clock;

static double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Scales gradients down in place when their global norm exceeds the ceiling.
static void clip_gradients(const std::vector<const Matrix*>& grads, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (const Matrix* g : grads)
        for (double v : g->data) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double factor = max_norm / norm;
    for (const Matrix* g : grads)
        for (double& v : const_cast<Matrix*>(g)->data) v *= factor;
}

std::vector<GroundTruthBox> remap_truths(const std::vector<GroundTruthBox>& truths,
                                         const std::vector<int>& class_list) {
    std::vector<GroundTruthBox> out;
    for (const GroundTruthBox& t : truths) {
        for (size_t i = 0; i < class_list.size(); ++i) {
            if (class_list[i] == t.class_id) {
                GroundTruthBox r = t;
                r.class_id = static_cast<int>(i) + 1;
                out.push_back(r);
                break;
            }
        }
    }
    return out;
}

void pretrain(DetectorModel& model, const std::vector<Scene>& source,
              const std::vector<int>& source_classes, const TrainSchedule& sched,
              const LogSink& log) {
    if (source.empty()) throw DataError("pretrain: empty source dataset");
    if (static_cast<int>(source_classes.size()) != model.cfg.num_source_classes)
        throw ShapeError("pretrain: source class count does not match the model");

    const std::vector<Anchor> anchors = generate_anchors(model.cfg.anchors);
    std::vector<MatchResult> matches(source.size());
    std::vector<bool> matched(source.size(), false);

    SgdState state;
    state.momentum = sched.momentum;
    state.weight_decay = sched.weight_decay;
    LrSchedule lrs{sched.lr, sched.decay_iters, sched.decay_factor};

    std::mt19937_64 rng(sched.seed);
    std::uniform_int_distribution<size_t> pick(0, source.size() - 1);
    const std::vector<Matrix*> params = detector_param_refs(model);
    const auto t0 = Clock::now();

    for (int iter = 0; iter < sched.iterations; ++iter) {
        DetectorGrads grads = zero_detector_grads(model);
        double loss = 0.0;
        for (int b = 0; b < sched.batch_size; ++b) {
            const size_t idx = pick(rng);
            if (!matched[idx]) {
                matches[idx] =
                    match_anchors(anchors, remap_truths(source[idx].truths, source_classes));
                matched[idx] = true;
            }
            BackboneTrace bt = backbone_forward(source[idx].image, model);
            HeadsOut heads = heads_forward(bt, model);
            MultiboxLoss mb = multibox_loss(heads.scores, heads.deltas, matches[idx]);
            loss += mb.total;
            Matrix d_scores = scale(mb.d_scores, 1.0 / sched.batch_size);
            Matrix d_deltas = scale(mb.d_deltas, 1.0 / sched.batch_size);
            detector_backward(model, bt, d_scores, d_deltas, grads);
        }
        loss /= sched.batch_size;
        if (!std::isfinite(loss))
            throw NumericError("pretrain: training diverged (non-finite loss) at iteration " +
                               std::to_string(iter));

        std::vector<const Matrix*> grad_refs;
        auto push = [&grad_refs](const std::vector<LinearGrads>& gs) {
            for (const LinearGrads& g : gs) {
                grad_refs.push_back(&g.weight);
                grad_refs.push_back(&g.bias);
            }
        };
        push(grads.backbone);
        push(grads.class_heads);
        push(grads.reg_heads);
        clip_gradients(grad_refs, sched.clip_norm);

        state.learning_rate = lrs.at(iter);
        sgd_step(params, grad_refs, state);
        if (log) log(TrainLogEntry{iter, loss, state.learning_rate, ms_since(t0)});
    }
}

TargetClsLoss target_ce_loss(const Matrix& y_hat, const MatchResult& match, double neg_ratio) {
    const int n = y_hat.rows;
    if (static_cast<int>(match.labels.size()) != n)
        throw ShapeError("target_ce_loss: match size mismatch");
    TargetClsLoss out;
    out.d_logits = Matrix(n, y_hat.cols);
    out.n_positive = match.n_positive;
    const double norm = 1.0 / std::max(1, match.n_positive);

    std::vector<int> neg_idx;
    for (int i = 0; i < n; ++i)
        if (match.labels[i] == 0) neg_idx.push_back(i);
    std::stable_sort(neg_idx.begin(), neg_idx.end(),
                     [&y_hat](int a, int b) { return y_hat(a, 0) < y_hat(b, 0); });
    const int n_neg = std::min<int>(static_cast<int>(neg_idx.size()),
                                    static_cast<int>(neg_ratio * match.n_positive));

    std::vector<int> selected;
    for (int i = 0; i < n; ++i)
        if (match.labels[i] > 0) selected.push_back(i);
    selected.insert(selected.end(), neg_idx.begin(), neg_idx.begin() + n_neg);

    for (int i : selected) {
        const int label = match.labels[i];
        if (label >= y_hat.cols) throw ShapeError("target_ce_loss: label outside Y_hat columns");
        out.loss -= std::log(std::max(y_hat(i, label), 1e-300)) * norm;
        for (int c = 0; c < y_hat.cols; ++c)
            out.d_logits(i, c) = (y_hat(i, c) - (c == label ? 1.0 : 0.0)) * norm;
    }
    return out;
}

FinetuneStats finetune(DetectorModel& model, SctParams& sct, SctConfig& sct_cfg,
                       const Episode& episode, const std::vector<int>& target_classes,
                       const TrainSchedule& sched, const AblationFlags& flags,
                       const LogSink& log) {
    if (episode.scenes.empty()) throw DataError("finetune: empty episode");
    // every target class must be present
    std::vector<int> counts(target_classes.size(), 0);
    for (const Scene& s : episode.scenes)
        for (const GroundTruthBox& t : s.truths)
            for (size_t i = 0; i < target_classes.size(); ++i)
                if (target_classes[i] == t.class_id) ++counts[i];
    for (size_t i = 0; i < counts.size(); ++i)
        if (counts[i] == 0)
            throw DataError("finetune: episode has no boxes for target class " +
                            std::to_string(target_classes[i]));

    if (!flags.context) sct.lambda = 0.0;
    if (!flags.sparse) sct.tau = 0.0;
    sct_cfg.use_gap = flags.use_gap;

    const PriorLayout layout = model.cfg.anchors.layout();
    const std::vector<Anchor> anchors = generate_anchors(model.cfg.anchors);

    // Backbone (and with default flags the classifier heads too) is frozen,
    // so per-image features, scores and matches are computed once.
    const size_t n_img = episode.scenes.size();
    std::vector<BackboneTrace> traces;
    std::vector<HeadsOut> heads(n_img);
    std::vector<MatchResult> matches(n_img);
    for (size_t i = 0; i < n_img; ++i) {
        traces.push_back(backbone_forward(episode.scenes[i].image, model));
        heads[i] = heads_forward(traces[i], model);
        // mid-IoU anchors sit on objects; keeping them out of the negative
        // pool protects recall when only a handful of positives supervise
        matches[i] = match_anchors(anchors, remap_truths(episode.scenes[i].truths, target_classes),
                                   0.5, 0.4);
    }

    std::vector<Matrix*> params = sct_param_refs(sct);
    if (flags.train_class_heads)
        for (Matrix* m : class_head_param_refs(model)) params.push_back(m);

    SgdState state;
    state.momentum = sched.momentum;
    state.weight_decay = sched.weight_decay;
    LrSchedule lrs{sched.lr, sched.decay_iters, sched.decay_factor};

    std::mt19937_64 rng(sched.seed);
    FinetuneStats stats;
    const auto t0 = Clock::now();

    for (int iter = 0; iter < sched.iterations; ++iter) {
        std::vector<size_t> batch;
        if (static_cast<size_t>(sched.batch_size) >= n_img) {
            for (size_t i = 0; i < n_img; ++i) batch.push_back(i);
        } else {
            std::uniform_int_distribution<size_t> pick(0, n_img - 1);
            for (int b = 0; b < sched.batch_size; ++b) batch.push_back(pick(rng));
        }

        SctGrads total;
        DetectorGrads head_grads = zero_detector_grads(model);
        bool first = true;
        double loss = 0.0;
        const double inv_batch = 1.0 / batch.size();
        for (size_t idx : batch) {
            if (flags.train_class_heads) heads[idx] = heads_forward(traces[idx], model);
            SctTrace trace =
                sct_forward(heads[idx].p, traces[idx].features, layout, sct, sct_cfg);
            stats.gate_fallback_rows += trace.n_gate_fallback_rows;
            TargetClsLoss cls = target_ce_loss(trace.y_hat, matches[idx]);
            loss += cls.loss * inv_batch;
            SctGrads g = sct_backward_from_logit_grad(trace, sct, scale(cls.d_logits, inv_batch));
            if (flags.train_class_heads) {
                Matrix d_scores(heads[idx].scores.rows, heads[idx].scores.cols);
                for (int r = 0; r < g.p.rows; ++r)
                    for (int c = 0; c < g.p.cols; ++c) d_scores(r, c + 1) = g.p(r, c);
                detector_backward(model, traces[idx], d_scores, Matrix(), head_grads);
            }
            if (first) {
                total = std::move(g);
                first = false;
            } else {
                accumulate_sct_grads(total, g);
            }
        }
        if (!std::isfinite(loss))
            throw NumericError("finetune: training diverged (non-finite loss) at iteration " +
                               std::to_string(iter));

        std::vector<const Matrix*> grad_refs = sct_grad_refs(total);
        if (flags.train_class_heads)
            for (const LinearGrads& g : head_grads.class_heads) {
                grad_refs.push_back(&g.weight);
                grad_refs.push_back(&g.bias);
            }
        clip_gradients(grad_refs, sched.clip_norm);

        state.learning_rate = lrs.at(iter);
        sgd_step(params, grad_refs, state);
        if (log) log(TrainLogEntry{iter, loss, state.learning_rate, ms_since(t0)});
        stats.log.push_back(TrainLogEntry{iter, loss, state.learning_rate, ms_since(t0)});
    }
    return stats;
}

std::vector<EvalSample> collect_eval_samples(const DetectorModel& model, const SctParams& sct,
                                             const SctConfig& sct_cfg,
                                             const std::vector<Scene>& scenes,
                                             const std::vector<int>& target_classes,
                                             const NmsConfig& nms_cfg) {
    std::vector<EvalSample> samples;
    for (const Scene& scene : scenes) {
        EvalSample s;
        for (Detection d : infer(model, sct, sct_cfg, scene.image, nms_cfg)) {
            d.class_id = target_classes.at(d.class_id - 1);  // back to global ids
            s.detections.push_back(d);
        }
        for (const GroundTruthBox& t : scene.truths)
            for (int cls : target_classes)
                if (t.class_id == cls) s.truths.push_back(t);
        samples.push_back(std::move(s));
    }
    return samples;
}

MetricsReport evaluate_model(const DetectorModel& model, const SctParams& sct,
                             const SctConfig& sct_cfg, const std::vector<Scene>& scenes,
                             const std::vector<int>& target_classes, const NmsConfig& nms_cfg,
                             int split, int shot, unsigned long long seed) {
    return evaluate_detections(
        collect_eval_samples(model, sct, sct_cfg, scenes, target_classes, nms_cfg), split, shot,
        seed);
}

}  // namespace sctdet
