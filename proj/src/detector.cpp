#include "sctdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sctdet {

void DetectorConfig::validate() const {
    anchors.validate();
    if (image_side <= 0) throw ShapeError("DetectorConfig: image_side must be positive");
    if (num_source_classes <= 0) throw ShapeError("DetectorConfig: need at least one class");
    if (feature_channels.size() != anchors.scale_grid_sizes.size())
        throw ShapeError("DetectorConfig: one channel count per scale expected");
    for (size_t k = 0; k < anchors.scale_grid_sizes.size(); ++k) {
        if (feature_channels[k] <= 0) throw ShapeError("DetectorConfig: bad channel count");
        if (image_side % anchors.scale_grid_sizes[k] != 0)
            throw ShapeError("DetectorConfig: image side not divisible by grid " +
                             std::to_string(anchors.scale_grid_sizes[k]));
    }
}

int DetectorConfig::patch_size(int k) const { return image_side / anchors.scale_grid_sizes[k]; }

DetectorModel make_detector(const DetectorConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    DetectorModel model;
    model.cfg = cfg;
    const int n_ratios = static_cast<int>(cfg.anchors.aspect_ratios.size());
    for (size_t k = 0; k < cfg.anchors.scale_grid_sizes.size(); ++k) {
        const int ps = cfg.patch_size(static_cast<int>(k));
        const int ck = cfg.feature_channels[k];
        model.backbone.push_back(make_linear(ps * ps, ck, false, rng));
        model.class_heads.push_back(make_linear(ck, n_ratios * (cfg.num_source_classes + 1), false, rng));
        model.reg_heads.push_back(make_linear(ck, n_ratios * 4, false, rng));
    }
    return model;
}

std::vector<Matrix*> detector_param_refs(DetectorModel& model) {
    std::vector<Matrix*> refs;
    auto push = [&refs](std::vector<LinearMap>& layers) {
        for (LinearMap& l : layers) {
            refs.push_back(&l.weight);
            refs.push_back(&l.bias);
        }
    };
    push(model.backbone);
    push(model.class_heads);
    push(model.reg_heads);
    return refs;
}

std::vector<const Matrix*> frozen_param_refs(const DetectorModel& model) {
    std::vector<const Matrix*> refs;
    for (const LinearMap& l : model.backbone) {
        refs.push_back(&l.weight);
        refs.push_back(&l.bias);
    }
    for (const LinearMap& l : model.reg_heads) {
        refs.push_back(&l.weight);
        refs.push_back(&l.bias);
    }
    return refs;
}

std::vector<Matrix*> class_head_param_refs(DetectorModel& model) {
    std::vector<Matrix*> refs;
    for (LinearMap& l : model.class_heads) {
        refs.push_back(&l.weight);
        refs.push_back(&l.bias);
    }
    return refs;
}

BackboneTrace backbone_forward(const Matrix& image, const DetectorModel& model) {
    const DetectorConfig& cfg = model.cfg;
    if (image.rows != cfg.image_side || image.cols != cfg.image_side)
        throw ShapeError("backbone_forward: image must be " + std::to_string(cfg.image_side) +
                         "x" + std::to_string(cfg.image_side));
    BackboneTrace bt;
    for (size_t k = 0; k < model.backbone.size(); ++k) {
        const int g = cfg.anchors.scale_grid_sizes[k];
        const int ps = cfg.patch_size(static_cast<int>(k));
        Matrix patches(g * g, ps * ps);
        for (int i = 0; i < g; ++i)
            for (int j = 0; j < g; ++j)
                for (int pi = 0; pi < ps; ++pi)
                    for (int pj = 0; pj < ps; ++pj)
                        patches(i * g + j, pi * ps + pj) = image(i * ps + pi, j * ps + pj);
        Matrix emb = linear_forward(model.backbone[k], patches);
        for (double& v : emb.data) v = std::tanh(v);
        Grid feat(g, g, model.backbone[k].out_dim);
        feat.v = emb.data;
        bt.features.push_back(std::move(feat));
        bt.patches.push_back(std::move(patches));
    }
    return bt;
}

HeadsOut heads_forward(const BackboneTrace& bt, const DetectorModel& model) {
    const DetectorConfig& cfg = model.cfg;
    if (bt.features.size() != model.class_heads.size())
        throw ShapeError("heads_forward: feature/scale count mismatch");
    const PriorLayout lay = cfg.anchors.layout();
    const int n_ratios = static_cast<int>(cfg.anchors.aspect_ratios.size());
    const int n_cols = cfg.num_source_classes + 1;

    HeadsOut out;
    out.scores = Matrix(lay.total_rows, n_cols);
    out.deltas = Matrix(lay.total_rows, 4);
    for (int k = 0; k < lay.num_scales(); ++k) {
        const Grid& feat = bt.features[k];
        Matrix cells(feat.h * feat.w, feat.c);
        cells.data = feat.v;
        Matrix cls = linear_forward(model.class_heads[k], cells);
        Matrix reg = linear_forward(model.reg_heads[k], cells);
        for (int h = 0; h < feat.h; ++h) {
            for (int w = 0; w < feat.w; ++w) {
                const int cell = h * feat.w + w;
                for (int m = 0; m < n_ratios; ++m) {
                    const int r = lay.row(k, m, h, w);
                    for (int c = 0; c < n_cols; ++c) out.scores(r, c) = cls(cell, m * n_cols + c);
                    for (int d = 0; d < 4; ++d) out.deltas(r, d) = reg(cell, m * 4 + d);
                }
            }
        }
    }
    out.p = Matrix(out.scores.rows, cfg.num_source_classes);
    for (int i = 0; i < out.scores.rows; ++i)
        for (int c = 0; c < cfg.num_source_classes; ++c) out.p(i, c) = out.scores(i, c + 1);
    return out;
}

DetectorGrads zero_detector_grads(const DetectorModel& model) {
    DetectorGrads g;
    auto zero_like = [](const std::vector<LinearMap>& layers) {
        std::vector<LinearGrads> out;
        for (const LinearMap& l : layers) {
            LinearGrads lg;
            lg.weight = Matrix(l.weight.rows, l.weight.cols);
            lg.bias = Matrix(1, l.out_dim);
            out.push_back(std::move(lg));
        }
        return out;
    };
    g.backbone = zero_like(model.backbone);
    g.class_heads = zero_like(model.class_heads);
    g.reg_heads = zero_like(model.reg_heads);
    return g;
}

void accumulate(DetectorGrads& into, const DetectorGrads& from) {
    auto acc = [](std::vector<LinearGrads>& a, const std::vector<LinearGrads>& b) {
        for (size_t i = 0; i < a.size(); ++i) {
            a[i].weight = add(a[i].weight, b[i].weight);
            a[i].bias = add(a[i].bias, b[i].bias);
        }
    };
    acc(into.backbone, from.backbone);
    acc(into.class_heads, from.class_heads);
    acc(into.reg_heads, from.reg_heads);
}

void detector_backward(const DetectorModel& model, const BackboneTrace& bt,
                       const Matrix& d_scores, const Matrix& d_deltas, DetectorGrads& grads) {
    const DetectorConfig& cfg = model.cfg;
    const PriorLayout lay = cfg.anchors.layout();
    const int n_ratios = static_cast<int>(cfg.anchors.aspect_ratios.size());
    const int n_cols = cfg.num_source_classes + 1;
    const bool has_scores = d_scores.rows > 0;
    const bool has_deltas = d_deltas.rows > 0;

    for (int k = 0; k < lay.num_scales(); ++k) {
        const Grid& feat = bt.features[k];
        Matrix cells(feat.h * feat.w, feat.c);
        cells.data = feat.v;

        Matrix d_feat(feat.h * feat.w, feat.c);
        if (has_scores) {
            Matrix d_cls(feat.h * feat.w, n_ratios * n_cols);
            for (int h = 0; h < feat.h; ++h)
                for (int w = 0; w < feat.w; ++w)
                    for (int m = 0; m < n_ratios; ++m) {
                        const int r = lay.row(k, m, h, w);
                        for (int c = 0; c < n_cols; ++c)
                            d_cls(h * feat.w + w, m * n_cols + c) = d_scores(r, c);
                    }
            LinearGrads lg = linear_backward(model.class_heads[k], cells, d_cls);
            grads.class_heads[k].weight = add(grads.class_heads[k].weight, lg.weight);
            grads.class_heads[k].bias = add(grads.class_heads[k].bias, lg.bias);
            d_feat = add(d_feat, lg.x);
        }
        if (has_deltas) {
            Matrix d_reg(feat.h * feat.w, n_ratios * 4);
            for (int h = 0; h < feat.h; ++h)
                for (int w = 0; w < feat.w; ++w)
                    for (int m = 0; m < n_ratios; ++m) {
                        const int r = lay.row(k, m, h, w);
                        for (int d = 0; d < 4; ++d) d_reg(h * feat.w + w, m * 4 + d) = d_deltas(r, d);
                    }
            LinearGrads lg = linear_backward(model.reg_heads[k], cells, d_reg);
            grads.reg_heads[k].weight = add(grads.reg_heads[k].weight, lg.weight);
            grads.reg_heads[k].bias = add(grads.reg_heads[k].bias, lg.bias);
            d_feat = add(d_feat, lg.x);
        }

        // through tanh: features hold tanh(pre), so d_pre = d_feat * (1 - f^2)
        for (size_t i = 0; i < d_feat.data.size(); ++i)
            d_feat.data[i] *= 1.0 - feat.v[i] * feat.v[i];
        LinearGrads lg = linear_backward(model.backbone[k], bt.patches[k], d_feat);
        grads.backbone[k].weight = add(grads.backbone[k].weight, lg.weight);
        grads.backbone[k].bias = add(grads.backbone[k].bias, lg.bias);
    }
}

MatchResult match_anchors(const std::vector<Anchor>& anchors,
                          const std::vector<GroundTruthBox>& gts, double iou_thresh,
                          double ignore_lo) {
    const int n = static_cast<int>(anchors.size());
    MatchResult res;
    res.labels.assign(n, 0);
    res.matched_gt.assign(n, -1);
    res.reg_targets = Matrix(std::max(n, 1), 4);
    if (gts.empty() || n == 0) {
        res.reg_targets = Matrix(std::max(n, 1), 4);
        return res;
    }

    std::vector<Box> aboxes(n);
    for (int i = 0; i < n; ++i) aboxes[i] = anchors[i].to_box();

    // best ground truth per anchor
    for (int a = 0; a < n; ++a) {
        double best = 0.0;
        int best_g = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            const double v = iou(aboxes[a], gts[g].box);
            if (v > best) {
                best = v;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0 && best >= iou_thresh) {
            res.matched_gt[a] = best_g;
            res.labels[a] = gts[best_g].class_id;
        } else if (best_g >= 0 && best >= ignore_lo && best < iou_thresh) {
            res.labels[a] = -1;
        }
    }
    // every ground truth claims its best anchor
    for (size_t g = 0; g < gts.size(); ++g) {
        double best = -1.0;
        int best_a = -1;
        for (int a = 0; a < n; ++a) {
            const double v = iou(aboxes[a], gts[g].box);
            if (v > best) {
                best = v;
                best_a = a;
            }
        }
        if (best_a >= 0) {
            res.matched_gt[best_a] = static_cast<int>(g);
            res.labels[best_a] = gts[g].class_id;
        }
    }
    for (int a = 0; a < n; ++a) {
        if (res.matched_gt[a] < 0) continue;
        ++res.n_positive;
        encode_box(anchors[a], gts[res.matched_gt[a]].box, &res.reg_targets.data[4 * a]);
    }
    return res;
}

static double smooth_l1(double x, double& deriv) {
    const double ax = std::abs(x);
    if (ax < 1.0) {
        deriv = x;
        return 0.5 * x * x;
    }
    deriv = x < 0.0 ? -1.0 : 1.0;
    return ax - 0.5;
}

MultiboxLoss multibox_loss(const Matrix& scores, const Matrix& deltas, const MatchResult& match,
                           double neg_ratio) {
    const int n = scores.rows;
    if (static_cast<int>(match.labels.size()) != n)
        throw ShapeError("multibox_loss: match result size mismatch");
    if (deltas.rows != n || deltas.cols != 4)
        throw ShapeError("multibox_loss: deltas must be n x 4");

    MultiboxLoss out;
    out.d_scores = Matrix(n, scores.cols);
    out.d_deltas = Matrix(n, 4);

    const Matrix probs = row_softmax(scores);
    const double norm = 1.0 / std::max(1, match.n_positive);

    // hardest negatives: largest -log p(background)
    std::vector<int> neg_idx;
    for (int i = 0; i < n; ++i)
        if (match.labels[i] == 0) neg_idx.push_back(i);
    std::stable_sort(neg_idx.begin(), neg_idx.end(),
                     [&probs](int a, int b) { return probs(a, 0) < probs(b, 0); });
    const int n_neg = std::min<int>(static_cast<int>(neg_idx.size()),
                                    static_cast<int>(neg_ratio * match.n_positive));
    out.n_negatives_used = n_neg;

    std::vector<int> selected;
    for (int i = 0; i < n; ++i)
        if (match.labels[i] > 0) selected.push_back(i);
    selected.insert(selected.end(), neg_idx.begin(), neg_idx.begin() + n_neg);

    for (int i : selected) {
        const int label = match.labels[i];
        out.cls -= std::log(std::max(probs(i, label), 1e-300));
        for (int c = 0; c < scores.cols; ++c)
            out.d_scores(i, c) = (probs(i, c) - (c == label ? 1.0 : 0.0)) * norm;
    }
    for (int i = 0; i < n; ++i) {
        if (match.labels[i] <= 0) continue;
        for (int d = 0; d < 4; ++d) {
            double deriv = 0.0;
            out.reg += smooth_l1(deltas(i, d) - match.reg_targets(i, d), deriv);
            out.d_deltas(i, d) = deriv * norm;
        }
    }
    out.cls *= norm;
    out.reg *= norm;
    out.total = out.cls + out.reg;
    if (!std::isfinite(out.total)) throw NumericError("multibox_loss: non-finite loss");
    return out;
}

std::vector<Detection> nms(std::vector<Detection> candidates, double iou_threshold) {
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    std::vector<Detection> kept;
    for (const Detection& d : candidates) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (iou(d.box, k.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

std::vector<Detection> detections_from_scores(const Matrix& probs, const Matrix& deltas,
                                              const std::vector<Anchor>& anchors,
                                              const NmsConfig& nms_cfg) {
    if (probs.rows != static_cast<int>(anchors.size()) || deltas.rows != probs.rows)
        throw ShapeError("detections_from_scores: row counts disagree");
    std::vector<Detection> all;
    for (int c = 1; c < probs.cols; ++c) {
        std::vector<Detection> cand;
        for (int i = 0; i < probs.rows; ++i) {
            const double conf = probs(i, c);
            if (conf < nms_cfg.score_threshold) continue;
            Detection d;
            d.class_id = c;
            d.confidence = conf;
            d.box = decode_box(anchors[i], &deltas.data[4 * static_cast<size_t>(i)]);
            if (!d.box.valid()) continue;
            cand.push_back(d);
        }
        std::vector<Detection> kept = nms(std::move(cand), nms_cfg.iou_threshold);
        all.insert(all.end(), kept.begin(), kept.end());
    }
    std::stable_sort(all.begin(), all.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    if (static_cast<int>(all.size()) > nms_cfg.top_k) all.resize(nms_cfg.top_k);
    return all;
}

std::vector<Detection> infer(const DetectorModel& model, const SctParams& sct,
                             const SctConfig& sct_cfg, const Matrix& image,
                             const NmsConfig& nms_cfg) {
    BackboneTrace bt = backbone_forward(image, model);
    HeadsOut heads = heads_forward(bt, model);
    const PriorLayout lay = model.cfg.anchors.layout();
    SctTrace trace = sct_forward(heads.p, bt.features, lay, sct, sct_cfg);
    const std::vector<Anchor> anchors = generate_anchors(model.cfg.anchors);
    return detections_from_scores(trace.y_hat, heads.deltas, anchors, nms_cfg);
}

}  // namespace sctdet
