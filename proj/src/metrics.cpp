#include "sctdet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "sctdet/anchors.hpp"

namespace sctdet {

using nlohmann::json;

std::vector<MatchFlag> match_for_ap(const std::vector<Detection>& detections,
                                    const std::vector<GroundTruthBox>& truths, double iou_thresh) {
    std::vector<int> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&detections](int a, int b) {
        return detections[a].confidence > detections[b].confidence;
    });

    std::vector<MatchFlag> flags(detections.size(), MatchFlag::FP);
    std::vector<bool> taken(truths.size(), false);
    for (int idx : order) {
        const Detection& det = detections[idx];
        double best = 0.0;
        int best_t = -1;
        for (size_t t = 0; t < truths.size(); ++t) {
            if (taken[t] || truths[t].class_id != det.class_id) continue;
            const double v = iou(det.box, truths[t].box);
            if (v >= iou_thresh && v > best) {
                best = v;
                best_t = static_cast<int>(t);
            }
        }
        if (best_t < 0) {
            flags[idx] = MatchFlag::FP;
        } else if (truths[best_t].difficult) {
            flags[idx] = MatchFlag::Ignored;  // matched a difficult truth: not counted
            taken[best_t] = true;
        } else {
            flags[idx] = MatchFlag::TP;
            taken[best_t] = true;
        }
    }

    // re-order flags into confidence order for the caller
    std::vector<MatchFlag> ordered(detections.size());
    for (size_t i = 0; i < order.size(); ++i) ordered[i] = flags[order[i]];
    return ordered;
}

std::optional<double> average_precision(const std::vector<MatchFlag>& flags, int num_truths) {
    if (num_truths < 0) throw ShapeError("average_precision: negative truth count");
    std::vector<double> recall, precision;
    std::vector<bool> is_tp;
    int tp = 0, fp = 0;
    for (MatchFlag f : flags) {
        if (f == MatchFlag::Ignored) continue;
        if (f == MatchFlag::TP)
            ++tp;
        else
            ++fp;
        if (num_truths > 0) {
            recall.push_back(static_cast<double>(tp) / num_truths);
            precision.push_back(static_cast<double>(tp) / (tp + fp));
            is_tp.push_back(f == MatchFlag::TP);
        }
    }
    if (num_truths == 0) {
        if (tp + fp == 0) return std::nullopt;  // nothing to rank, nothing to find
        return 0.0;
    }
    // all-point interpolation: area under the precision envelope
    double ap = 0.0;
    double envelope = 0.0;
    double next_recall = recall.empty() ? 0.0 : recall.back();
    for (int i = static_cast<int>(recall.size()) - 1; i >= 0; --i) {
        envelope = std::max(envelope, precision[i]);
        const double prev_recall = i > 0 ? recall[i - 1] : 0.0;
        if (is_tp[i]) ap += (recall[i] - prev_recall) * envelope;
        next_recall = recall[i];
    }
    (void)next_recall;
    return ap;
}

MapResult map_at(const std::map<int, std::vector<Detection>>& detections_by_class,
                 const std::map<int, std::vector<GroundTruthBox>>& truths_by_class,
                 double iou_thresh) {
    MapResult res;
    std::vector<int> classes;
    for (const auto& [cls, _] : truths_by_class) classes.push_back(cls);
    for (const auto& [cls, _] : detections_by_class)
        if (!truths_by_class.count(cls)) classes.push_back(cls);

    double sum = 0.0;
    int counted = 0;
    for (int cls : classes) {
        static const std::vector<Detection> no_dets;
        static const std::vector<GroundTruthBox> no_truths;
        const auto& dets = detections_by_class.count(cls) ? detections_by_class.at(cls) : no_dets;
        const auto& truths = truths_by_class.count(cls) ? truths_by_class.at(cls) : no_truths;
        ClassEval ce;
        for (const GroundTruthBox& t : truths) ce.num_truths += !t.difficult;
        ce.ap = average_precision(match_for_ap(dets, truths, iou_thresh), ce.num_truths);
        if (ce.num_truths > 0 && ce.ap) {
            sum += *ce.ap;
            ++counted;
        }
        res.per_class[cls] = ce;
    }
    if (counted > 0) res.map = sum / counted;
    return res;
}

namespace {

struct RankedFlag {
    double confidence;
    MatchFlag flag;
};

// Per-image greedy matching, merged into one global confidence ranking.
std::map<int, std::pair<std::vector<RankedFlag>, int>> ranked_flags_per_class(
    const std::vector<EvalSample>& samples, double iou_thresh) {
    std::map<int, std::pair<std::vector<RankedFlag>, int>> by_class;  // flags, n_truths
    for (const EvalSample& sample : samples) {
        std::map<int, std::vector<Detection>> dets;
        std::map<int, std::vector<GroundTruthBox>> truths;
        for (const Detection& d : sample.detections) dets[d.class_id].push_back(d);
        for (const GroundTruthBox& t : sample.truths) truths[t.class_id].push_back(t);
        for (const auto& [cls, class_truths] : truths) {
            auto& entry = by_class[cls];
            for (const GroundTruthBox& t : class_truths) entry.second += !t.difficult;
        }
        for (auto& [cls, class_dets] : dets) {
            std::stable_sort(class_dets.begin(), class_dets.end(),
                             [](const Detection& a, const Detection& b) {
                                 return a.confidence > b.confidence;
                             });
            static const std::vector<GroundTruthBox> none;
            const auto& class_truths = truths.count(cls) ? truths.at(cls) : none;
            const std::vector<MatchFlag> flags = match_for_ap(class_dets, class_truths, iou_thresh);
            auto& entry = by_class[cls];
            for (size_t i = 0; i < flags.size(); ++i)
                entry.first.push_back(RankedFlag{class_dets[i].confidence, flags[i]});
        }
    }
    for (auto& [cls, entry] : by_class)
        std::stable_sort(entry.first.begin(), entry.first.end(),
                         [](const RankedFlag& a, const RankedFlag& b) {
                             return a.confidence > b.confidence;
                         });
    return by_class;
}

std::map<int, ClassEval> eval_at(const std::vector<EvalSample>& samples, double iou_thresh) {
    std::map<int, ClassEval> per_class;
    for (const auto& [cls, entry] : ranked_flags_per_class(samples, iou_thresh)) {
        std::vector<MatchFlag> flags;
        for (const RankedFlag& rf : entry.first) flags.push_back(rf.flag);
        ClassEval ce;
        ce.num_truths = entry.second;
        ce.ap = average_precision(flags, ce.num_truths);
        per_class[cls] = ce;
    }
    return per_class;
}

std::optional<double> mean_ap(const std::map<int, ClassEval>& per_class) {
    double sum = 0.0;
    int counted = 0;
    for (const auto& [cls, ce] : per_class) {
        if (ce.num_truths > 0 && ce.ap) {
            sum += *ce.ap;
            ++counted;
        }
    }
    if (counted == 0) return std::nullopt;
    return sum / counted;
}

}  // namespace

MetricsReport evaluate_detections(const std::vector<EvalSample>& samples, int split, int shot,
                                  unsigned long long seed) {
    MetricsReport rep;
    rep.split = split;
    rep.shot = shot;
    rep.seed = seed;

    const std::map<int, ClassEval> at50 = eval_at(samples, 0.5);
    for (const auto& [cls, ce] : at50)
        if (ce.num_truths > 0 && ce.ap) rep.per_class_ap[cls] = *ce.ap;
    rep.map50 = mean_ap(at50).value_or(0.0);
    rep.map75 = mean_ap(eval_at(samples, 0.75)).value_or(0.0);

    double coco = 0.0;
    for (int i = 0; i < 10; ++i) {
        const double thresh = 0.5 + 0.05 * i;
        coco += mean_ap(eval_at(samples, thresh)).value_or(0.0);
    }
    rep.map = coco / 10.0;
    return rep;
}

std::string MetricsReport::to_json() const {
    json j;
    j["split"] = split;
    j["shot"] = shot;
    j["seed"] = seed;
    json pc = json::object();
    for (const auto& [cls, ap] : per_class_ap) pc[std::to_string(cls)] = ap;
    j["per_class_ap"] = pc;
    j["map50"] = map50;
    j["map75"] = map75;
    j["map"] = map;
    if (runtime_ms) j["runtime_ms"] = *runtime_ms;
    return j.dump(2);
}

std::string MetricsReport::to_csv() const {
    std::ostringstream out;
    out << "split,shot,seed,metric,value\n";
    const std::string prefix =
        std::to_string(split) + "," + std::to_string(shot) + "," + std::to_string(seed) + ",";
    for (const auto& [cls, ap] : per_class_ap)
        out << prefix << "ap50_class_" << cls << "," << json(ap).dump() << "\n";
    out << prefix << "map50," << json(map50).dump() << "\n";
    out << prefix << "map75," << json(map75).dump() << "\n";
    out << prefix << "map," << json(map).dump() << "\n";
    return out.str();
}

}  // namespace sctdet
