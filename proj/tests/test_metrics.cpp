#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "sctdet/anchors.hpp"
#include "sctdet/metrics.hpp"
#include "test_util.hpp"

using namespace sctdet;

namespace {

Detection det(int cls, double conf, Box b) {
    Detection d;
    d.class_id = cls;
    d.confidence = conf;
    d.box = b;
    return d;
}

GroundTruthBox gt(int cls, Box b, bool difficult = false) {
    GroundTruthBox t;
    t.class_id = cls;
    t.box = b;
    t.difficult = difficult;
    return t;
}

// independent greedy matcher: selection loops, no sorting, no shared code
std::vector<int> simple_greedy(const std::vector<Detection>& dets,
                               const std::vector<GroundTruthBox>& truths, double thresh) {
    std::vector<int> flags(dets.size(), 0);  // 1 TP, 0 FP, -1 ignored
    std::vector<bool> used(dets.size(), false), taken(truths.size(), false);
    for (size_t step = 0; step < dets.size(); ++step) {
        int pick = -1;
        for (size_t i = 0; i < dets.size(); ++i)
            if (!used[i] && (pick < 0 || dets[i].confidence > dets[pick].confidence))
                pick = static_cast<int>(i);
        used[pick] = true;
        int best_t = -1;
        double best = 0.0;
        for (size_t t = 0; t < truths.size(); ++t) {
            if (taken[t] || truths[t].class_id != dets[pick].class_id) continue;
            const double v = iou(dets[pick].box, truths[t].box);
            if (v >= thresh && v > best) {
                best = v;
                best_t = static_cast<int>(t);
            }
        }
        if (best_t < 0) {
            flags[pick] = 0;
        } else {
            taken[best_t] = true;
            flags[pick] = truths[best_t].difficult ? -1 : 1;
        }
    }
    return flags;
}

// brute-force AP: sweep every confidence cutoff, re-match the surviving
// subset from scratch, take the area under the precision envelope
double sweep_ap(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& truths,
                double thresh) {
    int n_truths = 0;
    for (const GroundTruthBox& t : truths) n_truths += !t.difficult;
    REQUIRE(n_truths > 0);
    std::vector<double> cutoffs;
    for (const Detection& d : dets) cutoffs.push_back(d.confidence);
    std::sort(cutoffs.begin(), cutoffs.end(), std::greater<>());
    cutoffs.erase(std::unique(cutoffs.begin(), cutoffs.end()), cutoffs.end());

    std::vector<std::pair<double, double>> points;  // recall, precision
    for (double cut : cutoffs) {
        std::vector<Detection> subset;
        for (const Detection& d : dets)
            if (d.confidence >= cut) subset.push_back(d);
        const std::vector<int> flags = simple_greedy(subset, truths, thresh);
        int tp = 0, fp = 0;
        for (int f : flags) {
            tp += f == 1;
            fp += f == 0;
        }
        if (tp + fp > 0)
            points.push_back({static_cast<double>(tp) / n_truths,
                              static_cast<double>(tp) / (tp + fp)});
    }
    double ap = 0.0;
    double envelope = 0.0;
    for (int i = static_cast<int>(points.size()) - 1; i >= 0; --i) {
        envelope = std::max(envelope, points[i].second);
        const double prev = i > 0 ? points[i - 1].first : 0.0;
        ap += (points[i].first - prev) * envelope;
    }
    return ap;
}

double library_ap(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& truths,
                  double thresh) {
    int n_truths = 0;
    for (const GroundTruthBox& t : truths) n_truths += !t.difficult;
    std::vector<Detection> sorted = dets;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Detection& a, const Detection& b) {
                         return a.confidence > b.confidence;
                     });
    return average_precision(match_for_ap(sorted, truths, thresh), n_truths).value_or(-1.0);
}

}  // namespace

TEST_CASE("iou values") {
    const Box a{0, 0, 1, 1};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, Box{5, 5, 6, 6}) == 0.0);

    // (0,0,2,2) vs (1,1,3,3): intersection 1, union 7
    CHECK(iou(Box{0, 0, 2, 2}, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7).epsilon(1e-9));

    // cell-counting oracle on a fine grid with aligned boundaries
    const double cell = 0.01;
    int inter = 0, uni = 0;
    for (int i = 0; i < 300; ++i)
        for (int j = 0; j < 300; ++j) {
            const double x = (i + 0.5) * cell, y = (j + 0.5) * cell;
            const bool in_a = x > 0 && x < 2 && y > 0 && y < 2;
            const bool in_b = x > 1 && x < 3 && y > 1 && y < 3;
            inter += in_a && in_b;
            uni += in_a || in_b;
        }
    CHECK(static_cast<double>(inter) / uni == doctest::Approx(1.0 / 7).epsilon(1e-12));
}

TEST_CASE("match_for_ap basics") {
    const Box b{0.1, 0.1, 0.5, 0.5};
    const std::vector<GroundTruthBox> truths = {gt(1, b)};

    auto flags = match_for_ap({det(1, 0.9, b)}, truths, 0.5);
    REQUIRE(flags.size() == 1);
    CHECK(flags[0] == MatchFlag::TP);

    // a duplicate of an already matched truth is a false positive
    flags = match_for_ap({det(1, 0.9, b), det(1, 0.8, b)}, truths, 0.5);
    CHECK(flags[0] == MatchFlag::TP);
    CHECK(flags[1] == MatchFlag::FP);

    // detections on difficult truths are ignored
    flags = match_for_ap({det(1, 0.9, b)}, {gt(1, b, true)}, 0.5);
    CHECK(flags[0] == MatchFlag::Ignored);

    // class mismatch never matches
    flags = match_for_ap({det(2, 0.9, b)}, truths, 0.5);
    CHECK(flags[0] == MatchFlag::FP);
}

TEST_CASE("match_for_ap equals the independent matcher on small instances") {
    std::mt19937_64 rng(401);
    std::uniform_real_distribution<double> u(0.0, 0.6);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<GroundTruthBox> truths;
        for (int g = 0; g < 1 + trial % 3; ++g) {
            const double x = u(rng), y = u(rng);
            truths.push_back(gt(1, Box{x, y, x + 0.25 + u(rng) * 0.2, y + 0.25 + u(rng) * 0.2},
                                trial % 5 == 4 && g == 0));
        }
        std::vector<Detection> dets;
        std::set<double> seen;
        for (int d = 0; d < 1 + trial % 5; ++d) {  // up to 5 detections
            const double x = u(rng), y = u(rng);
            double conf = u(rng);
            while (seen.count(conf)) conf = u(rng);
            seen.insert(conf);
            dets.push_back(det(1, conf, Box{x, y, x + 0.25 + u(rng) * 0.2, y + 0.25 + u(rng) * 0.2}));
        }
        std::vector<Detection> sorted = dets;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const Detection& a, const Detection& b) {
                             return a.confidence > b.confidence;
                         });
        const auto fast = match_for_ap(sorted, truths, 0.5);
        const auto slow = simple_greedy(dets, truths, 0.5);
        // slow flags are in input order; re-rank them
        std::vector<int> order(dets.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&dets](int a, int b) {
            return dets[a].confidence > dets[b].confidence;
        });
        for (size_t i = 0; i < fast.size(); ++i) {
            const int want = slow[order[i]];
            CHECK((fast[i] == MatchFlag::TP ? 1 : fast[i] == MatchFlag::FP ? 0 : -1) == want);
        }
    }
}

TEST_CASE("average_precision pinned values") {
    CHECK(average_precision({MatchFlag::TP}, 1).value() == doctest::Approx(1.0));
    // precision envelope erases the trailing FP
    CHECK(average_precision({MatchFlag::TP, MatchFlag::FP}, 1).value() == doctest::Approx(1.0));
    // [FP, TP] with two truths: single point (recall .5, precision .5)
    CHECK(average_precision({MatchFlag::FP, MatchFlag::TP}, 2).value() == doctest::Approx(0.25));

    CHECK_FALSE(average_precision({}, 0).has_value());
    CHECK(average_precision({MatchFlag::FP}, 0).value() == 0.0);
    CHECK(average_precision({MatchFlag::Ignored}, 0).has_value() == false);
}

TEST_CASE("average_precision never leaves [0,1] and flipping a TP hurts") {
    std::mt19937_64 rng(409);
    std::bernoulli_distribution coin(0.5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<MatchFlag> flags;
        int tp = 0;
        for (int i = 0; i < 8; ++i) {
            const bool hit = coin(rng);
            tp += hit;
            flags.push_back(hit ? MatchFlag::TP : MatchFlag::FP);
        }
        const int n_truths = tp + static_cast<int>(trial % 3);
        if (n_truths == 0) continue;
        const double ap = average_precision(flags, n_truths).value();
        CHECK(ap >= 0.0);
        CHECK(ap <= 1.0);
        for (size_t i = 0; i < flags.size(); ++i) {
            if (flags[i] != MatchFlag::TP) continue;
            std::vector<MatchFlag> worse = flags;
            worse[i] = MatchFlag::FP;
            CHECK(average_precision(worse, n_truths).value() <= ap + 1e-12);
        }
    }
}

TEST_CASE("AP is invariant under monotone confidence rescaling") {
    std::mt19937_64 rng(419);
    std::uniform_real_distribution<double> u(0.0, 0.6);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<GroundTruthBox> truths;
        std::vector<Detection> dets;
        for (int g = 0; g < 2; ++g) {
            const double x = u(rng), y = u(rng);
            truths.push_back(gt(1, Box{x, y, x + 0.3, y + 0.3}));
            dets.push_back(det(1, 0.1 + u(rng), Box{x + u(rng) * 0.1, y, x + 0.3, y + 0.3}));
        }
        dets.push_back(det(1, 0.1 + u(rng), Box{0.0, 0.0, 0.2, 0.2}));
        const double base = library_ap(dets, truths, 0.5);
        std::vector<Detection> rescaled = dets;
        for (Detection& d : rescaled) d.confidence = 0.5 * d.confidence + 2.0;
        CHECK(library_ap(rescaled, truths, 0.5) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("AP equals the threshold-sweep oracle") {
    std::mt19937_64 rng(421);
    std::uniform_real_distribution<double> u(0.0, 0.55);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<GroundTruthBox> truths;
        for (int g = 0; g < 1 + trial % 3; ++g) {
            const double x = u(rng), y = u(rng);
            truths.push_back(gt(1, Box{x, y, x + 0.3, y + 0.3}));
        }
        std::vector<Detection> dets;
        std::set<double> seen;
        for (int d = 0; d < 1 + trial % 5; ++d) {
            const double x = u(rng), y = u(rng);
            double conf = u(rng);
            while (seen.count(conf)) conf = u(rng);
            seen.insert(conf);
            dets.push_back(det(1, conf, Box{x, y, x + 0.3, y + 0.3}));
        }
        const double lib = library_ap(dets, truths, 0.5);
        const double oracle = sweep_ap(dets, truths, 0.5);
        CHECK(lib == doctest::Approx(oracle).epsilon(1e-12));
    }
}

TEST_CASE("map_at endpoints") {
    const Box b1{0.1, 0.1, 0.4, 0.4};
    const Box b2{0.6, 0.6, 0.9, 0.9};
    std::map<int, std::vector<GroundTruthBox>> truths;
    truths[1] = {gt(1, b1)};
    truths[2] = {gt(2, b2)};

    std::map<int, std::vector<Detection>> perfect;
    perfect[1] = {det(1, 0.9, b1)};
    perfect[2] = {det(2, 0.8, b2)};
    CHECK(map_at(perfect, truths, 0.5).map.value() == doctest::Approx(1.0));

    std::map<int, std::vector<Detection>> half;
    half[1] = {det(1, 0.9, b1)};  // class 2 entirely missed
    CHECK(map_at(half, truths, 0.5).map.value() == doctest::Approx(0.5));
}

TEST_CASE("map_at equals an independent reimplementation on random instances") {
    std::mt19937_64 rng(431);
    std::uniform_real_distribution<double> u(0.0, 0.55);
    for (int trial = 0; trial < 50; ++trial) {
        std::map<int, std::vector<GroundTruthBox>> truths;
        std::map<int, std::vector<Detection>> dets;
        std::set<double> seen;
        for (int cls = 1; cls <= 3; ++cls) {
            for (int g = 0; g < 1 + (trial + cls) % 2; ++g) {
                const double x = u(rng), y = u(rng);
                truths[cls].push_back(gt(cls, Box{x, y, x + 0.3, y + 0.3}));
            }
            for (int d = 0; d < 1 + (trial + cls) % 4; ++d) {
                const double x = u(rng), y = u(rng);
                double conf = u(rng);
                while (seen.count(conf)) conf = u(rng);
                seen.insert(conf);
                dets[cls].push_back(det(cls, conf, Box{x, y, x + 0.3, y + 0.3}));
            }
        }
        const MapResult lib = map_at(dets, truths, 0.5);
        double sum = 0.0;
        for (int cls = 1; cls <= 3; ++cls) sum += sweep_ap(dets[cls], truths[cls], 0.5);
        CHECK(lib.map.value() == doctest::Approx(sum / 3).epsilon(1e-12));
    }
}

TEST_CASE("mAP over a union of disjoint class sets is the class-count weighted mean") {
    std::mt19937_64 rng(433);
    std::uniform_real_distribution<double> u(0.0, 0.5);
    std::map<int, std::vector<GroundTruthBox>> t1, t2, tu;
    std::map<int, std::vector<Detection>> d1, d2, du;
    for (int cls = 1; cls <= 5; ++cls) {
        auto& truths = cls <= 2 ? t1 : t2;
        auto& dets = cls <= 2 ? d1 : d2;
        const double x = u(rng), y = u(rng);
        truths[cls].push_back(gt(cls, Box{x, y, x + 0.3, y + 0.3}));
        dets[cls].push_back(det(cls, u(rng), Box{x + u(rng) * 0.15, y, x + 0.3, y + 0.3}));
        tu[cls] = truths[cls];
        du[cls] = dets[cls];
    }
    const double m1 = map_at(d1, t1, 0.5).map.value();
    const double m2 = map_at(d2, t2, 0.5).map.value();
    const double mu = map_at(du, tu, 0.5).map.value();
    CHECK(mu == doctest::Approx((2 * m1 + 3 * m2) / 5).epsilon(1e-12));
}

TEST_CASE("evaluate_detections merges per-image matchings and emits a report") {
    const Box b{0.2, 0.2, 0.6, 0.6};
    std::vector<EvalSample> samples(2);
    samples[0].truths = {gt(1, b)};
    samples[0].detections = {det(1, 0.9, b)};
    samples[1].truths = {gt(1, b)};
    samples[1].detections = {det(1, 0.8, Box{0.21, 0.2, 0.6, 0.6})};

    const MetricsReport rep = evaluate_detections(samples, 1, 1, 7);
    CHECK(rep.map50 == doctest::Approx(1.0));
    CHECK(rep.per_class_ap.at(1) == doctest::Approx(1.0));
    CHECK(rep.map75 > 0.0);
    CHECK(rep.map <= 1.0);

    const std::string j = rep.to_json();
    CHECK(j.find("\"map50\"") != std::string::npos);
    CHECK(j.find("runtime_ms") == std::string::npos);  // absent unless requested
    const std::string csv = rep.to_csv();
    CHECK(csv.find("split,shot,seed,metric,value") == 0);
    CHECK(csv.find("map50") != std::string::npos);
}
