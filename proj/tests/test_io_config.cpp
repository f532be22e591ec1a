#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "sctdet/checkpoint.hpp"
#include "sctdet/config.hpp"
#include "sctdet/detections_io.hpp"
#include "test_util.hpp"

using namespace sctdet;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}

DetectorConfig tiny_config() {
    DetectorConfig cfg;
    cfg.anchors.scale_grid_sizes = {2, 1};
    cfg.anchors.aspect_ratios = {1.0};
    cfg.anchors.box_size_min = 0.3;
    cfg.anchors.box_size_max = 0.6;
    cfg.image_side = 8;
    cfg.num_source_classes = 3;
    cfg.feature_channels = {4, 4};
    return cfg;
}

}  // namespace

TEST_CASE("detections round trip bit exactly") {
    const std::string path = temp_path("sctdet_dets.jsonl");

    export_detections({}, path);
    CHECK(import_detections(path).empty());

    std::mt19937_64 rng(501);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ImageDetection> dets;
    for (int i = 0; i < 1000; ++i) {
        ImageDetection d;
        d.image_id = i % 37;
        d.det.class_id = 1 + i % 5;
        d.det.confidence = u(rng);
        const double x = u(rng) * 0.5, y = u(rng) * 0.5;
        d.det.box = Box{x, y, x + u(rng) * 0.5 + 1e-3, y + u(rng) * 0.5 + 1e-3};
        dets.push_back(d);
    }
    export_detections(dets, path);
    const auto back = import_detections(path);
    REQUIRE(back.size() == dets.size());
    for (size_t i = 0; i < dets.size(); ++i) {
        CHECK(back[i].image_id == dets[i].image_id);
        CHECK(back[i].det.class_id == dets[i].det.class_id);
        CHECK(back[i].det.confidence == dets[i].det.confidence);  // bit exact
        CHECK(back[i].det.box.xmin == dets[i].det.box.xmin);
        CHECK(back[i].det.box.ymax == dets[i].det.box.ymax);
    }
    fs::remove(path);

    CHECK_THROWS_AS(import_detections("/nonexistent/nowhere.jsonl"), DataError);
    std::ofstream(temp_path("sctdet_garbage.jsonl")) << "{not json\n";
    CHECK_THROWS_AS(import_detections(temp_path("sctdet_garbage.jsonl")), DataError);
    fs::remove(temp_path("sctdet_garbage.jsonl"));
}

TEST_CASE("checkpoint save/load round trip with validation") {
    std::mt19937_64 rng(503);
    const DetectorConfig cfg = tiny_config();
    DetectorModel model = make_detector(cfg, rng);
    SctParams sct = make_sct_params(8, 3, 2, 0.6, 0.05, rng);
    SctConfig sct_cfg;
    sct_cfg.pool_kernels = {2, 2};
    sct_cfg.feature_scales = {0, 1};

    const std::string path = temp_path("sctdet_ckpt.json");
    save_checkpoint(path, model, &sct, &sct_cfg);
    const Checkpoint ck = load_checkpoint(path);

    CHECK(ck.model.cfg.num_source_classes == 3);
    REQUIRE(ck.sct.has_value());
    REQUIRE(ck.sct_cfg.has_value());
    // weights round trip bit exactly
    CHECK(ck.model.backbone[0].weight.data == model.backbone[0].weight.data);
    CHECK(ck.sct->theta.data == sct.theta.data);
    CHECK(ck.sct->lambda == sct.lambda);
    CHECK(ck.sct_cfg->pool_kernels == sct_cfg.pool_kernels);

    // saving a loaded checkpoint reproduces the bytes
    CHECK(checkpoint_bytes(ck.model, &*ck.sct, &*ck.sct_cfg) ==
          checkpoint_bytes(model, &sct, &sct_cfg));

    // a corrupted shape fails loudly
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string needle = "\"in_dim\": 16";  // backbone patch dim 4x4
    REQUIRE(text.find(needle) != std::string::npos);
    text.replace(text.find(needle), needle.size(), "\"in_dim\": 17");
    std::ofstream(path) << text;
    CHECK_THROWS_AS(load_checkpoint(path), ConfigError);
    fs::remove(path);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.json"), ConfigError);
}

TEST_CASE("default config is valid and hashable") {
    const RunConfig cfg = default_config();
    CHECK(cfg.detector.num_source_classes == 14);
    CHECK(cfg.data.synth.categories.size() == 18);
    CHECK(config_hash(cfg).size() == 16);
    CHECK(config_hash(cfg) == config_hash(default_config()));

    // the reference schedule records the published operating point
    CHECK(cfg.train.paper_reference.lr == 4e-3);
    CHECK(cfg.train.paper_reference.batch_size == 64);
    CHECK(cfg.train.paper_reference.momentum == 0.9);
    CHECK(cfg.train.paper_reference.weight_decay == 5e-4);
    CHECK(cfg.train.paper_reference.iterations == 4000);
    CHECK(cfg.train.paper_reference.decay_iters == std::vector<int>{3000, 3500});
    CHECK(cfg.train.paper_reference.decay_factor == 0.1);

    // default transformer settings
    CHECK(cfg.sct.lambda == 0.6);
    CHECK(cfg.sct.tau < 0.0);  // auto: 1/D_q
    const int d_q = pooled_field_count(cfg.detector, cfg.sct.pool_kernels);
    CHECK(d_q == 46);  // grids [16,8,4,2]: 16/3 -> 25 cells, then 16, 4, 1
    CHECK(resolve_tau(cfg.sct, d_q) == doctest::Approx(1.0 / 46));
}

TEST_CASE("config parsing, overrides and rejection") {
    const RunConfig cfg = config_from_json_text(R"({
        "data": {"split_id": 2, "n_source_scenes": 10},
        "sct": {"lambda": 0.3, "tau": 0.08},
        "train": {"finetune": {"iterations": 25}}
    })");
    CHECK(cfg.data.split_id == 2);
    CHECK(cfg.data.n_source_scenes == 10);
    CHECK(cfg.sct.lambda == 0.3);
    CHECK(cfg.sct.tau == 0.08);
    CHECK(cfg.train.finetune.iterations == 25);
    CHECK(cfg.train.pretrain.iterations == 4000);  // untouched default
    CHECK(config_hash(cfg) != config_hash(default_config()));

    CHECK_THROWS_AS(config_from_json_text("{\"data\": {\"bogus\": 1}}"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text("not json"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text("{\"sct\": {\"lambda\": -1}}"), ConfigError);

    // round trip through text keeps the hash
    const RunConfig again = config_from_json_text(config_to_json_text(cfg));
    CHECK(config_hash(again) == config_hash(cfg));
}
