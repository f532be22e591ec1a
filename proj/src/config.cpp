#include "sctdet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace sctdet {

using nlohmann::json;

RunConfig default_config() {
    RunConfig cfg;
    cfg.data.synth.categories = default_categories();
    cfg.detector.image_side = 64;
    cfg.detector.feature_channels = {32, 32, 32, 32};
    // C_s follows the split of the 18 default categories (14 source classes)
    cfg.detector.num_source_classes =
        static_cast<int>(split_classes(static_cast<int>(cfg.data.synth.categories.size()),
                                       cfg.data.split_id)
                             .source.size());
    return cfg;
}

namespace {

// Applies json fields onto a struct member-wise, rejecting unknown keys.
struct Reader {
    json j;
    std::set<std::string> seen;

    explicit Reader(json j_) : j(std::move(j_)) {
        if (!j.is_object()) throw ConfigError("config: expected an object");
    }

    template <typename T>
    void get(const char* key, T& into) {
        seen.insert(key);
        if (j.contains(key)) {
            try {
                into = j.at(key).get<T>();
            } catch (const json::exception& e) {
                throw ConfigError(std::string("config field '") + key + "': " + e.what());
            }
        }
    }

    json sub(const char* key) {
        seen.insert(key);
        return j.contains(key) ? j.at(key) : json::object();
    }

    void finish(const std::string& where) const {
        for (const auto& [key, _] : j.items())
            if (!seen.count(key))
                throw ConfigError("config: unknown field '" + key + "' in " + where);
    }
};

void read_schedule(const json& j, TrainSchedule& s, const std::string& where) {
    Reader r(j);
    r.get("iterations", s.iterations);
    r.get("batch_size", s.batch_size);
    r.get("lr", s.lr);
    r.get("momentum", s.momentum);
    r.get("weight_decay", s.weight_decay);
    r.get("decay_iters", s.decay_iters);
    r.get("decay_factor", s.decay_factor);
    r.get("clip_norm", s.clip_norm);
    r.finish(where);
}

json schedule_to_json(const TrainSchedule& s) {
    return json{{"iterations", s.iterations},     {"batch_size", s.batch_size},
                {"lr", s.lr},                     {"momentum", s.momentum},
                {"weight_decay", s.weight_decay}, {"decay_iters", s.decay_iters},
                {"decay_factor", s.decay_factor}, {"clip_norm", s.clip_norm}};
}

std::string category_shape_name(const CategorySpec& c) { return shape_name(c.shape); }

}  // namespace

RunConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig cfg = default_config();
    Reader top(j);

    {
        Reader d(top.sub("data"));
        if (d.j.contains("categories")) {
            d.seen.insert("categories");
            cfg.data.synth.categories.clear();
            try {
                for (const json& c : d.j.at("categories")) {
                    CategorySpec spec;
                    spec.shape = shape_from_name(c.at("shape").get<std::string>());
                    spec.intensity_lo = c.at("intensity_lo").get<double>();
                    spec.intensity_hi = c.at("intensity_hi").get<double>();
                    spec.texture_period = c.at("texture_period").get<int>();
                    cfg.data.synth.categories.push_back(spec);
                }
            } catch (const std::exception& e) {
                throw ConfigError(std::string("config: bad category spec: ") + e.what());
            }
        }
        d.get("image_side", cfg.data.synth.image_side);
        d.get("min_objects", cfg.data.synth.min_objects);
        d.get("max_objects", cfg.data.synth.max_objects);
        d.get("noise_sigma", cfg.data.synth.noise_sigma);
        d.get("clutter_density", cfg.data.synth.clutter_density);
        d.get("min_extent", cfg.data.synth.min_extent);
        d.get("max_extent", cfg.data.synth.max_extent);
        d.get("split_id", cfg.data.split_id);
        d.get("n_source_scenes", cfg.data.n_source_scenes);
        d.get("n_target_pool", cfg.data.n_target_pool);
        d.get("n_target_test", cfg.data.n_target_test);
        d.finish("data");
    }
    {
        Reader a(top.sub("anchors"));
        a.get("scale_grid_sizes", cfg.detector.anchors.scale_grid_sizes);
        a.get("aspect_ratios", cfg.detector.anchors.aspect_ratios);
        a.get("box_size_min", cfg.detector.anchors.box_size_min);
        a.get("box_size_max", cfg.detector.anchors.box_size_max);
        a.get("feature_channels", cfg.detector.feature_channels);
        a.finish("anchors");
    }
    {
        Reader s(top.sub("sct"));
        s.get("pool_kernels", cfg.sct.pool_kernels);
        s.get("feature_scales", cfg.sct.feature_scales);
        s.get("lambda", cfg.sct.lambda);
        s.get("tau", cfg.sct.tau);
        s.get("context", cfg.sct.context);
        s.get("sparse", cfg.sct.sparse);
        s.get("use_gap", cfg.sct.use_gap);
        s.finish("sct");
    }
    {
        Reader t(top.sub("train"));
        read_schedule(t.sub("pretrain"), cfg.train.pretrain, "train.pretrain");
        read_schedule(t.sub("finetune"), cfg.train.finetune, "train.finetune");
        read_schedule(t.sub("paper_reference"), cfg.train.paper_reference, "train.paper_reference");
        t.finish("train");
    }
    {
        Reader e(top.sub("eval"));
        e.get("score_threshold", cfg.eval.nms.score_threshold);
        e.get("nms_iou", cfg.eval.nms.iou_threshold);
        e.get("top_k", cfg.eval.nms.top_k);
        e.finish("eval");
    }
    top.finish("the top level");

    // image side and source class count follow the data section
    cfg.detector.image_side = cfg.data.synth.image_side;
    cfg.detector.num_source_classes = static_cast<int>(
        split_classes(static_cast<int>(cfg.data.synth.categories.size()), cfg.data.split_id)
            .source.size());
    try {
        cfg.detector.validate();
        cfg.data.synth.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (cfg.sct.pool_kernels.size() != cfg.detector.anchors.scale_grid_sizes.size())
        throw ConfigError("config: sct.pool_kernels needs one entry per anchor scale");
    if (cfg.sct.lambda < 0.0) throw ConfigError("config: sct.lambda must be nonnegative");
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return config_from_json_text(buf.str());
}

std::string config_to_json_text(const RunConfig& cfg) {
    json cats = json::array();
    for (const CategorySpec& c : cfg.data.synth.categories)
        cats.push_back(json{{"shape", category_shape_name(c)},
                            {"intensity_lo", c.intensity_lo},
                            {"intensity_hi", c.intensity_hi},
                            {"texture_period", c.texture_period}});
    json j{
        {"data",
         {{"image_side", cfg.data.synth.image_side},
          {"categories", cats},
          {"min_objects", cfg.data.synth.min_objects},
          {"max_objects", cfg.data.synth.max_objects},
          {"noise_sigma", cfg.data.synth.noise_sigma},
          {"clutter_density", cfg.data.synth.clutter_density},
          {"min_extent", cfg.data.synth.min_extent},
          {"max_extent", cfg.data.synth.max_extent},
          {"split_id", cfg.data.split_id},
          {"n_source_scenes", cfg.data.n_source_scenes},
          {"n_target_pool", cfg.data.n_target_pool},
          {"n_target_test", cfg.data.n_target_test}}},
        {"anchors",
         {{"scale_grid_sizes", cfg.detector.anchors.scale_grid_sizes},
          {"aspect_ratios", cfg.detector.anchors.aspect_ratios},
          {"box_size_min", cfg.detector.anchors.box_size_min},
          {"box_size_max", cfg.detector.anchors.box_size_max},
          {"feature_channels", cfg.detector.feature_channels}}},
        {"sct",
         {{"pool_kernels", cfg.sct.pool_kernels},
          {"feature_scales", cfg.sct.feature_scales},
          {"lambda", cfg.sct.lambda},
          {"tau", cfg.sct.tau},
          {"context", cfg.sct.context},
          {"sparse", cfg.sct.sparse},
          {"use_gap", cfg.sct.use_gap}}},
        {"train",
         {{"pretrain", schedule_to_json(cfg.train.pretrain)},
          {"finetune", schedule_to_json(cfg.train.finetune)},
          {"paper_reference", schedule_to_json(cfg.train.paper_reference)}}},
        {"eval",
         {{"score_threshold", cfg.eval.nms.score_threshold},
          {"nms_iou", cfg.eval.nms.iou_threshold},
          {"top_k", cfg.eval.nms.top_k}}}};
    return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = config_to_json_text(cfg);
    unsigned long long h = 1469598103934665603ULL;  // FNV-1a 64
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", h);
    return std::string(buf);
}

double resolve_tau(const SctSection& sct, int d_q) {
    if (d_q <= 0) throw ConfigError("resolve_tau: D_q must be positive");
    return sct.tau < 0.0 ? 1.0 / d_q : sct.tau;
}

int pooled_field_count(const DetectorConfig& det, const std::vector<int>& pool_kernels) {
    if (pool_kernels.size() != det.anchors.scale_grid_sizes.size())
        throw ConfigError("pooled_field_count: one pool kernel per scale expected");
    int d_q = 0;
    for (size_t k = 0; k < pool_kernels.size(); ++k) {
        const int g = det.anchors.scale_grid_sizes[k];
        const int kernel = pool_kernels[k];
        d_q += g < kernel ? g * g : (g / kernel) * (g / kernel);
    }
    return d_q;
}

}  // namespace sctdet
