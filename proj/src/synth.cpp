#include "sctdet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "sctdet/anchors.hpp"

namespace sctdet {

namespace fs = std::filesystem;
using nlohmann::json;

std::string shape_name(ShapeKind s) {
    switch (s) {
        case ShapeKind::Square: return "square";
        case ShapeKind::Disc: return "disc";
        case ShapeKind::Cross: return "cross";
        case ShapeKind::Bar: return "bar";
        case ShapeKind::Ring: return "ring";
        case ShapeKind::Triangle: return "triangle";
    }
    throw DataError("shape_name: unknown shape");
}

ShapeKind shape_from_name(const std::string& name) {
    for (ShapeKind s : {ShapeKind::Square, ShapeKind::Disc, ShapeKind::Cross, ShapeKind::Bar,
                        ShapeKind::Ring, ShapeKind::Triangle})
        if (shape_name(s) == name) return s;
    throw DataError("unknown shape name: " + name);
}

void SyntheticConfig::validate() const {
    if (image_side < 16) throw DataError("SyntheticConfig: image_side too small");
    if (categories.size() < 2) throw DataError("SyntheticConfig: need at least two categories");
    if (min_objects < 1 || max_objects < min_objects)
        throw DataError("SyntheticConfig: bad objects_per_scene range");
    if (min_extent <= 0.0 || max_extent > 1.0 || max_extent < min_extent)
        throw DataError("SyntheticConfig: bad extent range");
    for (size_t i = 0; i < categories.size(); ++i)
        for (size_t j = i + 1; j < categories.size(); ++j) {
            const CategorySpec &a = categories[i], &b = categories[j];
            if (a.shape == b.shape && a.texture_period == b.texture_period &&
                a.intensity_lo == b.intensity_lo && a.intensity_hi == b.intensity_hi)
                throw DataError("SyntheticConfig: categories must be pairwise distinct");
        }
}

std::vector<CategorySpec> default_categories() {
    const ShapeKind shapes[] = {ShapeKind::Square, ShapeKind::Disc,  ShapeKind::Cross,
                                ShapeKind::Bar,    ShapeKind::Ring, ShapeKind::Triangle};
    const int periods[] = {0, 2, 4};
    const double bands[][2] = {{0.55, 0.75}, {0.75, 0.95}, {0.4, 0.6}};
    std::vector<CategorySpec> cats;
    for (int s = 0; s < 6; ++s) {
        for (int t = 0; t < 3; ++t) {
            CategorySpec c;
            c.shape = shapes[s];
            c.texture_period = periods[t];
            const auto& band = bands[(s + t) % 3];
            c.intensity_lo = band[0];
            c.intensity_hi = band[1];
            cats.push_back(c);
        }
    }
    return cats;
}

// Pixel (px, py) membership test in a shape's local w x h bounding box.
static bool shape_covers(ShapeKind shape, int px, int py, int w, int h) {
    const double u = (px + 0.5) / w;
    const double v = (py + 0.5) / h;
    const double nx = 2.0 * u - 1.0;
    const double ny = 2.0 * v - 1.0;
    switch (shape) {
        case ShapeKind::Square:
        case ShapeKind::Bar:
            return true;
        case ShapeKind::Disc:
            return nx * nx + ny * ny <= 1.0;
        case ShapeKind::Ring: {
            const double r2 = nx * nx + ny * ny;
            return r2 <= 1.0 && r2 >= 0.55 * 0.55;
        }
        case ShapeKind::Cross:
            return std::abs(u - 0.5) <= 1.0 / 6.0 || std::abs(v - 0.5) <= 1.0 / 6.0;
        case ShapeKind::Triangle: {
            // pixel column span must intersect the triangle's row span
            const double half = 0.5 * v;
            return static_cast<double>(px) / w <= 0.5 + half &&
                   static_cast<double>(px + 1) / w >= 0.5 - half;
        }
    }
    return false;
}

static void render_object(Matrix& image, const CategorySpec& cat, int x0, int y0, int w, int h,
                          double base_intensity) {
    for (int py = 0; py < h; ++py) {
        for (int px = 0; px < w; ++px) {
            if (!shape_covers(cat.shape, px, py, w, h)) continue;
            double val = base_intensity;
            if (cat.texture_period > 0 && ((px + py) / cat.texture_period) % 2 == 1)
                val *= 0.55;
            image(y0 + py, x0 + px) = std::clamp(val, 0.0, 1.0);
        }
    }
}

Scene generate_scene(const SyntheticConfig& cfg, const std::vector<int>& class_pool,
                     std::mt19937_64& rng) {
    cfg.validate();
    if (class_pool.empty()) throw DataError("generate_scene: empty class pool");
    const int side = cfg.image_side;
    Scene scene;
    scene.image = Matrix(side, side);

    // clutter first; objects overwrite it
    const int n_clutter = static_cast<int>(std::lround(cfg.clutter_density * side * side));
    std::uniform_real_distribution<double> clutter_val(0.2, 0.9);
    for (int i = 0; i < n_clutter; ++i) {
        const int cx = std::uniform_int_distribution<int>(0, side - 2)(rng);
        const int cy = std::uniform_int_distribution<int>(0, side - 2)(rng);
        const int sz = std::uniform_int_distribution<int>(1, 2)(rng);
        const double val = clutter_val(rng);
        for (int dy = 0; dy < sz; ++dy)
            for (int dx = 0; dx < sz; ++dx) scene.image(cy + dy, cx + dx) = val;
    }

    const int n_obj =
        std::uniform_int_distribution<int>(cfg.min_objects, cfg.max_objects)(rng);
    std::uniform_real_distribution<double> extent(cfg.min_extent, cfg.max_extent);
    for (int o = 0; o < n_obj; ++o) {
        const int cls = class_pool[std::uniform_int_distribution<size_t>(0, class_pool.size() - 1)(rng)];
        const CategorySpec& cat = cfg.categories.at(cls);
        int w = 0, h = 0, x0 = 0, y0 = 0;
        bool placed = false;
        for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
            w = std::max(4, static_cast<int>(std::lround(extent(rng) * side)));
            if (cat.shape == ShapeKind::Square) {
                h = w;
            } else if (cat.shape == ShapeKind::Bar) {
                h = std::max(4, w / 3);
            } else {
                h = std::max(4, static_cast<int>(std::lround(extent(rng) * side)));
            }
            w = std::min(w, side);
            h = std::min(h, side);
            x0 = std::uniform_int_distribution<int>(0, side - w)(rng);
            y0 = std::uniform_int_distribution<int>(0, side - h)(rng);
            Box cand{static_cast<double>(x0) / side, static_cast<double>(y0) / side,
                     static_cast<double>(x0 + w) / side, static_cast<double>(y0 + h) / side};
            placed = true;
            for (const GroundTruthBox& t : scene.truths)
                if (iou(cand, t.box) > 0.3) {
                    placed = false;
                    break;
                }
        }
        const double intensity =
            std::uniform_real_distribution<double>(cat.intensity_lo, cat.intensity_hi)(rng);
        render_object(scene.image, cat, x0, y0, w, h, intensity);
        GroundTruthBox t;
        t.class_id = cls;
        t.box = Box{static_cast<double>(x0) / side, static_cast<double>(y0) / side,
                    static_cast<double>(x0 + w) / side, static_cast<double>(y0 + h) / side};
        scene.truths.push_back(t);
    }

    if (cfg.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
        for (double& v : scene.image.data) v = std::clamp(v + noise(rng), 0.0, 1.0);
    }
    return scene;
}

ClassSplit split_classes(int num_categories, int split_id) {
    if (split_id < 1 || split_id > 3) throw DataError("split_classes: split_id must be 1, 2 or 3");
    if (num_categories < 5) throw DataError("split_classes: too few categories to split");
    const int n_target = std::max(1, num_categories / 4);  // mirrors the 15:5 seen/unseen ratio
    const int stride = std::max(1, num_categories / n_target);
    ClassSplit split;
    for (int j = 0; j < n_target; ++j)
        split.target.push_back((split_id - 1 + j * stride) % num_categories);
    std::sort(split.target.begin(), split.target.end());
    if (std::adjacent_find(split.target.begin(), split.target.end()) != split.target.end())
        throw DataError("split_classes: degenerate category count");
    for (int c = 0; c < num_categories; ++c)
        if (!std::binary_search(split.target.begin(), split.target.end(), c))
            split.source.push_back(c);
    return split;
}

Episode sample_episode(const std::vector<Scene>& pool, const EpisodeSpec& spec) {
    if (spec.shots < 1) throw DataError("sample_episode: shots must be >= 1");
    if (spec.target_classes.empty()) throw DataError("sample_episode: no target classes");

    std::vector<int> order(pool.size());
    for (size_t i = 0; i < pool.size(); ++i) order[i] = static_cast<int>(i);
    std::mt19937_64 rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<int> want(spec.target_classes.size(), spec.shots);
    auto class_slot = [&spec](int cls) {
        for (size_t i = 0; i < spec.target_classes.size(); ++i)
            if (spec.target_classes[i] == cls) return static_cast<int>(i);
        return -1;
    };

    Episode ep;
    ep.spec = spec;
    for (int idx : order) {
        const Scene& s = pool[idx];
        std::vector<int> delta(want.size(), 0);
        bool usable = !s.truths.empty();
        for (const GroundTruthBox& t : s.truths) {
            const int slot = class_slot(t.class_id);
            if (slot < 0) throw DataError("sample_episode: pool leaks a non-target class");
            ++delta[slot];
        }
        for (size_t i = 0; i < want.size() && usable; ++i)
            if (delta[i] > want[i]) usable = false;
        bool helpful = false;
        for (size_t i = 0; i < want.size(); ++i) helpful = helpful || (delta[i] > 0 && want[i] > 0);
        if (!usable || !helpful) continue;
        ep.scenes.push_back(s);
        for (size_t i = 0; i < want.size(); ++i) want[i] -= delta[i];
        if (std::all_of(want.begin(), want.end(), [](int w) { return w == 0; })) return ep;
    }
    throw DataError("sample_episode: pool cannot supply the requested shot counts");
}

Dataset make_dataset(const SyntheticConfig& cfg, int split_id, int n_source, int n_target_pool,
                     int n_target_test, unsigned long long seed) {
    cfg.validate();
    Dataset ds;
    ds.cfg = cfg;
    ds.split_id = split_id;
    ds.split = split_classes(static_cast<int>(cfg.categories.size()), split_id);
    ds.seed = seed;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < n_source; ++i) ds.source.push_back(generate_scene(cfg, ds.split.source, rng));
    for (int i = 0; i < n_target_pool; ++i)
        ds.target_pool.push_back(generate_scene(cfg, ds.split.target, rng));
    for (int i = 0; i < n_target_test; ++i)
        ds.target_test.push_back(generate_scene(cfg, ds.split.target, rng));
    return ds;
}

// ---------------------------------------------------------------------------
// persistence

static json category_to_json(const CategorySpec& c) {
    return json{{"shape", shape_name(c.shape)},
                {"intensity_lo", c.intensity_lo},
                {"intensity_hi", c.intensity_hi},
                {"texture_period", c.texture_period}};
}

static CategorySpec category_from_json(const json& j) {
    CategorySpec c;
    c.shape = shape_from_name(j.at("shape").get<std::string>());
    c.intensity_lo = j.at("intensity_lo").get<double>();
    c.intensity_hi = j.at("intensity_hi").get<double>();
    c.texture_period = j.at("texture_period").get<int>();
    return c;
}

json synthetic_config_to_json(const SyntheticConfig& cfg);
SyntheticConfig synthetic_config_from_json(const json& j);

json synthetic_config_to_json(const SyntheticConfig& cfg) {
    json cats = json::array();
    for (const CategorySpec& c : cfg.categories) cats.push_back(category_to_json(c));
    return json{{"image_side", cfg.image_side},   {"categories", cats},
                {"min_objects", cfg.min_objects}, {"max_objects", cfg.max_objects},
                {"noise_sigma", cfg.noise_sigma}, {"clutter_density", cfg.clutter_density},
                {"min_extent", cfg.min_extent},   {"max_extent", cfg.max_extent}};
}

SyntheticConfig synthetic_config_from_json(const json& j) {
    SyntheticConfig cfg;
    cfg.image_side = j.at("image_side").get<int>();
    for (const json& c : j.at("categories")) cfg.categories.push_back(category_from_json(c));
    cfg.min_objects = j.at("min_objects").get<int>();
    cfg.max_objects = j.at("max_objects").get<int>();
    cfg.noise_sigma = j.at("noise_sigma").get<double>();
    cfg.clutter_density = j.at("clutter_density").get<double>();
    cfg.min_extent = j.at("min_extent").get<double>();
    cfg.max_extent = j.at("max_extent").get<double>();
    return cfg;
}

static void write_image(const fs::path& path, const Matrix& image) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    const int32_t dims[2] = {image.rows, image.cols};
    f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    f.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size() * sizeof(double)));
}

static Matrix read_image(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path.string());
    int32_t dims[2] = {0, 0};
    f.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!f || dims[0] <= 0 || dims[1] <= 0) throw DataError("corrupt scene file " + path.string());
    Matrix image(dims[0], dims[1]);
    f.read(reinterpret_cast<char*>(image.data.data()),
           static_cast<std::streamsize>(image.data.size() * sizeof(double)));
    if (!f) throw DataError("truncated scene file " + path.string());
    return image;
}

static json truths_to_json(const std::vector<GroundTruthBox>& truths) {
    json arr = json::array();
    for (const GroundTruthBox& t : truths)
        arr.push_back(json{{"class_id", t.class_id},
                           {"box", {t.box.xmin, t.box.ymin, t.box.xmax, t.box.ymax}},
                           {"difficult", t.difficult}});
    return arr;
}

static std::vector<GroundTruthBox> truths_from_json(const json& arr) {
    std::vector<GroundTruthBox> truths;
    for (const json& j : arr) {
        GroundTruthBox t;
        t.class_id = j.at("class_id").get<int>();
        const json& b = j.at("box");
        t.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                    b.at(3).get<double>()};
        t.difficult = j.at("difficult").get<bool>();
        truths.push_back(t);
    }
    return truths;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "scenes");
    json manifest;
    manifest["format"] = "sctdet-dataset-v1";
    manifest["config"] = synthetic_config_to_json(ds.cfg);
    manifest["split_id"] = ds.split_id;
    manifest["source_classes"] = ds.split.source;
    manifest["target_classes"] = ds.split.target;
    manifest["seed"] = ds.seed;
    const struct {
        const char* name;
        const std::vector<Scene>* scenes;
    } parts[] = {{"source", &ds.source}, {"target_pool", &ds.target_pool},
                 {"target_test", &ds.target_test}};
    for (const auto& part : parts) {
        json arr = json::array();
        for (size_t i = 0; i < part.scenes->size(); ++i) {
            const std::string file = std::string(part.name) + "_" + std::to_string(i) + ".bin";
            write_image(fs::path(dir) / "scenes" / file, (*part.scenes)[i].image);
            arr.push_back(json{{"file", file}, {"truths", truths_to_json((*part.scenes)[i].truths)}});
        }
        manifest[part.name] = arr;
    }
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw DataError("cannot write manifest in " + dir);
    f << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw DataError("no manifest.json in " + dir);
    json manifest;
    try {
        f >> manifest;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad manifest: ") + e.what());
    }
    Dataset ds;
    try {
        ds.cfg = synthetic_config_from_json(manifest.at("config"));
        ds.split_id = manifest.at("split_id").get<int>();
        ds.split.source = manifest.at("source_classes").get<std::vector<int>>();
        ds.split.target = manifest.at("target_classes").get<std::vector<int>>();
        ds.seed = manifest.at("seed").get<unsigned long long>();
        const struct {
            const char* name;
            std::vector<Scene>* scenes;
        } parts[] = {{"source", &ds.source}, {"target_pool", &ds.target_pool},
                     {"target_test", &ds.target_test}};
        for (const auto& part : parts) {
            for (const json& item : manifest.at(part.name)) {
                Scene s;
                s.image = read_image(fs::path(dir) / "scenes" / item.at("file").get<std::string>());
                s.truths = truths_from_json(item.at("truths"));
                part.scenes->push_back(std::move(s));
            }
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bad manifest: ") + e.what());
    }
    return ds;
}

}  // namespace sctdet
