// Synthetic scene generation: procedurally rendered shapes with exact ground
// truth, source/target category splits, and N-shot episode sampling.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "sctdet/box.hpp"
#include "sctdet/matrix.hpp"

namespace sctdet {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ShapeKind { Square, Disc, Cross, Bar, Ring, Triangle };

std::string shape_name(ShapeKind s);
ShapeKind shape_from_name(const std::string& name);

struct CategorySpec {
    ShapeKind shape = ShapeKind::Square;
    double intensity_lo = 0.5;
    double intensity_hi = 0.9;
    int texture_period = 0;  // 0 = solid fill, otherwise diagonal stripe period in pixels
};

struct SyntheticConfig {
    int image_side = 64;
    std::vector<CategorySpec> categories;
    int min_objects = 1;
    int max_objects = 4;
    double noise_sigma = 0.02;
    double clutter_density = 0.002;  // speckles per pixel
    double min_extent = 0.18;         // object size as a fraction of the side
    double max_extent = 0.42;

    void validate() const;
};

// Six shapes x three texture periods = 18 pairwise distinct categories; pairs
// sharing a shape but not a texture are deliberately confusable.
std::vector<CategorySpec> default_categories();

struct Scene {
    Matrix image;  // image_side x image_side, values in [0, 1]
    std::vector<GroundTruthBox> truths;
};

// Renders 1..max objects drawn uniformly from class_pool, with clutter and
// noise. Truth boxes are the exact rendered extents, normalized by the side.
Scene generate_scene(const SyntheticConfig& cfg, const std::vector<int>& class_pool,
                     std::mt19937_64& rng);

// Deterministic source/target partition for split_id in {1, 2, 3}; the target
// share mirrors a 15:5 seen/unseen ratio (floor(n/4) target classes).
struct ClassSplit {
    std::vector<int> source;
    std::vector<int> target;
};
ClassSplit split_classes(int num_categories, int split_id);

struct EpisodeSpec {
    int shots = 1;  // object instances per target class
    std::vector<int> target_classes;
    unsigned long long seed = 0;
};

struct Episode {
    std::vector<Scene> scenes;
    EpisodeSpec spec;
};

// Picks scenes from the pool so the episode holds exactly N instances of each
// target class. Throws DataError if the pool cannot supply them.
Episode sample_episode(const std::vector<Scene>& pool, const EpisodeSpec& spec);

struct Dataset {
    SyntheticConfig cfg;
    int split_id = 1;
    ClassSplit split;
    std::vector<Scene> source;
    std::vector<Scene> target_pool;
    std::vector<Scene> target_test;
    unsigned long long seed = 0;
};

Dataset make_dataset(const SyntheticConfig& cfg, int split_id, int n_source, int n_target_pool,
                     int n_target_test, unsigned long long seed);

// Directory of raw scene files plus a JSON manifest.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace sctdet
