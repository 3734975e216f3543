#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "layoutlab/encoders.hpp"
#include "layoutlab/geometry.hpp"
#include "layoutlab/rng.hpp"
#include "layoutlab/tensor.hpp"

namespace layoutlab::scenes {

using encoders::Layout;
using numcore::Tensor;

enum class ShapeKind { Circle, Square, Triangle };

struct Rgb {
    double r, g, b;
};

// Entity palette; backgrounds use gray so every entity color stays far
// from it in Linf distance.
inline constexpr std::array<const char*, 4> kColorNames{"red", "green", "blue", "yellow"};
inline constexpr std::array<Rgb, 4> kColors{Rgb{1, 0, 0}, Rgb{0, 1, 0}, Rgb{0, 0, 1}, Rgb{1, 1, 0}};
inline constexpr Rgb kBackground{0.5, 0.5, 0.5};

const char* shape_name(ShapeKind s);

struct SceneEntity {
    ShapeKind shape;
    int color;  // index into kColors
    BBox box;   // snapped to the cell grid
};

struct SceneSpec {
    std::vector<SceneEntity> entities;
};

struct SceneConfig {
    int64_t image_size = 32;
    int64_t grid = 8;          // boxes snap to this many cells per axis
    int64_t min_entities = 1;
    int64_t max_entities = 4;
    int64_t min_box_cells = 2;
    int64_t max_box_cells = 4;
};

struct Scene {
    SceneSpec spec;
    Layout layout;
    Tensor image;  // [3,size,size] in [0,1]
};

// Deterministic scene from a seed: grid-snapped non-touching boxes and a
// template caption per entity ("a <color> <shape>").
Scene gen_scene(const SceneConfig& cfg, uint64_t seed);

Tensor rasterize(const SceneSpec& spec, int64_t size);
Layout caption_scene(const SceneSpec& spec);

// Deterministic region-wise scorer standing in for a VLM judge.
struct OracleConfig {
    double color_distance = 0.25;  // Linf threshold that separates foreground
    double fill_fraction = 0.30;   // in-box foreground coverage for a spatial hit
    double shape_iou = 0.60;       // template match threshold
};

struct EntityVerdict {
    bool spatial = false;
    bool color = false;
    bool shape = false;
};

struct OracleReport {
    std::vector<EntityVerdict> entities;
    double spatial_rate = 0.0;
    double color_rate = 0.0;
    double shape_rate = 0.0;
};

OracleReport oracle_eval(const Tensor& image, const Layout& layout, const OracleConfig& cfg = {});

// Dataset directory layout: manifest.json naming layout/image/tensor
// files, images as binary P6 pixmaps plus raw tensor mirrors.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

void write_dataset(const std::string& dir, const std::vector<Scene>& scenes);
std::vector<Scene> load_dataset(const std::string& dir);

}  // namespace layoutlab::scenes
