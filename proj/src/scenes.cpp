#include "layoutlab/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace layoutlab::scenes {

namespace fs = std::filesystem;
using nlohmann::json;

const char* shape_name(ShapeKind s) {
    switch (s) {
        case ShapeKind::Circle: return "circle";
        case ShapeKind::Square: return "square";
        case ShapeKind::Triangle: return "triangle";
    }
    throw std::logic_error("unreachable shape");
}

namespace {

struct PixBox {
    int64_t x0, y0, x1, y1;  // half-open pixel ranges
    int64_t width() const { return x1 - x0; }
    int64_t height() const { return y1 - y0; }
    int64_t area() const { return width() * height(); }
};

PixBox to_pixels(const BBox& b, int64_t size) {
    const auto snap = [size](double v) {
        return std::clamp<int64_t>(std::llround(v * static_cast<double>(size)), 0, size);
    };
    return PixBox{snap(b.x0), snap(b.y0), snap(b.x1), snap(b.y1)};
}

// Anti-alias-free membership tests used both by the rasterizer and by the
// oracle's shape templates, so a clean rendering matches its own template
// exactly.
bool inside_shape(ShapeKind kind, const PixBox& box, int64_t x, int64_t y) {
    switch (kind) {
        case ShapeKind::Square:
            return true;
        case ShapeKind::Circle: {
            const double cx = 0.5 * static_cast<double>(box.x0 + box.x1);
            const double cy = 0.5 * static_cast<double>(box.y0 + box.y1);
            const double rx = 0.5 * static_cast<double>(box.width());
            const double ry = 0.5 * static_cast<double>(box.height());
            const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
            const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
            return dx * dx + dy * dy <= 1.0;
        }
        case ShapeKind::Triangle: {
            // Isosceles, apex at the top center, base along the bottom.
            const double fy = (static_cast<double>(y) + 0.5 - static_cast<double>(box.y0)) /
                              static_cast<double>(box.height());
            const double cx = 0.5 * static_cast<double>(box.x0 + box.x1);
            const double half = 0.5 * fy * static_cast<double>(box.width());
            const double dx = std::abs(static_cast<double>(x) + 0.5 - cx);
            return fy >= 0.0 && fy <= 1.0 && dx <= half;
        }
    }
    return false;
}

}  // namespace

Tensor rasterize(const SceneSpec& spec, int64_t size) {
    Tensor img({3, size, size});
    const double bg[3] = {kBackground.r, kBackground.g, kBackground.b};
    for (int64_t c = 0; c < 3; ++c)
        std::fill(img.data.begin() + c * size * size, img.data.begin() + (c + 1) * size * size,
                  bg[c]);
    for (const auto& e : spec.entities) {
        const PixBox box = to_pixels(e.box, size);
        const Rgb color = kColors[static_cast<size_t>(e.color)];
        const double rgb[3] = {color.r, color.g, color.b};
        for (int64_t y = box.y0; y < box.y1; ++y)
            for (int64_t x = box.x0; x < box.x1; ++x)
                if (inside_shape(e.shape, box, x, y))
                    for (int64_t c = 0; c < 3; ++c)
                        img.data[static_cast<size_t>(c * size * size + y * size + x)] = rgb[c];
    }
    return img;
}

Layout caption_scene(const SceneSpec& spec) {
    Layout layout;
    std::string global;
    for (size_t i = 0; i < spec.entities.size(); ++i) {
        const auto& e = spec.entities[i];
        const std::string region =
            std::string("a ") + kColorNames[static_cast<size_t>(e.color)] + " " + shape_name(e.shape);
        layout.entities.push_back(encoders::Entity{e.box, region});
        if (i > 0) global += " and ";
        global += region;
    }
    layout.caption = global.empty() ? "a gray background" : global;
    return layout;
}

Scene gen_scene(const SceneConfig& cfg, uint64_t seed) {
    Rng rng = Rng(seed).substream("scene");
    const int64_t g = cfg.grid;

    SceneSpec spec;
    const int64_t want = rng.uniform_int(cfg.min_entities, cfg.max_entities);
    std::vector<PixBox> cells;  // cell-space boxes, for the gap test
    for (int64_t n = 0; n < want; ++n) {
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            const int64_t w = rng.uniform_int(cfg.min_box_cells, std::min(cfg.max_box_cells, g));
            const int64_t h = rng.uniform_int(cfg.min_box_cells, std::min(cfg.max_box_cells, g));
            const int64_t x0 = rng.uniform_int(0, g - w);
            const int64_t y0 = rng.uniform_int(0, g - h);
            const PixBox cand{x0, y0, x0 + w, y0 + h};
            // One free cell between boxes keeps the rendered shapes
            // disconnected from each other.
            bool ok = true;
            for (const auto& other : cells) {
                const bool apart = cand.x1 + 1 <= other.x0 || other.x1 + 1 <= cand.x0 ||
                                   cand.y1 + 1 <= other.y0 || other.y1 + 1 <= cand.y0;
                if (!apart) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;
            cells.push_back(cand);
            SceneEntity e;
            e.shape = static_cast<ShapeKind>(rng.uniform_int(0, 2));
            e.color = static_cast<int>(rng.uniform_int(0, 3));
            e.box = BBox{static_cast<double>(cand.x0) / static_cast<double>(g),
                         static_cast<double>(cand.y0) / static_cast<double>(g),
                         static_cast<double>(cand.x1) / static_cast<double>(g),
                         static_cast<double>(cand.y1) / static_cast<double>(g)};
            spec.entities.push_back(e);
            placed = true;
        }
        if (!placed) break;  // crowded grid, settle for fewer entities
    }
    if (spec.entities.empty())
        throw std::logic_error("scene generation placed no entities; grid too small");

    Scene scene;
    scene.spec = spec;
    scene.layout = caption_scene(spec);
    scene.image = rasterize(spec, cfg.image_size);
    return scene;
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

namespace {

double channel_median(std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    return values[mid];
}

Rgb estimate_background(const Tensor& image, const std::vector<PixBox>& boxes, int64_t size) {
    std::vector<double> r, g, b;
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
            bool outside = true;
            for (const auto& box : boxes)
                if (x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1) {
                    outside = false;
                    break;
                }
            if (!outside) continue;
            r.push_back(image.data[static_cast<size_t>(0 * size * size + y * size + x)]);
            g.push_back(image.data[static_cast<size_t>(1 * size * size + y * size + x)]);
            b.push_back(image.data[static_cast<size_t>(2 * size * size + y * size + x)]);
        }
    if (r.empty()) {
        for (int64_t i = 0; i < size * size; ++i) {
            r.push_back(image.data[static_cast<size_t>(i)]);
            g.push_back(image.data[static_cast<size_t>(size * size + i)]);
            b.push_back(image.data[static_cast<size_t>(2 * size * size + i)]);
        }
    }
    return Rgb{channel_median(r), channel_median(g), channel_median(b)};
}

struct ParsedCaption {
    int color = -1;
    int shape = -1;
};

ParsedCaption parse_caption(const std::string& caption) {
    ParsedCaption out;
    std::istringstream ss(caption);
    std::string word;
    while (ss >> word) {
        for (size_t i = 0; i < kColorNames.size(); ++i)
            if (out.color < 0 && word == kColorNames[i]) out.color = static_cast<int>(i);
        for (int s = 0; s < 3 && out.shape < 0; ++s)
            if (word == shape_name(static_cast<ShapeKind>(s))) out.shape = s;
    }
    return out;
}

}  // namespace

OracleReport oracle_eval(const Tensor& image, const Layout& layout, const OracleConfig& cfg) {
    if (image.shape.size() != 3 || image.shape[0] != 3 || image.shape[1] != image.shape[2])
        throw std::invalid_argument("oracle expects a square [3,H,H] image");
    const int64_t size = image.shape[1];

    std::vector<PixBox> boxes;
    boxes.reserve(layout.entities.size());
    for (const auto& e : layout.entities) boxes.push_back(to_pixels(e.box, size));

    const Rgb bg = estimate_background(image, boxes, size);
    auto pixel = [&](int64_t c, int64_t y, int64_t x) {
        return image.data[static_cast<size_t>(c * size * size + y * size + x)];
    };
    auto is_foreground = [&](int64_t y, int64_t x) {
        const double d = std::max({std::abs(pixel(0, y, x) - bg.r), std::abs(pixel(1, y, x) - bg.g),
                                   std::abs(pixel(2, y, x) - bg.b)});
        return d > cfg.color_distance;
    };

    OracleReport report;
    for (size_t idx = 0; idx < layout.entities.size(); ++idx) {
        const auto& entity = layout.entities[idx];
        const PixBox box = boxes[idx];
        EntityVerdict verdict;
        const ParsedCaption want = parse_caption(entity.caption);

        if (box.area() > 0) {
            // Foreground mask restricted to the box.
            std::vector<uint8_t> fg(static_cast<size_t>(box.area()), 0);
            int64_t count = 0;
            double cx = 0.0, cy = 0.0;
            for (int64_t y = box.y0; y < box.y1; ++y)
                for (int64_t x = box.x0; x < box.x1; ++x)
                    if (is_foreground(y, x)) {
                        fg[static_cast<size_t>((y - box.y0) * box.width() + (x - box.x0))] = 1;
                        ++count;
                        cx += static_cast<double>(x) + 0.5;
                        cy += static_cast<double>(y) + 0.5;
                    }

            if (count > 0) {
                cx /= static_cast<double>(count);
                cy /= static_cast<double>(count);
                const bool centroid_in = cx >= static_cast<double>(box.x0) &&
                                         cx <= static_cast<double>(box.x1) &&
                                         cy >= static_cast<double>(box.y0) &&
                                         cy <= static_cast<double>(box.y1);
                verdict.spatial = static_cast<double>(count) >=
                                      cfg.fill_fraction * static_cast<double>(box.area()) &&
                                  centroid_in;

                // Color: nearest palette entry to the median foreground color.
                if (want.color >= 0) {
                    std::vector<double> r, g, b;
                    for (int64_t y = box.y0; y < box.y1; ++y)
                        for (int64_t x = box.x0; x < box.x1; ++x)
                            if (fg[static_cast<size_t>((y - box.y0) * box.width() + (x - box.x0))]) {
                                r.push_back(pixel(0, y, x));
                                g.push_back(pixel(1, y, x));
                                b.push_back(pixel(2, y, x));
                            }
                    const Rgb med{channel_median(r), channel_median(g), channel_median(b)};
                    int best = -1;
                    double best_d = 0.0;
                    for (size_t ci = 0; ci < kColors.size(); ++ci) {
                        const double dr = med.r - kColors[ci].r;
                        const double dg = med.g - kColors[ci].g;
                        const double db = med.b - kColors[ci].b;
                        const double d2 = dr * dr + dg * dg + db * db;
                        if (best < 0 || d2 < best_d) {
                            best = static_cast<int>(ci);
                            best_d = d2;
                        }
                    }
                    verdict.color = best == want.color;
                }

                // Shape: best-IoU template fitted to the foreground extent.
                if (want.shape >= 0) {
                    int64_t ex0 = box.x1, ey0 = box.y1, ex1 = box.x0, ey1 = box.y0;
                    for (int64_t y = box.y0; y < box.y1; ++y)
                        for (int64_t x = box.x0; x < box.x1; ++x)
                            if (fg[static_cast<size_t>((y - box.y0) * box.width() + (x - box.x0))]) {
                                ex0 = std::min(ex0, x);
                                ey0 = std::min(ey0, y);
                                ex1 = std::max(ex1, x + 1);
                                ey1 = std::max(ey1, y + 1);
                            }
                    const PixBox extent{ex0, ey0, ex1, ey1};
                    int best = -1;
                    double best_iou = 0.0;
                    for (int s = 0; s < 3; ++s) {
                        int64_t inter = 0, uni = 0;
                        for (int64_t y = box.y0; y < box.y1; ++y)
                            for (int64_t x = box.x0; x < box.x1; ++x) {
                                const bool in_fg = fg[static_cast<size_t>((y - box.y0) * box.width() +
                                                                          (x - box.x0))] != 0;
                                const bool in_template =
                                    x >= extent.x0 && x < extent.x1 && y >= extent.y0 &&
                                    y < extent.y1 &&
                                    inside_shape(static_cast<ShapeKind>(s), extent, x, y);
                                inter += in_fg && in_template;
                                uni += in_fg || in_template;
                            }
                        const double iou_s =
                            uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
                        if (iou_s > best_iou) {
                            best_iou = iou_s;
                            best = s;
                        }
                    }
                    verdict.shape = best_iou >= cfg.shape_iou && best == want.shape;
                }
            }
        }
        report.entities.push_back(verdict);
    }

    const double n = static_cast<double>(report.entities.size());
    if (n > 0) {
        for (const auto& v : report.entities) {
            report.spatial_rate += v.spatial ? 1.0 : 0.0;
            report.color_rate += v.color ? 1.0 : 0.0;
            report.shape_rate += v.shape ? 1.0 : 0.0;
        }
        report.spatial_rate /= n;
        report.color_rate /= n;
        report.shape_rate /= n;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Dataset I/O
// ---------------------------------------------------------------------------

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.shape.size() != 3 || image.shape[0] != 3)
        throw std::invalid_argument("ppm writer expects [3,H,W]");
    const int64_t h = image.shape[1], w = image.shape[2];
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "P6\n" << w << " " << h << "\n255\n";
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                const double v = image.data[static_cast<size_t>(c * h * w + y * w + x)];
                out.put(static_cast<char>(
                    std::clamp<int>(static_cast<int>(std::lround(v * 255.0)), 0, 255)));
            }
}

Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string magic;
    int64_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255) throw std::runtime_error("unsupported pixmap " + path);
    in.get();  // single whitespace after the header
    Tensor img({3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                const int v = in.get();
                if (v < 0) throw std::runtime_error("truncated pixmap " + path);
                img.data[static_cast<size_t>(c * h * w + y * w + x)] =
                    static_cast<double>(v) / 255.0;
            }
    return img;
}

void write_dataset(const std::string& dir, const std::vector<Scene>& scenes) {
    fs::create_directories(dir);
    json manifest;
    manifest["count"] = scenes.size();
    manifest["items"] = json::array();
    for (size_t i = 0; i < scenes.size(); ++i) {
        const std::string stem = "scene_" + std::to_string(i);
        encoders::save_layout(dir + "/" + stem + ".json", scenes[i].layout);
        write_ppm(dir + "/" + stem + ".ppm", scenes[i].image);
        numcore::save_tnsr(dir + "/" + stem + ".tnsr", scenes[i].image);
        manifest["items"].push_back({{"layout", stem + ".json"},
                                     {"image", stem + ".ppm"},
                                     {"tensor", stem + ".tnsr"}});
    }
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

std::vector<Scene> load_dataset(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw std::runtime_error("no manifest in " + dir);
    json manifest;
    in >> manifest;
    std::vector<Scene> scenes;
    for (const auto& item : manifest.at("items")) {
        Scene s;
        s.layout = encoders::load_layout(dir + "/" + item.at("layout").get<std::string>());
        s.image = numcore::load_tnsr(dir + "/" + item.at("tensor").get<std::string>());
        scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace layoutlab::scenes
