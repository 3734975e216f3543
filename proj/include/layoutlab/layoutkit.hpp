#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layoutlab/encoders.hpp"
#include "layoutlab/geometry.hpp"

namespace layoutlab::layoutkit {

// Rule-based layout checks. Format mode verifies corner ordering and
// image bounds; dataset mode adds the collection rules (entity area at
// least 2% of the image, 3 to 10 entities per layout).
enum class Mode { Format, Dataset };

Mode mode_from_name(const std::string& name);

struct RuleVerdict {
    std::string rule;
    bool pass = true;
    std::string detail;
};

struct EntityReport {
    std::vector<RuleVerdict> rules;
    bool valid = true;
};

struct ValidationReport {
    std::vector<EntityReport> entities;
    std::vector<RuleVerdict> layout_rules;  // rules on the layout as a whole
    bool valid = true;
    double accuracy = 1.0;  // valid entities / total entities

    std::string to_json() const;
};

ValidationReport validate(const encoders::Layout& layout, Mode mode);

// Coarse spatial inputs and their conversion to boxes. Conversion rules:
// masks take the tight box over set cells; scribbles take the point
// extent padded by 5% of each image dimension; center points take a
// square of the given size, shifted inward to stay in bounds. Every
// output passes format validation.
struct MaskGrid {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<uint8_t> cells;  // row-major 0/1

    bool at(int64_t r, int64_t c) const { return cells[static_cast<size_t>(r * cols + c)] != 0; }
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

BBox mask_to_bbox(const MaskGrid& mask);
BBox scribble_to_bbox(const std::vector<Point>& points, double pad = 0.05);
BBox point_to_bbox(const Point& center, double size = 0.2);

// Coarse-input JSON for the CLI: {"type":"mask","rows":["0110",...]} or
// {"type":"scribble","points":[[x,y],...]} or
// {"type":"point","center":[x,y],"size":0.2}, each with an optional
// "caption". Returns a single-entity layout. A non-empty type_override
// wins over the "type" field (the CLI flags use it).
encoders::Layout convert_coarse_input(const std::string& json_text,
                                      const std::string& type_override = "");

}  // namespace layoutlab::layoutkit
