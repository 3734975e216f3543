#include "layoutlab/layoutkit.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

namespace layoutlab::layoutkit {

using nlohmann::json;

Mode mode_from_name(const std::string& name) {
    if (name == "format") return Mode::Format;
    if (name == "dataset") return Mode::Dataset;
    throw std::invalid_argument("unknown validation mode '" + name + "' (format|dataset)");
}

namespace {

constexpr double kMinArea = 0.02;
constexpr int64_t kMinEntities = 3;
constexpr int64_t kMaxEntities = 10;

std::string box_str(const BBox& b) {
    return "[" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) +
           "," + std::to_string(b.y1) + "]";
}

}  // namespace

ValidationReport validate(const encoders::Layout& layout, Mode mode) {
    ValidationReport report;
    int64_t valid_entities = 0;
    for (const auto& entity : layout.entities) {
        EntityReport er;
        const BBox& b = entity.box;

        RuleVerdict order{"corner-order", b.x0 < b.x1 && b.y0 < b.y1,
                          "top-left must precede bottom-right in " + box_str(b)};
        er.rules.push_back(order);

        RuleVerdict bounds{"bounds", b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= 1.0 && b.y1 <= 1.0,
                           "box must stay inside the unit image, got " + box_str(b)};
        er.rules.push_back(bounds);

        if (mode == Mode::Dataset) {
            const double area = std::max(0.0, b.x1 - b.x0) * std::max(0.0, b.y1 - b.y0);
            RuleVerdict min_area{"min-area", area >= kMinArea,
                                 "box covers " + std::to_string(area * 100.0) + "% of the image"};
            er.rules.push_back(min_area);
        }

        er.valid = std::all_of(er.rules.begin(), er.rules.end(),
                               [](const RuleVerdict& r) { return r.pass; });
        valid_entities += er.valid ? 1 : 0;
        report.entities.push_back(std::move(er));
    }

    if (mode == Mode::Dataset) {
        const int64_t n = static_cast<int64_t>(layout.entities.size());
        report.layout_rules.push_back(
            RuleVerdict{"entity-count", n >= kMinEntities && n <= kMaxEntities,
                        std::to_string(n) + " entities, expected 3 to 10"});
    }

    report.valid = valid_entities == static_cast<int64_t>(layout.entities.size()) &&
                   std::all_of(report.layout_rules.begin(), report.layout_rules.end(),
                               [](const RuleVerdict& r) { return r.pass; });
    report.accuracy = layout.entities.empty()
                          ? (report.valid ? 1.0 : 0.0)
                          : static_cast<double>(valid_entities) /
                                static_cast<double>(layout.entities.size());
    return report;
}

std::string ValidationReport::to_json() const {
    json j;
    j["valid"] = valid;
    j["accuracy"] = accuracy;
    j["entities"] = json::array();
    for (const auto& e : entities) {
        json je;
        je["valid"] = e.valid;
        je["rules"] = json::array();
        for (const auto& r : e.rules)
            je["rules"].push_back({{"rule", r.rule}, {"pass", r.pass}, {"detail", r.detail}});
        j["entities"].push_back(je);
    }
    j["layout_rules"] = json::array();
    for (const auto& r : layout_rules)
        j["layout_rules"].push_back({{"rule", r.rule}, {"pass", r.pass}, {"detail", r.detail}});
    return j.dump(2);
}

BBox mask_to_bbox(const MaskGrid& mask) {
    if (mask.rows <= 0 || mask.cols <= 0) throw std::invalid_argument("mask grid is empty");
    int64_t r0 = mask.rows, c0 = mask.cols, r1 = -1, c1 = -1;
    for (int64_t r = 0; r < mask.rows; ++r)
        for (int64_t c = 0; c < mask.cols; ++c)
            if (mask.at(r, c)) {
                r0 = std::min(r0, r);
                c0 = std::min(c0, c);
                r1 = std::max(r1, r);
                c1 = std::max(c1, c);
            }
    if (r1 < 0) throw std::invalid_argument("mask has no set cells");
    return BBox{static_cast<double>(c0) / static_cast<double>(mask.cols),
                static_cast<double>(r0) / static_cast<double>(mask.rows),
                static_cast<double>(c1 + 1) / static_cast<double>(mask.cols),
                static_cast<double>(r1 + 1) / static_cast<double>(mask.rows)};
}

BBox scribble_to_bbox(const std::vector<Point>& points, double pad) {
    if (points.size() < 2) throw std::invalid_argument("scribble needs at least two points");
    double x0 = points[0].x, y0 = points[0].y, x1 = points[0].x, y1 = points[0].y;
    for (const auto& p : points) {
        if (p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0)
            throw std::invalid_argument("scribble point outside the unit square");
        x0 = std::min(x0, p.x);
        y0 = std::min(y0, p.y);
        x1 = std::max(x1, p.x);
        y1 = std::max(y1, p.y);
    }
    return BBox{std::max(0.0, x0 - pad), std::max(0.0, y0 - pad), std::min(1.0, x1 + pad),
                std::min(1.0, y1 + pad)};
}

BBox point_to_bbox(const Point& center, double size) {
    if (center.x < 0.0 || center.x > 1.0 || center.y < 0.0 || center.y > 1.0)
        throw std::invalid_argument("center point outside the unit square");
    if (size <= 0.0 || size > 1.0) throw std::invalid_argument("size hint must be in (0,1]");
    double x0 = center.x - 0.5 * size;
    double y0 = center.y - 0.5 * size;
    x0 = std::clamp(x0, 0.0, 1.0 - size);
    y0 = std::clamp(y0, 0.0, 1.0 - size);
    return BBox{x0, y0, x0 + size, y0 + size};
}

encoders::Layout convert_coarse_input(const std::string& json_text,
                                      const std::string& type_override) {
    const json j = json::parse(json_text);
    const std::string type =
        !type_override.empty() ? type_override : j.at("type").get<std::string>();
    BBox box;
    if (type == "mask") {
        MaskGrid mask;
        const auto& rows = j.at("rows");
        mask.rows = static_cast<int64_t>(rows.size());
        for (const auto& row : rows) {
            const std::string s = row.get<std::string>();
            if (mask.cols == 0) mask.cols = static_cast<int64_t>(s.size());
            if (static_cast<int64_t>(s.size()) != mask.cols)
                throw std::invalid_argument("mask rows must have equal length");
            for (char ch : s) mask.cells.push_back(ch == '0' ? 0 : 1);
        }
        box = mask_to_bbox(mask);
    } else if (type == "scribble") {
        std::vector<Point> points;
        for (const auto& p : j.at("points")) points.push_back(Point{p[0].get<double>(), p[1].get<double>()});
        box = scribble_to_bbox(points);
    } else if (type == "point") {
        const auto& c = j.at("center");
        const double size = j.contains("size") ? j.at("size").get<double>() : 0.2;
        box = point_to_bbox(Point{c[0].get<double>(), c[1].get<double>()}, size);
    } else {
        throw std::invalid_argument("unknown coarse input type '" + type + "'");
    }
    encoders::Layout layout;
    layout.caption = j.contains("caption") ? j.at("caption").get<std::string>() : "a shape";
    layout.entities.push_back(
        encoders::Entity{box, j.contains("caption") ? j.at("caption").get<std::string>() : "a shape"});
    return layout;
}

}  // namespace layoutlab::layoutkit
