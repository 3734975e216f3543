#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace layoutlab::metrics {

// Deterministic float formatting for reproducible CSV/SVG bytes.
std::string fmt(double v);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Minimal polyline line chart, no external renderer.
struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<Series>& series);

uint64_t fnv1a(const std::string& text);

}  // namespace layoutlab::metrics
