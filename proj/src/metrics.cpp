#include "layoutlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace layoutlab::metrics {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw std::invalid_argument("csv row width " + std::to_string(row.size()) +
                                        " does not match header " + std::to_string(header.size()));
        for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << "\n";
    }
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

}  // namespace

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<Series>& series) {
    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    bool first = true;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;

    const double width = 640.0, height = 400.0;
    const double ml = 60.0, mr = 20.0, mt = 40.0, mb = 50.0;
    const double pw = width - ml - mr, ph = height - mt - mb;
    auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto sy = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
        << title << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
        << mt + ph << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    out << "<text x=\"16\" y=\"" << mt + ph / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " << mt + ph / 2
        << ")\">" << y_label << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        out << "<text x=\"" << sx(fx) << "\" y=\"" << mt + ph + 16
            << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt(fx) << "</text>\n";
        out << "<text x=\"" << ml - 6 << "\" y=\"" << sy(fy) + 3
            << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(fy) << "</text>\n";
    }
    for (size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : series[s].points) out << sx(x) << "," << sy(y) << " ";
        out << "\"/>\n";
        out << "<text x=\"" << ml + pw - 4 << "\" y=\"" << mt + 14 + 14 * static_cast<double>(s)
            << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << color << "\">"
            << series[s].label << "</text>\n";
    }
    out << "</svg>\n";
}

uint64_t fnv1a(const std::string& text) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace layoutlab::metrics
