#pragma once

#include <algorithm>

namespace layoutlab {

// Axis-aligned box in normalized image coordinates, (x0,y0) top-left and
// (x1,y1) bottom-right. Validity (x0<x1, y0<y1, inside [0,1]) is checked
// where the box enters a model path; raw files may carry invalid boxes so
// the validator can report them.
struct BBox {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }

    bool valid() const {
        return x0 < x1 && y0 < y1 && x0 >= 0.0 && y0 >= 0.0 && x1 <= 1.0 && y1 <= 1.0;
    }

    bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

inline double iou(const BBox& a, const BBox& b) {
    const double ix0 = std::max(a.x0, b.x0);
    const double iy0 = std::max(a.y0, b.y0);
    const double ix1 = std::min(a.x1, b.x1);
    const double iy1 = std::min(a.y1, b.y1);
    const double iw = std::max(0.0, ix1 - ix0);
    const double ih = std::max(0.0, iy1 - iy0);
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace layoutlab
