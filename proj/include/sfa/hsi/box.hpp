#pragma once

#include <algorithm>

namespace sfa {

// Axis-aligned box, top-left origin, pixel units.
struct Box {
    float x = 0;
    float y = 0;
    float w = 0;
    float h = 0;

    float area() const { return w * h; }
    float x2() const { return x + w; }
    float y2() const { return y + h; }
    friend bool operator==(const Box&, const Box&) = default;
};

// Intersection over union; 0 when the union is empty.
inline double iou(const Box& a, const Box& b) {
    const double ax2 = static_cast<double>(a.x) + a.w, ay2 = static_cast<double>(a.y) + a.h;
    const double bx2 = static_cast<double>(b.x) + b.w, by2 = static_cast<double>(b.y) + b.h;
    const double iw = std::max(0.0, std::min(ax2, bx2) - std::max<double>(a.x, b.x));
    const double ih = std::max(0.0, std::min(ay2, by2) - std::max<double>(a.y, b.y));
    const double inter = iw * ih;
    const double uni = static_cast<double>(a.w) * a.h + static_cast<double>(b.w) * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace sfa
