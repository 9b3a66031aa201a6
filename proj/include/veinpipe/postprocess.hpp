#pragma once

#include <cmath>

#include "veinpipe/image.hpp"
#include "veinpipe/tensor.hpp"

namespace veinpipe {

/// Decoded regression head output plus the configured ROI extents.
struct FossaPrediction {
    double cx = 0.0, cy = 0.0;       // pixels
    double angle_deg = 0.0;          // [0, 180)
    double roi_width = 0.0;          // pixels, configured rather than predicted
    double roi_height = 0.0;
};

/// Map the sigmoid-bounded head output (cx/S, cy/S, angle/180) back to pixels
/// and degrees. ROI extents default to 40% x 25% of the image.
template <typename T>
FossaPrediction decode_fossa(const Tensor<T>& raw, int image_size, double roi_frac_w = 0.4,
                             double roi_frac_h = 0.25) {
    require(raw.numel() == 3, "decode_fossa expects 3 components, got shape " +
                                  shape_to_string(raw.shape));
    FossaPrediction p;
    p.cx = static_cast<double>(raw[0]) * image_size;
    p.cy = static_cast<double>(raw[1]) * image_size;
    p.angle_deg = static_cast<double>(raw[2]) * 180.0;
    if (p.angle_deg >= 180.0) p.angle_deg = 0.0;
    p.roi_width = roi_frac_w * image_size;
    p.roi_height = roi_frac_h * image_size;
    return p;
}

namespace postdetail {

// axis coordinates of a pixel relative to the ROI frame: u along the arm
// direction, v across it (y up visually, so row offsets are negated)
inline void roi_axes(const FossaPrediction& f, double px, double py, double& u, double& v) {
    const double rad = f.angle_deg * 3.14159265358979323846 / 180.0;
    const double dx = std::cos(rad), dy = -std::sin(rad);
    const double ox = px - f.cx, oy = py - f.cy;
    u = ox * dx + oy * dy;
    v = -ox * dy + oy * dx;
}

inline bool inside_roi(const FossaPrediction& f, double px, double py) {
    double u, v;
    roi_axes(f, px, py, u, v);
    return std::abs(u) <= f.roi_width / 2.0 && std::abs(v) <= f.roi_height / 2.0;
}

}  // namespace postdetail

/// Keep only vein pixels inside the oriented ROI rectangle centred on the
/// fossa. Never adds pixels; idempotent.
inline GrayImage roi_filter(const GrayImage& vein_mask, const FossaPrediction& fossa) {
    require(is_binary_mask(vein_mask), "roi_filter requires a 0/255 mask");
    GrayImage out(vein_mask.width, vein_mask.height);
    for (int y = 0; y < vein_mask.height; ++y)
        for (int x = 0; x < vein_mask.width; ++x)
            if (vein_mask.at(x, y) && postdetail::inside_roi(fossa, x, y)) out.at(x, y) = 255;
    return out;
}

/// Grayscale promoted to RGB, vein pixels tinted red, ROI outline in cyan,
/// centroid crosshair in yellow. Deterministic palette.
inline RgbImage render_overlay(const GrayImage& image, const GrayImage& filtered_mask,
                               const FossaPrediction& fossa) {
    require(image.width == filtered_mask.width && image.height == filtered_mask.height,
            "render_overlay dimensions mismatch");
    require(is_binary_mask(filtered_mask), "render_overlay requires a 0/255 mask");
    RgbImage out(image.width, image.height);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            std::uint8_t* px = out.at(x, y);
            const std::uint8_t g = image.at(x, y);
            if (filtered_mask.at(x, y)) {
                px[0] = 255;
                px[1] = static_cast<std::uint8_t>(g / 4);
                px[2] = static_cast<std::uint8_t>(g / 4);
            } else {
                px[0] = px[1] = px[2] = g;
            }
        }

    auto put = [&out](int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        if (x < 0 || x >= out.width || y < 0 || y >= out.height) return;
        std::uint8_t* px = out.at(x, y);
        px[0] = r;
        px[1] = g;
        px[2] = b;
    };

    // ROI outline: walk the four edges of the oriented rectangle
    const double rad = fossa.angle_deg * 3.14159265358979323846 / 180.0;
    const double dx = std::cos(rad), dy = -std::sin(rad);
    const double hx = -dy, hy = dx;  // across-arm direction
    const double hu = fossa.roi_width / 2.0, hv = fossa.roi_height / 2.0;
    auto corner = [&](double su, double sv, double& px_, double& py_) {
        px_ = fossa.cx + su * hu * dx + sv * hv * hx;
        py_ = fossa.cy + su * hu * dy + sv * hv * hy;
    };
    double cxs[4], cys[4];
    corner(-1, -1, cxs[0], cys[0]);
    corner(1, -1, cxs[1], cys[1]);
    corner(1, 1, cxs[2], cys[2]);
    corner(-1, 1, cxs[3], cys[3]);
    for (int e = 0; e < 4; ++e) {
        const double x0 = cxs[e], y0 = cys[e];
        const double x1 = cxs[(e + 1) % 4], y1 = cys[(e + 1) % 4];
        const int steps = std::max(2, static_cast<int>(std::ceil(std::hypot(x1 - x0, y1 - y0))) * 2);
        for (int i = 0; i <= steps; ++i) {
            const double t = static_cast<double>(i) / steps;
            put(static_cast<int>(std::lround(x0 + t * (x1 - x0))),
                static_cast<int>(std::lround(y0 + t * (y1 - y0))), 0, 255, 255);
        }
    }

    // centroid crosshair
    const int ccx = static_cast<int>(std::lround(fossa.cx));
    const int ccy = static_cast<int>(std::lround(fossa.cy));
    for (int d = -4; d <= 4; ++d) {
        put(ccx + d, ccy, 255, 255, 0);
        put(ccx, ccy + d, 255, 255, 0);
    }
    return out;
}

}  // namespace veinpipe
