#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "veinpipe/image.hpp"

namespace veinpipe {

// Ground-truth arm angles come from the mask alone: erode the arm segment to a
// line-like shape, vote it into a Hough accumulator, average the winning cells.
// Angles are degrees in [0, 180), measured from the image's right edge going
// counterclockwise as a viewer sees it (x right, y up).

struct ErodeResult {
    GrayImage mask;
    int steps = 0;
    bool warning = false;  // set when the input was too small to erode at all
};

namespace angledetail {

inline GrayImage erode_cross(const GrayImage& in) {
    GrayImage out(in.width, in.height);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            if (!in.at(x, y)) continue;
            const bool keep = x > 0 && x + 1 < in.width && y > 0 && y + 1 < in.height &&
                              in.at(x - 1, y) && in.at(x + 1, y) && in.at(x, y - 1) &&
                              in.at(x, y + 1);
            out.at(x, y) = keep ? 255 : 0;
        }
    return out;
}

}  // namespace angledetail

/// Repeated 3x3 cross-kernel erosion, stopping before the step that would drop
/// the area below max(50 px, 2% of the original). Masks already under 50 px
/// come back unchanged with the warning flag set.
inline ErodeResult erode_to_line(const GrayImage& arm_mask) {
    require(is_binary_mask(arm_mask), "erode_to_line requires a 0/255 mask");
    const std::int64_t original = mask_area(arm_mask);
    require(original > 0, "erode_to_line requires a non-empty mask");
    ErodeResult r;
    r.mask = arm_mask;
    if (original < 50) {
        r.warning = true;
        return r;
    }
    const std::int64_t floor_area =
        std::max<std::int64_t>(50, static_cast<std::int64_t>(0.02 * static_cast<double>(original)));
    for (;;) {
        GrayImage next = angledetail::erode_cross(r.mask);
        const std::int64_t area = mask_area(next);
        if (area < floor_area) break;
        r.mask = std::move(next);
        ++r.steps;
    }
    return r;
}

/// Hough line accumulator: theta bins at 1 degree over [0, 180), rho bins at
/// 1 px over [-D, D] with D the image diagonal. rho = x*cos(theta) + y*sin(theta)
/// with y the row index.
struct HoughAccumulator {
    int theta_bins = 180;
    int rho_limit = 0;  // D; rho index range is [-D, D] mapped to [0, 2D]
    std::vector<std::int32_t> votes;

    std::int64_t cell_count() const { return static_cast<std::int64_t>(theta_bins) * (2 * rho_limit + 1); }

    std::int32_t& at(int theta, int rho) {
        return votes[static_cast<std::size_t>(theta) * (2 * rho_limit + 1) +
                     static_cast<std::size_t>(rho + rho_limit)];
    }
    std::int32_t at(int theta, int rho) const {
        return votes[static_cast<std::size_t>(theta) * (2 * rho_limit + 1) +
                     static_cast<std::size_t>(rho + rho_limit)];
    }

    std::int64_t total_votes() const {
        std::int64_t n = 0;
        for (auto v : votes) n += v;
        return n;
    }
};

inline HoughAccumulator hough_lines(const GrayImage& line_mask) {
    require(is_binary_mask(line_mask), "hough_lines requires a 0/255 mask");
    require(mask_area(line_mask) >= 2, "hough_lines requires at least 2 foreground pixels");
    HoughAccumulator acc;
    acc.rho_limit = static_cast<int>(
        std::ceil(std::hypot(static_cast<double>(line_mask.width), static_cast<double>(line_mask.height))));
    acc.votes.assign(static_cast<std::size_t>(acc.cell_count()), 0);

    double cos_tab[180], sin_tab[180];
    for (int t = 0; t < 180; ++t) {
        const double rad = t * 3.14159265358979323846 / 180.0;
        cos_tab[t] = std::cos(rad);
        sin_tab[t] = std::sin(rad);
    }
    for (int y = 0; y < line_mask.height; ++y)
        for (int x = 0; x < line_mask.width; ++x) {
            if (!line_mask.at(x, y)) continue;
            for (int t = 0; t < 180; ++t) {
                const int rho = static_cast<int>(
                    round_half_away(x * cos_tab[t] + y * sin_tab[t]));
                ++acc.at(t, rho);
            }
        }
    return acc;
}

struct AngleEstimate {
    double angle_deg = 0.0;  // arm direction in [0, 180)
    double rho_mean = 0.0;   // averaged rho of the winning cells; debug only
    std::int32_t peak_votes = 0;
    int cells_used = 0;
    bool erosion_warning = false;
};

/// Full labeling pipeline for one arm mask. Cells holding at least half the
/// peak vote count are averaged; theta is averaged as axial data (doubled-angle
/// unit vectors), then converted from line normal to arm direction.
inline AngleEstimate arm_angle_detail(const GrayImage& arm_mask, const std::string& mask_name = "") {
    const auto eroded = erode_to_line(arm_mask);
    const auto acc = hough_lines(eroded.mask);

    std::int32_t peak = 0;
    for (auto v : acc.votes) peak = std::max(peak, v);
    const auto tag = mask_name.empty() ? std::string("arm mask") : "mask '" + mask_name + "'";
    if (peak < 2) throw std::runtime_error("no dominant line found in " + tag);

    const double threshold = 0.5 * static_cast<double>(peak);
    double sum_cos2 = 0.0, sum_sin2 = 0.0, sum_rho = 0.0;
    int used = 0;
    for (int t = 0; t < acc.theta_bins; ++t)
        for (int rho = -acc.rho_limit; rho <= acc.rho_limit; ++rho) {
            if (static_cast<double>(acc.at(t, rho)) < threshold) continue;
            const double rad2 = 2.0 * t * 3.14159265358979323846 / 180.0;
            sum_cos2 += std::cos(rad2);
            sum_sin2 += std::sin(rad2);
            sum_rho += rho;
            ++used;
        }
    if (used == 0 || (sum_cos2 == 0.0 && sum_sin2 == 0.0))
        throw std::runtime_error("degenerate line peak in " + tag);

    double theta_mean = 0.5 * std::atan2(sum_sin2, sum_cos2) * 180.0 / 3.14159265358979323846;
    if (theta_mean < 0.0) theta_mean += 180.0;
    // theta is the line normal in row-down coordinates; the viewer-facing arm
    // direction (y up, counterclockwise from the right) is 90 - theta.
    double angle = std::fmod(90.0 - theta_mean + 360.0, 180.0);
    if (angle >= 180.0) angle -= 180.0;

    AngleEstimate est;
    est.angle_deg = angle == 180.0 ? 0.0 : angle;
    est.rho_mean = sum_rho / used;
    est.peak_votes = peak;
    est.cells_used = used;
    est.erosion_warning = eroded.warning;
    return est;
}

inline double arm_angle(const GrayImage& arm_mask, const std::string& mask_name = "") {
    return arm_angle_detail(arm_mask, mask_name).angle_deg;
}

}  // namespace veinpipe
