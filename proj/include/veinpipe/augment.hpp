#pragma once

#include <array>
#include <cmath>
#include <optional>

#include "veinpipe/angle.hpp"
#include "veinpipe/dataset.hpp"

namespace veinpipe {

/// Per-technique switches and parameter ranges. Techniques fire independently
/// with their own probability, always in the order
/// flip -> rotate -> perspective -> blur -> gamma.
struct AugSpec {
    double flip_prob = 0.5;

    bool rotate_enabled = true;
    double rotate_prob = 0.5;
    double rotate_min_deg = -180.0;
    double rotate_max_deg = 180.0;

    bool perspective_enabled = true;
    double perspective_prob = 0.3;
    double perspective_magnitude = 0.05;  // corner jitter, fraction of size

    bool blur_enabled = true;
    double blur_prob = 0.3;
    double gaussian_sigma_min = 0.5;
    double gaussian_sigma_max = 1.5;
    std::vector<int> average_kernels = {3, 5};

    bool gamma_enabled = true;
    double gamma_prob = 0.3;
    double gamma_min = 0.7;
    double gamma_max = 1.5;

    std::uint64_t seed = 0;

    bool all_off() const {
        return flip_prob == 0.0 && !rotate_enabled && !perspective_enabled && !blur_enabled &&
               !gamma_enabled;
    }

    void validate() const {
        auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
        require(prob_ok(flip_prob) && prob_ok(rotate_prob) && prob_ok(perspective_prob) &&
                    prob_ok(blur_prob) && prob_ok(gamma_prob),
                "augmentation probabilities must be in [0,1]");
        require(rotate_min_deg <= rotate_max_deg, "rotation range is degenerate");
        require(gaussian_sigma_min <= gaussian_sigma_max && gaussian_sigma_min > 0.0,
                "gaussian sigma range is degenerate");
        require(gamma_min <= gamma_max && gamma_min > 0.0, "gamma range is degenerate");
        require(perspective_magnitude >= 0.0, "perspective magnitude must be non-negative");
        require(!average_kernels.empty(), "average kernel set is empty");
    }
};

namespace augdetail {

// 3x3 homography, row-major. Maps output pixel coords to source coords.
using Mat3 = std::array<double, 9>;

inline Mat3 identity3() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

inline Mat3 matmul3(const Mat3& a, const Mat3& b) {
    Mat3 m{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) m[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return m;
}

inline void apply3(const Mat3& m, double x, double y, double& ox, double& oy) {
    const double w = m[6] * x + m[7] * y + m[8];
    ox = (m[0] * x + m[1] * y + m[2]) / w;
    oy = (m[3] * x + m[4] * y + m[5]) / w;
}

/// Inverse map of a horizontal flip.
inline Mat3 flip_matrix(int width) {
    return {-1, 0, static_cast<double>(width - 1), 0, 1, 0, 0, 0, 1};
}

/// Inverse map of a rotation by `deg` counterclockwise as the viewer sees it
/// (y up). Output pixel p pulls from R(-deg) * (p - c) + c computed in y-up
/// coordinates around the image centre c.
inline Mat3 rotation_matrix(double deg, int width, int height) {
    const double rad = deg * 3.14159265358979323846 / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
    // y-down equivalent of the y-up inverse rotation
    Mat3 m = {c, -s, 0, s, c, 0, 0, 0, 1};
    m[2] = cx - c * cx + s * cy;
    m[5] = cy - s * cx - c * cy;
    return m;
}

/// DLT homography through four point pairs (output corner -> source corner).
inline Mat3 homography_from_corners(const std::array<double, 8>& dst,
                                    const std::array<double, 8>& src) {
    double a[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        const double x = dst[2 * i], y = dst[2 * i + 1];
        const double u = src[2 * i], v = src[2 * i + 1];
        double* r1 = a[2 * i];
        double* r2 = a[2 * i + 1];
        r1[0] = x; r1[1] = y; r1[2] = 1; r1[6] = -x * u; r1[7] = -y * u; r1[8] = u;
        r2[3] = x; r2[4] = y; r2[5] = 1; r2[6] = -x * v; r2[7] = -y * v; r2[8] = v;
    }
    // gaussian elimination with partial pivoting on the 8x9 system
    for (int col = 0; col < 8; ++col) {
        int pivot = col;
        for (int row = col + 1; row < 8; ++row)
            if (std::abs(a[row][col]) > std::abs(a[pivot][col])) pivot = row;
        std::swap(a[col], a[pivot]);
        require(std::abs(a[col][col]) > 1e-12, "degenerate perspective corner set");
        for (int row = 0; row < 8; ++row) {
            if (row == col) continue;
            const double f = a[row][col] / a[col][col];
            for (int k = col; k < 9; ++k) a[row][k] -= f * a[col][k];
        }
    }
    Mat3 m;
    for (int i = 0; i < 8; ++i) m[static_cast<std::size_t>(i)] = a[i][8] / a[i][i];
    m[8] = 1.0;
    return m;
}

inline GrayImage warp(const GrayImage& img, const Mat3& inv, ResizeMode mode) {
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double sx, sy;
            apply3(inv, x, y, sx, sy);
            if (mode == ResizeMode::Nearest) {
                const int ix = static_cast<int>(std::lround(sx));
                const int iy = static_cast<int>(std::lround(sy));
                out.at(x, y) = img.in_bounds(ix, iy) ? img.at(ix, iy) : 0;
            } else {
                if (sx < 0.0 || sy < 0.0 || sx > img.width - 1.0 || sy > img.height - 1.0) continue;
                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                const int x1 = std::min(x0 + 1, img.width - 1);
                const int y1 = std::min(y0 + 1, img.height - 1);
                const double ax = sx - x0, ay = sy - y0;
                const double v = (1 - ay) * ((1 - ax) * img.at(x0, y0) + ax * img.at(x1, y0)) +
                                 ay * ((1 - ax) * img.at(x0, y1) + ax * img.at(x1, y1));
                out.at(x, y) = static_cast<std::uint8_t>(
                    std::clamp<std::int64_t>(round_half_away(v), 0, 255));
            }
        }
    return out;
}

inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (auto& k : kernel) k /= sum;

    GrayImage tmp(img.width, img.height);
    std::vector<double> acc(static_cast<std::size_t>(img.width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double v = 0.0;
            for (int i = -radius; i <= radius; ++i)
                v += kernel[static_cast<std::size_t>(i + radius)] *
                     img.at(detail::reflect_index(x + i, img.width), y);
            acc[static_cast<std::size_t>(x)] = v;
        }
        for (int x = 0; x < img.width; ++x)
            tmp.at(x, y) = static_cast<std::uint8_t>(
                std::clamp<std::int64_t>(round_half_away(acc[static_cast<std::size_t>(x)]), 0, 255));
    }
    GrayImage out(img.width, img.height);
    for (int x = 0; x < img.width; ++x)
        for (int y = 0; y < img.height; ++y) {
            double v = 0.0;
            for (int i = -radius; i <= radius; ++i)
                v += kernel[static_cast<std::size_t>(i + radius)] *
                     tmp.at(x, detail::reflect_index(y + i, img.height));
            out.at(x, y) =
                static_cast<std::uint8_t>(std::clamp<std::int64_t>(round_half_away(v), 0, 255));
        }
    return out;
}

inline GrayImage average_blur(const GrayImage& img, int k) {
    const int radius = k / 2;
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            std::int64_t sum = 0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx)
                    sum += img.at(detail::reflect_index(x + dx, img.width),
                                  detail::reflect_index(y + dy, img.height));
            out.at(x, y) = static_cast<std::uint8_t>(
                std::clamp<std::int64_t>(round_half_away(static_cast<double>(sum) / (k * k)), 0, 255));
        }
    return out;
}

inline GrayImage gamma_contrast(const GrayImage& img, double gamma) {
    std::array<std::uint8_t, 256> lut;
    for (int v = 0; v < 256; ++v)
        lut[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(std::clamp<std::int64_t>(
            round_half_away(255.0 * std::pow(v / 255.0, gamma)), 0, 255));
    GrayImage out = img;
    for (auto& p : out.pixels) p = lut[p];
    return out;
}

inline GrayImage mask_and(const GrayImage& a, const GrayImage& b) {
    GrayImage out(a.width, a.height);
    for (std::size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = (a.pixels[i] && b.pixels[i]) ? 255 : 0;
    return out;
}

struct Centroid {
    double x = 0.0, y = 0.0;
    bool valid = false;
};

inline Centroid mask_centroid(const GrayImage& mask) {
    double sx = 0.0, sy = 0.0;
    std::int64_t n = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                sx += x;
                sy += y;
                ++n;
            }
    if (n == 0) return {};
    return {sx / n, sy / n, true};
}

inline std::optional<BBox> mask_aabb(const GrayImage& mask) {
    int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) return std::nullopt;
    return BBox{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

}  // namespace augdetail

/// One augmentation attempt. Geometric transforms hit image and all masks with
/// the same map (bilinear for the image, nearest for masks); photometric
/// transforms touch the image only. Labels are re-derived from the transformed
/// masks rather than transformed in closed form. Returns nothing when the arm
/// leaves the frame or the labeler cannot recover an angle.
inline std::optional<Sample> augment_once(const Sample& sample, const AugSpec& spec, Rng& rng) {
    spec.validate();
    if (spec.all_off()) return sample;

    bool geometric = false;
    augdetail::Mat3 inv = augdetail::identity3();
    const int w = sample.image.width, h = sample.image.height;

    // inverse maps compose in reverse application order
    if (uniform_double(rng) < spec.flip_prob) {
        inv = augdetail::matmul3(inv, augdetail::flip_matrix(w));
        geometric = true;
    }
    if (spec.rotate_enabled && uniform_double(rng) < spec.rotate_prob) {
        const double deg = uniform_range(rng, spec.rotate_min_deg, spec.rotate_max_deg);
        inv = augdetail::matmul3(augdetail::rotation_matrix(deg, w, h), inv);
        geometric = true;
    }
    if (spec.perspective_enabled && uniform_double(rng) < spec.perspective_prob) {
        const double m = spec.perspective_magnitude;
        std::array<double, 8> src = {0, 0, double(w - 1), 0, double(w - 1), double(h - 1), 0,
                                     double(h - 1)};
        std::array<double, 8> dst = src;
        for (auto& v : dst) v += uniform_range(rng, -m, m) * (w + h) / 2.0;
        inv = augdetail::matmul3(augdetail::homography_from_corners(dst, src), inv);
        geometric = true;
    }

    Sample out = sample;
    if (geometric) {
        out.image = augdetail::warp(sample.image, inv, ResizeMode::Bilinear);
        out.arm_mask = augdetail::warp(sample.arm_mask, inv, ResizeMode::Nearest);
        out.vein_mask = augdetail::mask_and(
            augdetail::warp(sample.vein_mask, inv, ResizeMode::Nearest), out.arm_mask);
        out.fossa_mask = augdetail::warp(sample.fossa_mask, inv, ResizeMode::Nearest);

        if (mask_area(out.arm_mask) < std::max<std::int64_t>(50, out.arm_mask.pixel_count() / 100))
            return std::nullopt;
        const auto centroid = augdetail::mask_centroid(out.fossa_mask);
        const auto box = augdetail::mask_aabb(out.fossa_mask);
        if (!centroid.valid || !box) return std::nullopt;
        double angle;
        try {
            angle = arm_angle(out.arm_mask, sample.id);
        } catch (const std::exception&) {
            return std::nullopt;
        }
        out.cx = round2(centroid.x);
        out.cy = round2(centroid.y);
        out.bbox = *box;
        out.fossa_mask = bbox_rect_mask(out.bbox, w, h);
        out.angle_deg = round2(angle);
        if (out.angle_deg >= 180.0) out.angle_deg = 0.0;
        if (!datadetail::validate_sample(out).empty()) return std::nullopt;
    }

    if (spec.blur_enabled && uniform_double(rng) < spec.blur_prob) {
        if (uniform_double(rng) < 0.5) {
            out.image = augdetail::gaussian_blur(
                out.image, uniform_range(rng, spec.gaussian_sigma_min, spec.gaussian_sigma_max));
        } else {
            const auto k = spec.average_kernels[static_cast<std::size_t>(
                uniform_index(rng, spec.average_kernels.size()))];
            out.image = augdetail::average_blur(out.image, k);
        }
    }
    if (spec.gamma_enabled && uniform_double(rng) < spec.gamma_prob)
        out.image = augdetail::gamma_contrast(out.image,
                                              uniform_range(rng, spec.gamma_min, spec.gamma_max));
    return out;
}

/// Augment with bounded retries; each retry redraws every random parameter.
inline std::optional<Sample> augment(const Sample& sample, const AugSpec& spec,
                                     std::uint64_t item_seed, int max_retries = 5) {
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        Rng rng(mix_seed(item_seed, static_cast<std::uint64_t>(attempt)));
        if (auto out = augment_once(sample, spec, rng)) return out;
    }
    return std::nullopt;
}

/// Every base sample once, then augmented copies drawn round-robin until the
/// set holds exactly target_count samples. Deterministic under spec.seed.
inline Dataset build_augmented_set(const Dataset& base, std::size_t target_count,
                                   const AugSpec& spec) {
    require(!base.empty(), "build_augmented_set requires a non-empty base dataset");
    require(target_count >= base.size(),
            "target_count " + std::to_string(target_count) + " is below the base size " +
                std::to_string(base.size()));
    Dataset out = base;
    out.reserve(target_count);
    std::uint64_t counter = 0;
    std::uint64_t attempts = 0;
    const std::uint64_t attempt_budget = 10 * static_cast<std::uint64_t>(target_count) + 100;
    while (out.size() < target_count) {
        require(attempts++ < attempt_budget,
                "augmentation keeps rejecting samples; relax the spec or the base data");
        const Sample& src = base[static_cast<std::size_t>(counter % base.size())];
        auto copy = augment(src, spec, mix_seed(spec.seed, counter));
        ++counter;
        if (!copy) continue;
        copy->id = src.id + "_aug" + std::to_string(counter - 1);
        out.push_back(std::move(*copy));
    }
    return out;
}

}  // namespace veinpipe
