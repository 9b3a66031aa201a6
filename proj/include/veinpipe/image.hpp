#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "veinpipe/tensor.hpp"

namespace veinpipe {

/// 8-bit grayscale image, row-major.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    GrayImage() = default;
    GrayImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
        require(w > 0 && h > 0, "image dimensions must be positive");
    }

    std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
    std::int64_t pixel_count() const { return static_cast<std::int64_t>(width) * height; }

    bool operator==(const GrayImage& o) const {
        return width == o.width && height == o.height && pixels == o.pixels;
    }
};

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // 3 bytes per pixel

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {
        require(w > 0 && h > 0, "image dimensions must be positive");
    }

    std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
    const std::uint8_t* at(int x, int y) const {
        return &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
    }

    bool operator==(const RgbImage& o) const {
        return width == o.width && height == o.height && pixels == o.pixels;
    }
};

inline bool is_binary_mask(const GrayImage& img) {
    for (auto v : img.pixels)
        if (v != 0 && v != 255) return false;
    return true;
}

inline std::int64_t mask_area(const GrayImage& mask) {
    std::int64_t n = 0;
    for (auto v : mask.pixels) n += v != 0;
    return n;
}

/// Image to a 1 x 1 x H x W tensor scaled to [0, 1].
template <typename T = float>
Tensor<T> image_to_tensor(const GrayImage& img) {
    Tensor<T> t = Tensor<T>::zeros({1, 1, img.height, img.width});
    for (std::int64_t i = 0; i < img.pixel_count(); ++i)
        t[i] = static_cast<T>(img.pixels[static_cast<std::size_t>(i)]) / T(255);
    return t;
}

/// 0/255 mask to a 1 x 1 x H x W tensor of exact zeros and ones.
template <typename T = float>
Tensor<T> mask_to_tensor(const GrayImage& mask) {
    require(is_binary_mask(mask), "mask_to_tensor requires a 0/255 mask");
    Tensor<T> t = Tensor<T>::zeros({1, 1, mask.height, mask.width});
    for (std::int64_t i = 0; i < mask.pixel_count(); ++i)
        t[i] = mask.pixels[static_cast<std::size_t>(i)] ? T(1) : T(0);
    return t;
}

/// Threshold pre-sigmoid scores at probability 0.5 (logit 0).
template <typename T>
GrayImage logits_to_mask(const Tensor<T>& logits, int n = 0) {
    require(logits.rank() == 4 && logits.shape[1] == 1, "logits_to_mask expects N x 1 x H x W");
    GrayImage mask(logits.shape[3], logits.shape[2]);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            mask.at(x, y) = logits.at4(n, 0, y, x) >= T(0) ? 255 : 0;
    return mask;
}

namespace detail {

// reflect-101 index for padding
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

}  // namespace detail

/// Contrast-limited adaptive histogram equalization with bilinear blending
/// between per-tile mappings. Clipped excess is redistributed uniformly.
/// Tiles that do not divide the image are handled by reflect padding.
inline GrayImage clahe(const GrayImage& img, double clip_limit = 2.0, int tiles_x = 8,
                       int tiles_y = 8) {
    require(img.width > 0 && img.height > 0, "clahe requires a non-empty image");
    require(clip_limit > 0.0, "clahe clip_limit must be positive");
    require(tiles_x >= 1 && tiles_y >= 1, "clahe tile grid must be at least 1x1");
    tiles_x = std::min(tiles_x, img.width);
    tiles_y = std::min(tiles_y, img.height);

    const int tile_w = (img.width + tiles_x - 1) / tiles_x;
    const int tile_h = (img.height + tiles_y - 1) / tiles_y;
    const std::int64_t tile_pixels = static_cast<std::int64_t>(tile_w) * tile_h;

    auto padded_at = [&](int x, int y) {
        return img.at(detail::reflect_index(x, img.width), detail::reflect_index(y, img.height));
    };

    // per-tile lookup tables
    std::vector<std::array<std::uint8_t, 256>> luts(
        static_cast<std::size_t>(tiles_x) * tiles_y);
    const std::int64_t clip =
        std::max<std::int64_t>(1, static_cast<std::int64_t>(clip_limit * tile_pixels / 256.0));
    for (int ty = 0; ty < tiles_y; ++ty) {
        for (int tx = 0; tx < tiles_x; ++tx) {
            std::array<std::int64_t, 256> hist{};
            for (int y = ty * tile_h; y < (ty + 1) * tile_h; ++y)
                for (int x = tx * tile_w; x < (tx + 1) * tile_w; ++x) ++hist[padded_at(x, y)];
            std::int64_t excess = 0;
            for (auto& h : hist) {
                if (h > clip) {
                    excess += h - clip;
                    h = clip;
                }
            }
            const std::int64_t bonus = excess / 256;
            std::int64_t rem = excess % 256;
            for (auto& h : hist) {
                h += bonus;
                if (rem > 0) {
                    ++h;
                    --rem;
                }
            }
            auto& lut = luts[static_cast<std::size_t>(ty) * tiles_x + tx];
            std::int64_t cdf = 0;
            for (int v = 0; v < 256; ++v) {
                cdf += hist[static_cast<std::size_t>(v)];
                lut[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(std::clamp<std::int64_t>(
                    round_half_away(255.0 * static_cast<double>(cdf) / static_cast<double>(tile_pixels)),
                    0, 255));
            }
        }
    }

    // pixels before the first tile center or past the last use that tile alone
    auto grid_coord = [](double g, int n, int& i0, int& i1, double& w) {
        if (g <= 0.0 || n == 1) {
            i0 = i1 = 0;
            w = 0.0;
        } else if (g >= n - 1) {
            i0 = i1 = n - 1;
            w = 0.0;
        } else {
            i0 = static_cast<int>(g);
            i1 = i0 + 1;
            w = g - i0;
        }
    };

    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        int ty0, ty1;
        double wy;
        grid_coord((y - tile_h / 2.0) / tile_h, tiles_y, ty0, ty1, wy);
        for (int x = 0; x < img.width; ++x) {
            int tx0, tx1;
            double wx;
            grid_coord((x - tile_w / 2.0) / tile_w, tiles_x, tx0, tx1, wx);
            const std::uint8_t v = img.at(x, y);
            const double v00 = luts[static_cast<std::size_t>(ty0) * tiles_x + tx0][v];
            const double v01 = luts[static_cast<std::size_t>(ty0) * tiles_x + tx1][v];
            const double v10 = luts[static_cast<std::size_t>(ty1) * tiles_x + tx0][v];
            const double v11 = luts[static_cast<std::size_t>(ty1) * tiles_x + tx1][v];
            const double blended = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
                                   wy * ((1.0 - wx) * v10 + wx * v11);
            out.at(x, y) = static_cast<std::uint8_t>(
                std::clamp<std::int64_t>(round_half_away(blended), 0, 255));
        }
    }
    return out;
}

enum class ResizeMode { Bilinear, Nearest };

/// Resample to target x target. Bilinear for intensity images; nearest for
/// masks so they stay strictly binary.
inline GrayImage resize(const GrayImage& img, int target, ResizeMode mode = ResizeMode::Bilinear) {
    require(target > 0, "resize target must be positive");
    if (img.width == target && img.height == target) return img;
    GrayImage out(target, target);
    const double sx = static_cast<double>(img.width) / target;
    const double sy = static_cast<double>(img.height) / target;
    for (int y = 0; y < target; ++y) {
        for (int x = 0; x < target; ++x) {
            if (mode == ResizeMode::Nearest) {
                const int src_x = std::clamp(static_cast<int>(std::floor((x + 0.5) * sx)), 0,
                                             img.width - 1);
                const int src_y = std::clamp(static_cast<int>(std::floor((y + 0.5) * sy)), 0,
                                             img.height - 1);
                out.at(x, y) = img.at(src_x, src_y);
            } else {
                const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
                const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
                const int x0 = static_cast<int>(std::floor(fx));
                const int y0 = static_cast<int>(std::floor(fy));
                const int x1 = std::min(x0 + 1, img.width - 1);
                const int y1 = std::min(y0 + 1, img.height - 1);
                const double ax = fx - x0, ay = fy - y0;
                const double v = (1 - ay) * ((1 - ax) * img.at(x0, y0) + ax * img.at(x1, y0)) +
                                 ay * ((1 - ax) * img.at(x0, y1) + ax * img.at(x1, y1));
                out.at(x, y) = static_cast<std::uint8_t>(
                    std::clamp<std::int64_t>(round_half_away(v), 0, 255));
            }
        }
    }
    return out;
}

}  // namespace veinpipe
