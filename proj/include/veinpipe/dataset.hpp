#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "veinpipe/angle.hpp"
#include "veinpipe/image.hpp"
#include "veinpipe/png.hpp"

namespace veinpipe {

struct BBox {
    int x = 0, y = 0, w = 0, h = 0;
};

/// One dataset record. The fossa mask is the filled bounding-box rectangle;
/// bounding box and centroid round-trip through the annotation CSV, masks
/// through 0/255 PNGs.
struct Sample {
    std::string id;
    GrayImage image;
    GrayImage vein_mask;
    GrayImage arm_mask;
    GrayImage fossa_mask;
    BBox bbox;
    double cx = 0.0, cy = 0.0;    // fossa centroid, pixels
    double angle_deg = 0.0;       // arm direction, [0, 180)
};

using Dataset = std::vector<Sample>;

inline constexpr const char* kAnnotationsHeader = "id,cx,cy,bbox_x,bbox_y,bbox_w,bbox_h,angle_deg";

inline GrayImage bbox_rect_mask(const BBox& b, int width, int height) {
    GrayImage mask(width, height);
    for (int y = b.y; y < b.y + b.h; ++y)
        for (int x = b.x; x < b.x + b.w; ++x)
            if (mask.in_bounds(x, y)) mask.at(x, y) = 255;
    return mask;
}

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

struct DatasetError : std::runtime_error {
    explicit DatasetError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace datadetail {

inline std::string format2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline bool parse_double(const std::string& s, double& out) {
    try {
        std::size_t used = 0;
        out = std::stod(s, &used);
        return used == s.size() && std::isfinite(out);
    } catch (...) {
        return false;
    }
}

inline bool parse_int(const std::string& s, int& out) {
    try {
        std::size_t used = 0;
        out = std::stoi(s, &used);
        return used == s.size();
    } catch (...) {
        return false;
    }
}

// invariant checks shared by the loader and the generator's self-check
inline std::string validate_sample(const Sample& s) {
    const auto& img = s.image;
    if (s.vein_mask.width != img.width || s.vein_mask.height != img.height ||
        s.arm_mask.width != img.width || s.arm_mask.height != img.height)
        return "mask dimensions do not match image";
    if (!is_binary_mask(s.vein_mask) || !is_binary_mask(s.arm_mask)) return "mask is not 0/255";
    for (std::int64_t i = 0; i < img.pixel_count(); ++i)
        if (s.vein_mask.pixels[static_cast<std::size_t>(i)] &&
            !s.arm_mask.pixels[static_cast<std::size_t>(i)])
            return "vein mask is not contained in arm mask";
    if (s.bbox.w <= 0 || s.bbox.h <= 0 || s.bbox.x < 0 || s.bbox.y < 0 ||
        s.bbox.x + s.bbox.w > img.width || s.bbox.y + s.bbox.h > img.height)
        return "bounding box out of image bounds";
    if (s.cx < s.bbox.x || s.cx > s.bbox.x + s.bbox.w - 1 || s.cy < s.bbox.y ||
        s.cy > s.bbox.y + s.bbox.h - 1)
        return "centroid lies outside its bounding box";
    if (s.angle_deg < 0.0 || s.angle_deg >= 180.0) return "angle outside [0, 180)";
    return "";
}

}  // namespace datadetail

inline void save_dataset(const Dataset& samples, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks_vein");
    fs::create_directories(root / "masks_arm");
    std::string csv = std::string(kAnnotationsHeader) + "\n";
    for (const auto& s : samples) {
        write_gray_png(s.image, root / "images" / (s.id + ".png"));
        write_gray_png(s.vein_mask, root / "masks_vein" / (s.id + ".png"));
        write_gray_png(s.arm_mask, root / "masks_arm" / (s.id + ".png"));
        csv += s.id + "," + datadetail::format2(s.cx) + "," + datadetail::format2(s.cy) + "," +
               std::to_string(s.bbox.x) + "," + std::to_string(s.bbox.y) + "," +
               std::to_string(s.bbox.w) + "," + std::to_string(s.bbox.h) + "," +
               datadetail::format2(s.angle_deg) + "\n";
    }
    binio::atomic_write_file(root / "annotations.csv", csv);
}

/// Load a dataset directory. Every CSV row must resolve to existing PNGs and
/// satisfy the sample invariants; all violations are collected and reported
/// together with their row numbers. Load order equals CSV order.
inline Dataset load_dataset(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    const fs::path csv_path = root / "annotations.csv";
    if (!fs::exists(csv_path))
        throw DatasetError("missing annotations file: " + csv_path.string());
    std::ifstream in(csv_path);
    if (!in) throw DatasetError("cannot open annotations file: " + csv_path.string());

    std::string line;
    if (!std::getline(in, line) ||
        datadetail::split_csv_line(line) != datadetail::split_csv_line(kAnnotationsHeader))
        throw DatasetError("bad annotations header in " + csv_path.string() + " (expected '" +
                           kAnnotationsHeader + "')");

    struct Row {
        int number;
        std::string text;
    };
    std::vector<Row> rows;
    for (int n = 2; std::getline(in, line); ++n) {
        if (!line.empty() && line != "\r") rows.push_back({n, line});
    }

    Dataset samples(rows.size());
    std::vector<std::string> errors(rows.size());
    parallel_for(static_cast<std::int64_t>(rows.size()), [&](std::int64_t i) {
        const auto& row = rows[static_cast<std::size_t>(i)];
        auto fail = [&](const std::string& msg) {
            errors[static_cast<std::size_t>(i)] = "row " + std::to_string(row.number) + ": " + msg;
        };
        const auto fields = datadetail::split_csv_line(row.text);
        if (fields.size() != 8) {
            fail("expected 8 fields, got " + std::to_string(fields.size()));
            return;
        }
        Sample s;
        s.id = fields[0];
        if (s.id.empty()) {
            fail("empty id");
            return;
        }
        bool ok = datadetail::parse_double(fields[1], s.cx) &&
                  datadetail::parse_double(fields[2], s.cy) &&
                  datadetail::parse_int(fields[3], s.bbox.x) &&
                  datadetail::parse_int(fields[4], s.bbox.y) &&
                  datadetail::parse_int(fields[5], s.bbox.w) &&
                  datadetail::parse_int(fields[6], s.bbox.h) &&
                  datadetail::parse_double(fields[7], s.angle_deg);
        if (!ok) {
            fail("id '" + s.id + "': malformed numeric field");
            return;
        }
        for (const auto& [dir, target] :
             {std::pair<const char*, GrayImage*>{"images", &s.image},
              {"masks_vein", &s.vein_mask},
              {"masks_arm", &s.arm_mask}}) {
            const fs::path p = root / dir / (s.id + ".png");
            if (!fs::exists(p)) {
                fail("id '" + s.id + "': missing file " + p.string());
                return;
            }
            try {
                *target = read_gray_png(p);
            } catch (const std::exception& e) {
                fail("id '" + s.id + "': " + e.what());
                return;
            }
        }
        s.fossa_mask = bbox_rect_mask(s.bbox, s.image.width, s.image.height);
        const std::string why = datadetail::validate_sample(s);
        if (!why.empty()) {
            fail("id '" + s.id + "': " + why);
            return;
        }
        samples[static_cast<std::size_t>(i)] = std::move(s);
    });

    std::string all;
    for (const auto& e : errors)
        if (!e.empty()) all += (all.empty() ? "" : "\n") + e;
    if (!all.empty()) throw DatasetError("invalid dataset at " + root.string() + ":\n" + all);
    return samples;
}

struct SplitManifest {
    std::uint64_t seed = 0;
    std::vector<std::string> train, val, test;
};

struct SplitSizes {
    std::size_t train, val, test;
};

/// floor(0.7n) / floor(0.2n) / remainder.
inline SplitSizes split_sizes(std::size_t n) {
    const auto train = static_cast<std::size_t>(0.7 * static_cast<double>(n));
    const auto val = static_cast<std::size_t>(0.2 * static_cast<double>(n));
    return {train, val, n - train - val};
}

inline SplitManifest split(const std::vector<std::string>& ids, std::uint64_t seed) {
    require(ids.size() >= 10, "split requires at least 10 samples, got " +
                                  std::to_string(ids.size()));
    std::vector<std::string> order = ids;
    Rng rng(seed);
    deterministic_shuffle(order, rng);
    const auto sizes = split_sizes(order.size());
    SplitManifest m;
    m.seed = seed;
    m.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes.train));
    m.val.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes.train),
                 order.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.val));
    m.test.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.val), order.end());
    return m;
}

inline SplitManifest split(const Dataset& ds, std::uint64_t seed) {
    std::vector<std::string> ids;
    ids.reserve(ds.size());
    for (const auto& s : ds) ids.push_back(s.id);
    return split(ids, seed);
}

inline Dataset select_by_ids(const Dataset& ds, const std::vector<std::string>& ids) {
    Dataset out;
    out.reserve(ids.size());
    for (const auto& id : ids)
        for (const auto& s : ds)
            if (s.id == id) {
                out.push_back(s);
                break;
            }
    return out;
}

struct SynthParams {
    double angle_min_deg = 20.0;   // generated arm directions; the ends of the
    double angle_max_deg = 160.0;  // axial range are avoided, see note below
    double band_halfwidth_min = 0.15;  // fraction of image size
    double band_halfwidth_max = 0.20;
    double vein_radius_frac = 1.0 / 18.0;  // brush radius as a fraction of size
    double noise_sigma = 3.5;
};

// Note: sigmoid-encoded angle regression (angle/180 under plain MSE) cannot
// represent the 0/180 wraparound, so the default generator keeps a margin from
// the axial seam. The angle labeler itself is exercised over the full range.

/// Deterministic synthetic arm scenes with exact labels: a bright arm band at a
/// known angle, a dark vein tree converging at the fossa, a brighter fossa
/// disc, plus an illumination gradient and Gaussian noise.
inline Dataset synth_generate(int count, int size, std::uint64_t seed,
                              const SynthParams& params = {}) {
    require(count >= 1, "synth_generate count must be positive");
    require(size >= 32, "synth_generate size must be at least 32");
    Dataset out;
    out.reserve(static_cast<std::size_t>(count));
    for (int idx = 0; idx < count; ++idx) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(idx)));
        NormalSampler noise(mix_seed(seed, static_cast<std::uint64_t>(idx) + 0x5eed));
        Sample s;
        {
            char buf[32];
            std::snprintf(buf, sizeof buf, "synth_%05d", idx);
            s.id = buf;
        }
        const double deg = uniform_range(rng, params.angle_min_deg, params.angle_max_deg);
        const double rad = deg * 3.14159265358979323846 / 180.0;
        // direction in (col, row) coords; visual y points up
        const double dx = std::cos(rad), dy = -std::sin(rad);
        const double nx = -dy, ny = dx;  // unit normal
        const double cx0 = size / 2.0, cy0 = size / 2.0;
        const double hw = size * uniform_range(rng, params.band_halfwidth_min,
                                               params.band_halfwidth_max);

        s.arm_mask = GrayImage(size, size);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double d = (x - cx0) * nx + (y - cy0) * ny;
                if (std::abs(d) <= hw) s.arm_mask.at(x, y) = 255;
            }

        // fossa centre on the arm axis, kept fully inside the frame
        const int rf = std::max(2, static_cast<int>(std::lround(hw * 0.5)));
        double t_lo = -size / 6.0, t_hi = size / 6.0;
        auto bound_axis = [&](double d, double c) {
            if (std::abs(d) < 1e-9) return;
            const double lo = (rf + 1.0 - c) / d, hi = (size - rf - 2.0 - c) / d;
            t_lo = std::max(t_lo, std::min(lo, hi));
            t_hi = std::min(t_hi, std::max(lo, hi));
        };
        bound_axis(dx, cx0);
        bound_axis(dy, cy0);
        const double t_fossa = uniform_range(rng, t_lo, std::max(t_lo, t_hi));
        const double fx = cx0 + t_fossa * dx, fy = cy0 + t_fossa * dy;
        s.bbox = {static_cast<int>(std::lround(fx)) - rf, static_cast<int>(std::lround(fy)) - rf,
                  2 * rf + 1, 2 * rf + 1};
        s.cx = round2(fx);
        s.cy = round2(fy);
        s.angle_deg = round2(deg);
        s.fossa_mask = bbox_rect_mask(s.bbox, size, size);

        // vein tree: a wobbling main vein along the axis plus branches
        // radiating from the fossa
        GrayImage veins(size, size);
        const int vr = std::max(1, static_cast<int>(std::lround(size * params.vein_radius_frac)));
        auto stamp = [&](double px, double py) {
            for (int oy = -vr; oy <= vr; ++oy)
                for (int ox = -vr; ox <= vr; ++ox) {
                    if (ox * ox + oy * oy > vr * vr) continue;
                    const int ix = static_cast<int>(std::lround(px)) + ox;
                    const int iy = static_cast<int>(std::lround(py)) + oy;
                    if (veins.in_bounds(ix, iy)) veins.at(ix, iy) = 255;
                }
        };
        const double span = size * 0.48;
        const double amp = uniform_range(rng, 0.15, 0.35) * hw;
        const double wavelength = size * uniform_range(rng, 0.6, 1.1);
        const double phase = uniform_range(rng, 0.0, 6.28318530717958648);
        for (double t = -span; t <= span; t += 0.5) {
            const double off = amp * std::sin(2.0 * 3.14159265358979323846 * t / wavelength + phase);
            stamp(cx0 + t * dx + off * nx, cy0 + t * dy + off * ny);
        }
        const int branches = 2 + static_cast<int>(uniform_index(rng, 2));
        for (int b = 0; b < branches; ++b) {
            const double side = (b % 2 == 0) ? 1.0 : -1.0;
            const double branch_rad =
                rad + side * uniform_range(rng, 25.0, 50.0) * 3.14159265358979323846 / 180.0;
            const double bdx = std::cos(branch_rad), bdy = -std::sin(branch_rad);
            const double len = size * uniform_range(rng, 0.18, 0.32);
            const double dir = uniform_double(rng) < 0.5 ? 1.0 : -1.0;
            for (double t = 0.0; t <= len; t += 0.5) stamp(fx + dir * t * bdx, fy + dir * t * bdy);
        }
        s.vein_mask = GrayImage(size, size);
        for (std::int64_t i = 0; i < veins.pixel_count(); ++i)
            if (veins.pixels[static_cast<std::size_t>(i)] &&
                s.arm_mask.pixels[static_cast<std::size_t>(i)])
                s.vein_mask.pixels[static_cast<std::size_t>(i)] = 255;

        // render: background + illumination gradient, bright band, brighter
        // fossa disc, dark veins, then noise
        const double grad_dir = uniform_range(rng, 0.0, 6.28318530717958648);
        const double gx = std::cos(grad_dir), gy = std::sin(grad_dir);
        const double grad_amp = uniform_range(rng, 6.0, 14.0);
        s.image = GrayImage(size, size);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double v = 38.0 + grad_amp * ((x * gx + y * gy) / size);
                if (s.arm_mask.at(x, y)) v = 175.0;
                const double fd = std::hypot(x - fx, y - fy);
                if (fd <= rf && s.arm_mask.at(x, y)) v = 205.0;
                if (s.vein_mask.at(x, y)) v = 52.0;
                v += noise.next() * params.noise_sigma;
                s.image.at(x, y) = static_cast<std::uint8_t>(
                    std::clamp<std::int64_t>(round_half_away(v), 0, 255));
            }

        const std::string why = datadetail::validate_sample(s);
        require(why.empty(), "synthetic sample " + s.id + " violates invariants: " + why);
        out.push_back(std::move(s));
    }
    return out;
}

/// Regression target in model encoding: (cx/S, cy/S, angle/180).
template <typename T>
void fossa_target_into(const Sample& s, int image_size, T* out3) {
    out3[0] = static_cast<T>(s.cx / image_size);
    out3[1] = static_cast<T>(s.cy / image_size);
    out3[2] = static_cast<T>(s.angle_deg / 180.0);
}

/// Assemble a batch of samples into model input and target tensors.
template <typename T>
struct Batch {
    Tensor<T> images;      // N x 1 x S x S in [0,1]
    Tensor<T> vein_masks;  // N x 1 x S x S in {0,1}
    Tensor<T> fossa;       // N x 3 normalized
};

template <typename T>
Batch<T> make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
    require(!indices.empty(), "make_batch requires at least one sample");
    const int s = ds[indices[0]].image.width;
    const int n = static_cast<int>(indices.size());
    Batch<T> b{Tensor<T>::zeros({n, 1, s, s}), Tensor<T>::zeros({n, 1, s, s}),
               Tensor<T>::zeros({n, 3})};
    for (int i = 0; i < n; ++i) {
        const Sample& sample = ds[indices[static_cast<std::size_t>(i)]];
        require(sample.image.width == s && sample.image.height == s,
                "sample '" + sample.id + "' does not match batch size " + std::to_string(s));
        const std::int64_t plane = static_cast<std::int64_t>(s) * s;
        for (std::int64_t k = 0; k < plane; ++k) {
            b.images[i * plane + k] =
                static_cast<T>(sample.image.pixels[static_cast<std::size_t>(k)]) / T(255);
            b.vein_masks[i * plane + k] =
                sample.vein_mask.pixels[static_cast<std::size_t>(k)] ? T(1) : T(0);
        }
        fossa_target_into(sample, s, &b.fossa.at2(i, 0));
    }
    return b;
}

}  // namespace veinpipe
