#pragma once

#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "veinpipe/unet.hpp"

namespace veinpipe {

inline constexpr char kQuantizedMagic[] = "VEINQ";

enum class Scheme : std::uint8_t {
    Float32 = 0,
    DynamicRange = 1,
    Float16 = 2,
    FullInteger = 3,
    FloatFallback = 4,
};

inline const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::Float32: return "float32";
        case Scheme::DynamicRange: return "dynamic-range";
        case Scheme::Float16: return "float16";
        case Scheme::FullInteger: return "full-int";
        case Scheme::FloatFallback: return "float-fallback";
    }
    return "?";
}

inline std::optional<Scheme> parse_scheme(const std::string& name) {
    for (Scheme s : {Scheme::Float32, Scheme::DynamicRange, Scheme::Float16, Scheme::FullInteger,
                     Scheme::FloatFallback})
        if (name == scheme_name(s)) return s;
    return std::nullopt;
}

struct QuantParams {
    double scale = 1.0;
    int zero_point = 0;
};

// ---------------------------------------------------------------------------
// float16 conversion, round-to-nearest-even

inline std::uint16_t float_to_half(float f) {
    std::uint32_t x;
    std::memcpy(&x, &f, 4);
    const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
    const std::uint32_t mant = x & 0x007fffffu;
    const int exp = static_cast<int>((x >> 23) & 0xffu) - 127;
    if (exp == 128)  // inf / nan
        return sign | 0x7c00u | (mant ? (0x0200u | static_cast<std::uint16_t>(mant >> 13)) : 0);
    if (exp > 15) return sign | 0x7c00u;  // overflow to inf
    if (exp >= -14) {
        std::uint32_t half = (static_cast<std::uint32_t>(exp + 15) << 10) | (mant >> 13);
        const std::uint32_t rem = mant & 0x1fffu;
        if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;  // carry may bump the exponent; that is correct
        return sign | static_cast<std::uint16_t>(half);
    }
    if (exp >= -25) {
        const std::uint32_t m = mant | 0x00800000u;
        const int shift = 13 + (-14 - exp);
        std::uint32_t half = m >> shift;
        const std::uint32_t rem = m & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half & 1u))) ++half;
        return sign | static_cast<std::uint16_t>(half);
    }
    return sign;  // underflow to zero
}

inline float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1fu;
    const std::uint32_t mant = h & 0x3ffu;
    std::uint32_t x;
    if (exp == 0) {
        if (mant == 0) {
            x = sign;
        } else {
            int e = 0;
            std::uint32_t m = mant;
            while (!(m & 0x400u)) {
                m <<= 1;
                ++e;
            }
            x = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | ((m & 0x3ffu) << 13);
        }
    } else if (exp == 31) {
        x = sign | 0x7f800000u | (mant << 13);
    } else {
        x = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    float f;
    std::memcpy(&f, &x, 4);
    return f;
}

// ---------------------------------------------------------------------------
// int8 quantization primitives

inline std::int8_t quantize_value(double x, const QuantParams& p) {
    const std::int64_t q = round_half_away(x / p.scale) + p.zero_point;
    return static_cast<std::int8_t>(std::clamp<std::int64_t>(q, -128, 127));
}

inline double dequantize_value(std::int8_t q, const QuantParams& p) {
    return p.scale * (static_cast<int>(q) - p.zero_point);
}

/// scale = max|x| / 127, zero point 0. All-zero input degenerates to scale 1.
template <typename T>
QuantParams symmetric_params(const Tensor<T>& t) {
    double mx = 0.0;
    for (T v : t.data) mx = std::max(mx, std::abs(static_cast<double>(v)));
    return {mx > 0.0 ? mx / 127.0 : 1.0, 0};
}

/// scale = (max-min)/255, zero_point = round(-min/scale) - 128. The range is
/// widened to include zero first, which keeps the zero point inside int8 and
/// makes real zero exactly representable (padding and relu rely on that).
inline QuantParams affine_params(double mn, double mx) {
    mn = std::min(mn, 0.0);
    mx = std::max(mx, 0.0);
    if (!(mx > mn)) return {1.0, -128};  // all-zero range
    const double scale = (mx - mn) / 255.0;
    const auto zp = static_cast<int>(
        std::clamp<std::int64_t>(round_half_away(-mn / scale) - 128, -128, 127));
    return {scale, zp};
}

enum class QuantMode { Int8Symmetric, Int8Affine, Float16 };

/// Quantized payload for one tensor; exactly one of i8/f16 is populated.
struct QTensor {
    std::string name;
    DType dtype = DType::I8;
    std::vector<int> shape;
    std::vector<std::int8_t> i8;
    std::vector<std::uint16_t> f16;
    QuantParams params;

    std::int64_t numel() const { return Tensor<float>::numel_of(shape); }

    Tensor<float> dequantize() const {
        Tensor<float> t = Tensor<float>::zeros(shape);
        if (dtype == DType::I8) {
            for (std::int64_t i = 0; i < t.numel(); ++i)
                t[i] = static_cast<float>(dequantize_value(i8[static_cast<std::size_t>(i)], params));
        } else {
            for (std::int64_t i = 0; i < t.numel(); ++i)
                t[i] = half_to_float(f16[static_cast<std::size_t>(i)]);
        }
        return t;
    }
};

/// quantize_tensor per the scheme arithmetic; finite input required.
template <typename T>
QTensor quantize_tensor(const Tensor<T>& t, QuantMode mode) {
    require(t.all_finite(), "quantize_tensor requires finite input");
    QTensor q;
    q.shape = t.shape;
    if (mode == QuantMode::Float16) {
        q.dtype = DType::F16;
        q.f16.resize(t.data.size());
        for (std::size_t i = 0; i < t.data.size(); ++i)
            q.f16[i] = float_to_half(static_cast<float>(t.data[i]));
        return q;
    }
    q.dtype = DType::I8;
    if (mode == QuantMode::Int8Symmetric) {
        q.params = symmetric_params(t);
    } else {
        double mn = std::numeric_limits<double>::infinity(), mx = -mn;
        for (T v : t.data) {
            mn = std::min(mn, static_cast<double>(v));
            mx = std::max(mx, static_cast<double>(v));
        }
        q.params = affine_params(mn, mx);
    }
    q.i8.resize(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i)
        q.i8[i] = quantize_value(static_cast<double>(t.data[i]), q.params);
    return q;
}

// ---------------------------------------------------------------------------
// activation calibration

struct MinMax {
    double min = std::numeric_limits<double>::infinity();
    double max = -std::numeric_limits<double>::infinity();

    void update(double v) {
        min = std::min(min, v);
        max = std::max(max, v);
    }
};

using CalibTable = std::map<std::string, MinMax>;

template <typename T>
struct CalibCtx {
    using Act = Tensor<T>;
    FloatCtx<T> inner;
    CalibTable* table;

    void record(const std::string& name, const Act& x) {
        auto& mm = (*table)[name];
        for (std::int64_t i = 0; i < x.numel(); ++i) mm.update(static_cast<double>(x[i]));
    }

    Act input() {
        Act x = inner.input();
        record("input", x);
        return x;
    }
#define VEINPIPE_CALIB_OP(op)                          \
    Act op(const std::string& n, const Act& x) {       \
        Act y = inner.op(n, x);                        \
        record(n, y);                                  \
        return y;                                      \
    }
    VEINPIPE_CALIB_OP(conv_relu)
    VEINPIPE_CALIB_OP(conv_linear)
    VEINPIPE_CALIB_OP(maxpool)
    VEINPIPE_CALIB_OP(upconv)
    VEINPIPE_CALIB_OP(global_pool)
    VEINPIPE_CALIB_OP(dense_relu)
#undef VEINPIPE_CALIB_OP
    Act concat(const std::string& n, const Act& a, const Act& b) {
        Act y = inner.concat(n, a, b);
        record(n, y);
        return y;
    }
    // the integer sigmoid LUT needs the pre-activation range as well
    Act dense_sigmoid(const std::string& n, const Act& x) {
        Act pre = veinpipe::dense(x, inner.weights.get(n + ".w"), inner.weights.get(n + ".b"));
        record(n + ".pre", pre);
        Act y = activation(pre, Activation::Sigmoid);
        record(n, y);
        return y;
    }
};

/// Running per-activation min/max over the calibration batches. Order of
/// batches does not change the result.
inline CalibTable calibrate(const ModelWeights<float>& weights,
                            const std::vector<Tensor<float>>& batches) {
    require(!batches.empty(), "calibrate requires a non-empty calibration set");
    CalibTable table;
    for (const auto& batch : batches) {
        CalibCtx<float> ctx{FloatCtx<float>{weights, batch}, &table};
        run_unet(ctx, weights.config);
    }
    return table;
}

// ---------------------------------------------------------------------------
// quantized model

struct QuantizedModel {
    Scheme scheme = Scheme::DynamicRange;
    UNetConfig config;
    std::vector<QTensor> tensors;  // graph order, one per source weight tensor
    CalibTable calib;

    // float expansion for the weight-only schemes, built once up front so
    // concurrent forwards stay safe and timing loops never pay for it
    std::shared_ptr<const ModelWeights<float>> float_weights;

    const QTensor& get(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return t;
        throw std::invalid_argument("unknown quantized tensor: " + name);
    }

    QuantParams activation_params(const std::string& name) const {
        auto it = calib.find(name);
        require(it != calib.end(), "calibration table missing activation '" + name + "'");
        // widen to include zero so padding and relu stay exact
        return affine_params(std::min(0.0, it->second.min), std::max(0.0, it->second.max));
    }

    void build_float_cache() {
        auto w = std::make_shared<ModelWeights<float>>();
        w->config = config;
        for (const auto& t : tensors) w->add(t.name, t.dequantize());
        float_weights = std::move(w);
    }
};

/// Apply one of the four post-training schemes. Integer schemes need a
/// calibration table covering the input and every op output.
inline QuantizedModel apply_scheme(const ModelWeights<float>& weights, Scheme scheme,
                                   const CalibTable* calib = nullptr) {
    require(scheme != Scheme::Float32, "apply_scheme expects a compression scheme");
    QuantizedModel qm;
    qm.scheme = scheme;
    qm.config = weights.config;
    const bool integer = scheme == Scheme::FullInteger || scheme == Scheme::FloatFallback;
    if (integer) {
        require(calib != nullptr && !calib->empty() && calib->count("input"),
                std::string(scheme_name(scheme)) + " quantization requires calibration data");
        qm.calib = *calib;
    }
    const QuantMode mode = scheme == Scheme::Float16 ? QuantMode::Float16 : QuantMode::Int8Symmetric;
    for (const auto& [name, t] : weights.tensors) {
        QTensor q = quantize_tensor(t, mode);
        q.name = name;
        qm.tensors.push_back(std::move(q));
    }
    if (scheme == Scheme::DynamicRange || scheme == Scheme::Float16) qm.build_float_cache();
    return qm;
}

// ---------------------------------------------------------------------------
// integer inference kernels (int8 activations, int32 accumulators,
// round-half-away-from-zero requantization)

struct QuantAct {
    std::vector<std::int8_t> data;
    std::vector<int> shape;
    QuantParams qp;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
};

inline QuantAct quantize_activation(const Tensor<float>& x, const QuantParams& qp) {
    QuantAct a;
    a.shape = x.shape;
    a.qp = qp;
    a.data.resize(static_cast<std::size_t>(x.numel()));
    for (std::int64_t i = 0; i < x.numel(); ++i)
        a.data[static_cast<std::size_t>(i)] = quantize_value(static_cast<double>(x[i]), qp);
    return a;
}

inline Tensor<float> dequantize_activation(const QuantAct& a) {
    Tensor<float> t = Tensor<float>::zeros(a.shape);
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(dequantize_value(a.data[static_cast<std::size_t>(i)], a.qp));
    return t;
}

inline std::int8_t requantize(std::int32_t acc, double multiplier, int zp_out) {
    const std::int64_t q = round_half_away(multiplier * static_cast<double>(acc)) + zp_out;
    return static_cast<std::int8_t>(std::clamp<std::int64_t>(q, -128, 127));
}

/// int8 conv with optional fused relu. Bias (int8-symmetric payload) is
/// requantized on the fly to the int32 accumulator scale s_in * s_w.
inline QuantAct int_conv2d(const QuantAct& x, const QTensor& kernel, const QTensor* bias,
                           int stride, Padding pad, const QuantParams& out_qp, bool fuse_relu) {
    require(kernel.dtype == DType::I8, "int_conv2d requires int8 kernel");
    const int n = x.dim(0), ci_n = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int co_n = kernel.shape[0], kh_n = kernel.shape[2], kw_n = kernel.shape[3];
    require(kernel.shape[1] == ci_n, "int_conv2d channel mismatch");
    const auto g = detail::conv_geometry(h, w, kh_n, kw_n, stride, pad);

    const double acc_scale = x.qp.scale * kernel.params.scale;
    const double multiplier = acc_scale / out_qp.scale;
    std::vector<std::int32_t> bias_q(static_cast<std::size_t>(co_n), 0);
    if (bias) {
        for (int co = 0; co < co_n; ++co)
            bias_q[static_cast<std::size_t>(co)] = static_cast<std::int32_t>(round_half_away(
                dequantize_value(bias->i8[static_cast<std::size_t>(co)], bias->params) / acc_scale));
    }

    QuantAct out;
    out.shape = {n, co_n, g.out_h, g.out_w};
    out.qp = out_qp;
    out.data.assign(static_cast<std::size_t>(n) * co_n * g.out_h * g.out_w, 0);
    const int zp_in = x.qp.zero_point;
    const std::int8_t zero_q = static_cast<std::int8_t>(out_qp.zero_point);

    parallel_for(static_cast<std::int64_t>(n) * co_n, [&](std::int64_t idx) {
        const int in = static_cast<int>(idx / co_n);
        const int co = static_cast<int>(idx % co_n);
        std::vector<std::int32_t> acc(static_cast<std::size_t>(g.out_h) * g.out_w,
                                      bias_q[static_cast<std::size_t>(co)]);
        for (int ci = 0; ci < ci_n; ++ci) {
            const std::int8_t* in_plane =
                &x.data[(static_cast<std::size_t>(in) * ci_n + ci) * h * w];
            for (int kh = 0; kh < kh_n; ++kh)
                for (int kw = 0; kw < kw_n; ++kw) {
                    const std::int32_t kv =
                        kernel.i8[((static_cast<std::size_t>(co) * ci_n + ci) * kh_n + kh) * kw_n + kw];
                    if (kv == 0) continue;
                    const auto [wlo, whi] = detail::valid_out_range(g.out_w, w, kw, g.pad_left, stride);
                    for (int oh = 0; oh < g.out_h; ++oh) {
                        const int ih = oh * stride + kh - g.pad_top;
                        if (ih < 0 || ih >= h) continue;  // zero padding adds nothing: q == zp there
                        const std::int8_t* in_row = in_plane + static_cast<std::int64_t>(ih) * w;
                        std::int32_t* acc_row = acc.data() + static_cast<std::int64_t>(oh) * g.out_w;
                        const int off = kw - g.pad_left;
                        for (int ow = wlo; ow < whi; ++ow)
                            acc_row[ow] += kv * (static_cast<std::int32_t>(in_row[ow * stride + off]) - zp_in);
                    }
                }
        }
        std::int8_t* out_plane =
            &out.data[(static_cast<std::size_t>(in) * co_n + co) * g.out_h * g.out_w];
        for (std::size_t i = 0; i < acc.size(); ++i) {
            std::int8_t q = requantize(acc[i], multiplier, out_qp.zero_point);
            if (fuse_relu && q < zero_q) q = zero_q;
            out_plane[i] = q;
        }
    });
    return out;
}

inline QuantAct int_transposed_conv2d(const QuantAct& x, const QTensor& kernel, int stride,
                                      const QuantParams& out_qp) {
    require(kernel.dtype == DType::I8, "int_transposed_conv2d requires int8 kernel");
    const int n = x.dim(0), ci_n = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int co_n = kernel.shape[0], kh_n = kernel.shape[2], kw_n = kernel.shape[3];
    require(kernel.shape[1] == ci_n, "int_transposed_conv2d channel mismatch");
    const int oh_n = (h - 1) * stride + kh_n, ow_n = (w - 1) * stride + kw_n;
    const double multiplier = x.qp.scale * kernel.params.scale / out_qp.scale;
    const int zp_in = x.qp.zero_point;

    QuantAct out;
    out.shape = {n, co_n, oh_n, ow_n};
    out.qp = out_qp;
    out.data.assign(static_cast<std::size_t>(n) * co_n * oh_n * ow_n, 0);
    parallel_for(static_cast<std::int64_t>(n) * co_n, [&](std::int64_t idx) {
        const int in = static_cast<int>(idx / co_n);
        const int co = static_cast<int>(idx % co_n);
        std::vector<std::int32_t> acc(static_cast<std::size_t>(oh_n) * ow_n, 0);
        for (int ci = 0; ci < ci_n; ++ci) {
            const std::int8_t* in_plane =
                &x.data[(static_cast<std::size_t>(in) * ci_n + ci) * h * w];
            for (int kh = 0; kh < kh_n; ++kh)
                for (int kw = 0; kw < kw_n; ++kw) {
                    const std::int32_t kv =
                        kernel.i8[((static_cast<std::size_t>(co) * ci_n + ci) * kh_n + kh) * kw_n + kw];
                    if (kv == 0) continue;
                    for (int ih = 0; ih < h; ++ih) {
                        const std::int8_t* in_row = in_plane + static_cast<std::int64_t>(ih) * w;
                        std::int32_t* acc_row =
                            acc.data() + static_cast<std::int64_t>(ih * stride + kh) * ow_n + kw;
                        for (int iw = 0; iw < w; ++iw)
                            acc_row[iw * stride] += kv * (static_cast<std::int32_t>(in_row[iw]) - zp_in);
                    }
                }
        }
        std::int8_t* out_plane = &out.data[(static_cast<std::size_t>(in) * co_n + co) * oh_n * ow_n];
        for (std::size_t i = 0; i < acc.size(); ++i)
            out_plane[i] = requantize(acc[i], multiplier, out_qp.zero_point);
    });
    return out;
}

inline QuantAct int_maxpool2d(const QuantAct& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    require(h % 2 == 0 && w % 2 == 0, "int_maxpool2d requires even extents");
    QuantAct out;
    out.shape = {n, c, h / 2, w / 2};
    out.qp = x.qp;
    out.data.resize(static_cast<std::size_t>(n) * c * (h / 2) * (w / 2));
    std::size_t o = 0;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const std::int8_t* plane = &x.data[(static_cast<std::size_t>(in) * c + ic) * h * w];
            for (int oh = 0; oh < h / 2; ++oh)
                for (int ow = 0; ow < w / 2; ++ow) {
                    std::int8_t best = plane[static_cast<std::size_t>(2 * oh) * w + 2 * ow];
                    for (int dh = 0; dh < 2; ++dh)
                        for (int dw = 0; dw < 2; ++dw)
                            best = std::max(best,
                                            plane[static_cast<std::size_t>(2 * oh + dh) * w + 2 * ow + dw]);
                    out.data[o++] = best;
                }
        }
    return out;
}

inline QuantAct int_concat_channels(const QuantAct& a, const QuantAct& b,
                                    const QuantParams& out_qp) {
    require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
            "int_concat_channels spatial mismatch");
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    QuantAct out;
    out.shape = {n, ca + cb, h, w};
    out.qp = out_qp;
    out.data.resize(static_cast<std::size_t>(n) * (ca + cb) * h * w);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    auto requant_into = [&](const QuantAct& src, int channels, int in_idx, std::int8_t* dst) {
        const double m = src.qp.scale / out_qp.scale;
        const std::int8_t* s = &src.data[static_cast<std::size_t>(in_idx) * channels * plane];
        for (std::int64_t i = 0; i < plane * channels; ++i)
            dst[i] = requantize(static_cast<std::int32_t>(s[i]) - src.qp.zero_point, m,
                                out_qp.zero_point);
    };
    for (int in = 0; in < n; ++in) {
        std::int8_t* dst = &out.data[static_cast<std::size_t>(in) * (ca + cb) * plane];
        requant_into(a, ca, in, dst);
        requant_into(b, cb, in, dst + plane * ca);
    }
    return out;
}

inline QuantAct int_global_avg_pool(const QuantAct& x, const QuantParams& out_qp) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const double multiplier = x.qp.scale / (out_qp.scale * static_cast<double>(plane));
    QuantAct out;
    out.shape = {n, c};
    out.qp = out_qp;
    out.data.resize(static_cast<std::size_t>(n) * c);
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const std::int8_t* p = &x.data[(static_cast<std::size_t>(in) * c + ic) * plane];
            std::int32_t acc = 0;
            for (std::int64_t i = 0; i < plane; ++i)
                acc += static_cast<std::int32_t>(p[i]) - x.qp.zero_point;
            out.data[static_cast<std::size_t>(in) * c + ic] =
                requantize(acc, multiplier, out_qp.zero_point);
        }
    return out;
}

inline QuantAct int_dense(const QuantAct& x, const QTensor& weight, const QTensor* bias,
                          const QuantParams& out_qp, bool fuse_relu) {
    require(weight.dtype == DType::I8, "int_dense requires int8 weight");
    const int n = x.dim(0), f = x.dim(1), g = weight.shape[1];
    require(weight.shape[0] == f, "int_dense inner extent mismatch");
    const double acc_scale = x.qp.scale * weight.params.scale;
    const double multiplier = acc_scale / out_qp.scale;
    std::vector<std::int32_t> bias_q(static_cast<std::size_t>(g), 0);
    if (bias)
        for (int j = 0; j < g; ++j)
            bias_q[static_cast<std::size_t>(j)] = static_cast<std::int32_t>(round_half_away(
                dequantize_value(bias->i8[static_cast<std::size_t>(j)], bias->params) / acc_scale));

    QuantAct out;
    out.shape = {n, g};
    out.qp = out_qp;
    out.data.resize(static_cast<std::size_t>(n) * g);
    const std::int8_t zero_q = static_cast<std::int8_t>(out_qp.zero_point);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < g; ++j) {
            std::int32_t acc = bias_q[static_cast<std::size_t>(j)];
            for (int k = 0; k < f; ++k) {
                const std::int32_t xv =
                    static_cast<std::int32_t>(x.data[static_cast<std::size_t>(i) * f + k]) -
                    x.qp.zero_point;
                const std::int32_t wv = weight.i8[static_cast<std::size_t>(k) * g + j];
                acc += xv * wv;
            }
            std::int8_t q = requantize(acc, multiplier, out_qp.zero_point);
            if (fuse_relu && q < zero_q) q = zero_q;
            out.data[static_cast<std::size_t>(i) * g + j] = q;
        }
    return out;
}

/// int8 -> int8 sigmoid via a 256-entry lookup table.
inline QuantAct int_sigmoid(const QuantAct& x, const QuantParams& out_qp) {
    std::array<std::int8_t, 256> lut;
    for (int q = -128; q <= 127; ++q) {
        const double v = sigmoid_scalar(x.qp.scale * (q - x.qp.zero_point));
        lut[static_cast<std::size_t>(q + 128)] = quantize_value(v, out_qp);
    }
    QuantAct out;
    out.shape = x.shape;
    out.qp = out_qp;
    out.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i)
        out.data[i] = lut[static_cast<std::size_t>(static_cast<int>(x.data[i]) + 128)];
    return out;
}

// ---------------------------------------------------------------------------
// quantized execution

struct IntCtx {
    using Act = QuantAct;
    const QuantizedModel& qm;
    Tensor<float> batch;

    QuantParams out_params(const std::string& name) const { return qm.activation_params(name); }

    Act input() { return quantize_activation(batch, out_params("input")); }
    Act conv_relu(const std::string& n, const Act& x) {
        return int_conv2d(x, qm.get(n + ".w"), &qm.get(n + ".b"), 1, Padding::Same, out_params(n),
                          true);
    }
    Act conv_linear(const std::string& n, const Act& x) {
        return int_conv2d(x, qm.get(n + ".w"), &qm.get(n + ".b"), 1, Padding::Same, out_params(n),
                          false);
    }
    Act maxpool(const std::string&, const Act& x) { return int_maxpool2d(x); }
    Act upconv(const std::string& n, const Act& x) {
        return int_transposed_conv2d(x, qm.get(n + ".w"), 2, out_params(n));
    }
    Act concat(const std::string& n, const Act& a, const Act& b) {
        return int_concat_channels(a, b, out_params(n));
    }
    Act global_pool(const std::string& n, const Act& x) {
        return int_global_avg_pool(x, out_params(n));
    }
    Act dense_relu(const std::string& n, const Act& x) {
        return int_dense(x, qm.get(n + ".w"), &qm.get(n + ".b"), out_params(n), true);
    }
    Act dense_sigmoid(const std::string& n, const Act& x) {
        // the calibrated range covers the pre-sigmoid dense output's sigmoid
        // image, which lives in (0,1); feed the LUT from an intermediate
        // affine quantization of the dense output
        const QTensor& w = qm.get(n + ".w");
        const QTensor& b = qm.get(n + ".b");
        // derive pre-activation params from the weight/bias ranges seen at
        // calibration time via the dedicated pre-activation entry
        return int_sigmoid(int_dense(x, w, &b, qm.activation_params(n + ".pre"), false),
                           out_params(n));
    }
};

struct QuantForwardResult {
    QuantAct logits;
    QuantAct fossa;
};

/// The int8-in/int8-out core used by the full-integer scheme.
inline QuantForwardResult quantized_forward_int8(const QuantizedModel& qm, const QuantAct& batch) {
    require(qm.scheme == Scheme::FullInteger || qm.scheme == Scheme::FloatFallback,
            "quantized_forward_int8 requires an integer scheme");
    struct PreQuantizedCtx : IntCtx {
        const QuantAct* pre;
        Act input() { return *pre; }
    };
    PreQuantizedCtx ctx{{qm, {}}, &batch};
    auto out = run_unet(ctx, qm.config);
    return {std::move(out.logits), std::move(out.fossa)};
}

/// Same output contract as the float forward for every scheme. Weight-only
/// schemes run the float kernels over dequantized weights; integer schemes run
/// the int8 core with quantize/dequantize at the boundary.
inline ForwardResult<float> quantized_forward(const QuantizedModel& qm,
                                              const Tensor<float>& batch) {
    const int s = qm.config.input_size;
    require(batch.rank() == 4 && batch.shape[1] == 1 && batch.shape[2] == s && batch.shape[3] == s,
            "quantized_forward expects batch N x 1 x " + std::to_string(s) + " x " +
                std::to_string(s) + ", got " + shape_to_string(batch.shape));
    if (qm.scheme == Scheme::DynamicRange || qm.scheme == Scheme::Float16) {
        require(qm.float_weights != nullptr, "quantized model is missing its float expansion");
        return forward(*qm.float_weights, batch);
    }
    const QuantAct input = quantize_activation(batch, qm.activation_params("input"));
    auto out = quantized_forward_int8(qm, input);
    return {dequantize_activation(out.logits), dequantize_activation(out.fossa)};
}

// ---------------------------------------------------------------------------
// serialization: same record layout as the weights container, plus a scheme
// byte and the embedded calibration table

inline std::string serialize_quantized(const QuantizedModel& qm) {
    binio::Writer w;
    w.bytes(kQuantizedMagic, 5);
    w.u32(kWeightsFormatVersion);
    w.u8(static_cast<std::uint8_t>(qm.scheme));
    detail::write_config(w, qm.config);
    w.u32(static_cast<std::uint32_t>(qm.calib.size()));
    for (const auto& [name, mm] : qm.calib) {
        w.str(name);
        w.f64(mm.min);
        w.f64(mm.max);
    }
    w.u32(static_cast<std::uint32_t>(qm.tensors.size()));
    for (const auto& t : qm.tensors) {
        w.str(t.name);
        w.u8(static_cast<std::uint8_t>(t.dtype));
        detail::write_shape(w, t.shape);
        if (t.dtype == DType::I8) {
            w.f64(t.params.scale);
            w.i32(t.params.zero_point);
            w.bytes(t.i8.data(), t.i8.size());
        } else {
            for (std::uint16_t v : t.f16) {
                w.u8(static_cast<std::uint8_t>(v & 0xff));
                w.u8(static_cast<std::uint8_t>(v >> 8));
            }
        }
    }
    return w.buffer();
}

inline void save_quantized(const QuantizedModel& qm, const std::filesystem::path& path) {
    binio::atomic_write_file(path, serialize_quantized(qm));
}

inline QuantizedModel load_quantized(const std::filesystem::path& path) {
    binio::Reader r(binio::read_file(path), path.string());
    char magic[5];
    r.bytes(magic, 5, "magic");
    if (std::memcmp(magic, kQuantizedMagic, 5) != 0)
        throw std::runtime_error("not a quantized model file: " + path.string());
    const std::uint32_t version = r.u32("version");
    if (version != kWeightsFormatVersion)
        throw std::runtime_error("unsupported quantized file version " + std::to_string(version) +
                                 " in " + path.string());
    QuantizedModel qm;
    const auto scheme_byte = r.u8("scheme");
    require(scheme_byte >= 1 && scheme_byte <= 4, "bad scheme byte in " + path.string());
    qm.scheme = static_cast<Scheme>(scheme_byte);
    qm.config = detail::read_config(r);
    const std::uint32_t calib_count = r.u32("calibration entry count");
    for (std::uint32_t i = 0; i < calib_count; ++i) {
        const std::string name = r.str("calibration entry name");
        MinMax mm;
        mm.min = r.f64("calibration min of '" + name + "'");
        mm.max = r.f64("calibration max of '" + name + "'");
        qm.calib.emplace(name, mm);
    }
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        QTensor t;
        t.name = r.str("tensor name");
        t.dtype = static_cast<DType>(r.u8("dtype of tensor '" + t.name + "'"));
        require(t.dtype == DType::I8 || t.dtype == DType::F16,
                "tensor '" + t.name + "' has a dtype not allowed in quantized files");
        t.shape = detail::read_shape(r, t.name);
        const auto n = static_cast<std::size_t>(Tensor<float>::numel_of(t.shape));
        if (t.dtype == DType::I8) {
            t.params.scale = r.f64("scale of tensor '" + t.name + "'");
            t.params.zero_point = r.i32("zero point of tensor '" + t.name + "'");
            t.i8.resize(n);
            r.bytes(t.i8.data(), n, "payload of tensor '" + t.name + "'");
        } else {
            t.f16.resize(n);
            for (auto& v : t.f16) {
                const auto lo = r.u8("payload of tensor '" + t.name + "'");
                const auto hi = r.u8("payload of tensor '" + t.name + "'");
                v = static_cast<std::uint16_t>(lo | (hi << 8));
            }
        }
        qm.tensors.push_back(std::move(t));
    }
    const auto specs = weight_specs(qm.config);
    require(specs.size() == qm.tensors.size(),
            "quantized file tensor count does not match config: " + path.string());
    for (std::size_t i = 0; i < specs.size(); ++i)
        require(qm.tensors[i].name == specs[i].name && qm.tensors[i].shape == specs[i].shape,
                "quantized tensor '" + qm.tensors[i].name + "' does not match the config layout");
    if (qm.scheme == Scheme::DynamicRange || qm.scheme == Scheme::Float16) qm.build_float_cache();
    return qm;
}

}  // namespace veinpipe
