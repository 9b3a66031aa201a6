#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>

#include "veinpipe/common.hpp"

namespace veinpipe {

/// Dense row-major tensor. Activations are N x C x H x W, convolution
/// kernels O x I x Kh x Kw; dense weights F x G; vectors rank 1.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;

    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        require(numel_of(shape) == static_cast<std::int64_t>(data.size()),
                "tensor data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_to_string(shape));
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int e : s) {
            require(e > 0, "tensor extents must be positive, got shape " + shape_to_string(s));
            n *= e;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) {
        auto n = numel_of(s);
        return Tensor(std::move(s), std::vector<T>(static_cast<std::size_t>(n), T(0)));
    }

    static Tensor full(std::vector<int> s, T v) {
        auto n = numel_of(s);
        return Tensor(std::move(s), std::vector<T>(static_cast<std::size_t>(n), v));
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    T& at4(int n, int c, int h, int w) {
        return data[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    const T& at4(int n, int c, int h, int w) const {
        return data[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    T& at2(int i, int j) { return data[static_cast<std::size_t>(static_cast<std::int64_t>(i) * shape[1] + j)]; }
    const T& at2(int i, int j) const { return data[static_cast<std::size_t>(static_cast<std::int64_t>(i) * shape[1] + j)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out[i] = static_cast<U>(data[i]);
        return Tensor<U>(shape, std::move(out));
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

enum class Padding { Same, Valid };

enum class Activation { Relu, Sigmoid };

namespace detail {

inline void check_rank(const std::vector<int>& shape, int rank, const char* what) {
    require(static_cast<int>(shape.size()) == rank,
            std::string(what) + " expects rank " + std::to_string(rank) + ", got shape " +
                shape_to_string(shape));
}

struct ConvGeom {
    int out_h = 0, out_w = 0;
    int pad_top = 0, pad_left = 0;
};

inline ConvGeom conv_geometry(int h, int w, int kh, int kw, int stride, Padding pad) {
    require(stride >= 1, "conv stride must be positive");
    ConvGeom g;
    if (pad == Padding::Valid) {
        require(kh <= h && kw <= w,
                "conv kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                    " exceeds input " + std::to_string(h) + "x" + std::to_string(w));
        g.out_h = (h - kh) / stride + 1;
        g.out_w = (w - kw) / stride + 1;
    } else {
        g.out_h = (h + stride - 1) / stride;
        g.out_w = (w + stride - 1) / stride;
        const int pad_h = std::max(0, (g.out_h - 1) * stride + kh - h);
        const int pad_w = std::max(0, (g.out_w - 1) * stride + kw - w);
        // extra pixel goes to bottom/right
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
        require(kh <= h + pad_h && kw <= w + pad_w, "conv kernel exceeds padded input");
    }
    return g;
}

// Output-column range [lo, hi) for which iw = ow*stride + k - pad stays in [0, extent).
inline std::pair<int, int> valid_out_range(int out_extent, int in_extent, int k, int pad, int stride) {
    int lo = 0;
    const int off = k - pad;
    if (off < 0) lo = (-off + stride - 1) / stride;
    int hi = out_extent;
    // ow*stride + off <= in_extent-1
    const int max_ow = (in_extent - 1 - off) / stride;
    if (max_ow + 1 < hi) hi = max_ow + 1;
    if (off > in_extent - 1) hi = lo;
    return {lo, std::max(lo, hi)};
}

}  // namespace detail

/// Cross-correlation with zero padding. input N x Cin x H x W,
/// kernel Cout x Cin x Kh x Kw, bias Cout.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, Padding pad) {
    detail::check_rank(input.shape, 4, "conv2d input");
    detail::check_rank(kernel.shape, 4, "conv2d kernel");
    require(kernel.shape[1] == input.shape[1],
            "conv2d channel mismatch: input " + shape_to_string(input.shape) + " vs kernel " +
                shape_to_string(kernel.shape));
    require(bias.rank() == 1 && bias.shape[0] == kernel.shape[0],
            "conv2d bias shape " + shape_to_string(bias.shape) + " must be [" +
                std::to_string(kernel.shape[0]) + "]");
    const int n = input.shape[0], ci_n = input.shape[1], h = input.shape[2], w = input.shape[3];
    const int co_n = kernel.shape[0], kh_n = kernel.shape[2], kw_n = kernel.shape[3];
    const auto g = detail::conv_geometry(h, w, kh_n, kw_n, stride, pad);

    Tensor<T> out = Tensor<T>::zeros({n, co_n, g.out_h, g.out_w});
    parallel_for(static_cast<std::int64_t>(n) * co_n, [&](std::int64_t idx) {
        const int in = static_cast<int>(idx / co_n);
        const int co = static_cast<int>(idx % co_n);
        T* out_base = &out.at4(in, co, 0, 0);
        const std::int64_t plane = static_cast<std::int64_t>(g.out_h) * g.out_w;
        const T b = bias[co];
        for (std::int64_t i = 0; i < plane; ++i) out_base[i] = b;
        for (int ci = 0; ci < ci_n; ++ci) {
            const T* in_plane = &input.at4(in, ci, 0, 0);
            for (int kh = 0; kh < kh_n; ++kh) {
                for (int kw = 0; kw < kw_n; ++kw) {
                    const T kv = kernel.at4(co, ci, kh, kw);
                    if (kv == T(0)) continue;
                    const auto [wlo, whi] = detail::valid_out_range(g.out_w, w, kw, g.pad_left, stride);
                    for (int oh = 0; oh < g.out_h; ++oh) {
                        const int ih = oh * stride + kh - g.pad_top;
                        if (ih < 0 || ih >= h) continue;
                        const T* in_row = in_plane + static_cast<std::int64_t>(ih) * w;
                        T* out_row = out_base + static_cast<std::int64_t>(oh) * g.out_w;
                        const int off = kw - g.pad_left;
                        for (int ow = wlo; ow < whi; ++ow)
                            out_row[ow] += kv * in_row[ow * stride + off];
                    }
                }
            }
        }
    });
    return out;
}

/// Adjoints of conv2d. Any of the gradient outputs may be null.
template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, int stride, Padding pad,
                     const Tensor<T>& grad_out, Tensor<T>* grad_input, Tensor<T>* grad_kernel,
                     Tensor<T>* grad_bias) {
    const int n = input.shape[0], ci_n = input.shape[1], h = input.shape[2], w = input.shape[3];
    const int co_n = kernel.shape[0], kh_n = kernel.shape[2], kw_n = kernel.shape[3];
    const auto g = detail::conv_geometry(h, w, kh_n, kw_n, stride, pad);
    const int oh_n = g.out_h, ow_n = g.out_w;

    if (grad_bias) {
        for (int in = 0; in < n; ++in)
            for (int co = 0; co < co_n; ++co) {
                const T* go = &grad_out.at4(in, co, 0, 0);
                T acc = T(0);
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh_n) * ow_n; ++i) acc += go[i];
                (*grad_bias)[co] += acc;
            }
    }
    if (grad_kernel) {
        for (int in = 0; in < n; ++in)
            for (int co = 0; co < co_n; ++co)
                for (int ci = 0; ci < ci_n; ++ci) {
                    const T* in_plane = &input.at4(in, ci, 0, 0);
                    const T* go_plane = &grad_out.at4(in, co, 0, 0);
                    for (int kh = 0; kh < kh_n; ++kh)
                        for (int kw = 0; kw < kw_n; ++kw) {
                            const auto [wlo, whi] =
                                detail::valid_out_range(ow_n, w, kw, g.pad_left, stride);
                            T acc = T(0);
                            for (int oh = 0; oh < oh_n; ++oh) {
                                const int ih = oh * stride + kh - g.pad_top;
                                if (ih < 0 || ih >= h) continue;
                                const T* in_row = in_plane + static_cast<std::int64_t>(ih) * w;
                                const T* go_row = go_plane + static_cast<std::int64_t>(oh) * ow_n;
                                const int off = kw - g.pad_left;
                                for (int ow = wlo; ow < whi; ++ow)
                                    acc += go_row[ow] * in_row[ow * stride + off];
                            }
                            grad_kernel->at4(co, ci, kh, kw) += acc;
                        }
                }
    }
    if (grad_input) {
        parallel_for(static_cast<std::int64_t>(n) * ci_n, [&](std::int64_t idx) {
            const int in = static_cast<int>(idx / ci_n);
            const int ci = static_cast<int>(idx % ci_n);
            T* gi_plane = &grad_input->at4(in, ci, 0, 0);
            for (int co = 0; co < co_n; ++co) {
                const T* go_plane = &grad_out.at4(in, co, 0, 0);
                for (int kh = 0; kh < kh_n; ++kh)
                    for (int kw = 0; kw < kw_n; ++kw) {
                        const T kv = kernel.at4(co, ci, kh, kw);
                        if (kv == T(0)) continue;
                        const auto [wlo, whi] = detail::valid_out_range(ow_n, w, kw, g.pad_left, stride);
                        for (int oh = 0; oh < oh_n; ++oh) {
                            const int ih = oh * stride + kh - g.pad_top;
                            if (ih < 0 || ih >= h) continue;
                            T* gi_row = gi_plane + static_cast<std::int64_t>(ih) * w;
                            const T* go_row = go_plane + static_cast<std::int64_t>(oh) * ow_n;
                            const int off = kw - g.pad_left;
                            for (int ow = wlo; ow < whi; ++ow)
                                gi_row[ow * stride + off] += kv * go_row[ow];
                        }
                    }
            }
        });
    }
}

/// Fractional-stride (transposed) convolution; kernel Cout x Cin x Kh x Kw.
/// out[n, co, h*s + kh, w*s + kw] += in[n, ci, h, w] * k[co, ci, kh, kw].
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride) {
    detail::check_rank(input.shape, 4, "transposed_conv2d input");
    detail::check_rank(kernel.shape, 4, "transposed_conv2d kernel");
    require(stride >= 1, "transposed_conv2d stride must be positive");
    require(kernel.shape[1] == input.shape[1],
            "transposed_conv2d channel mismatch: input " + shape_to_string(input.shape) +
                " vs kernel " + shape_to_string(kernel.shape));
    const int n = input.shape[0], ci_n = input.shape[1], h = input.shape[2], w = input.shape[3];
    const int co_n = kernel.shape[0], kh_n = kernel.shape[2], kw_n = kernel.shape[3];
    const int oh_n = (h - 1) * stride + kh_n;
    const int ow_n = (w - 1) * stride + kw_n;

    Tensor<T> out = Tensor<T>::zeros({n, co_n, oh_n, ow_n});
    parallel_for(static_cast<std::int64_t>(n) * co_n, [&](std::int64_t idx) {
        const int in = static_cast<int>(idx / co_n);
        const int co = static_cast<int>(idx % co_n);
        T* out_plane = &out.at4(in, co, 0, 0);
        for (int ci = 0; ci < ci_n; ++ci) {
            const T* in_plane = &input.at4(in, ci, 0, 0);
            for (int kh = 0; kh < kh_n; ++kh)
                for (int kw = 0; kw < kw_n; ++kw) {
                    const T kv = kernel.at4(co, ci, kh, kw);
                    if (kv == T(0)) continue;
                    for (int ih = 0; ih < h; ++ih) {
                        const T* in_row = in_plane + static_cast<std::int64_t>(ih) * w;
                        T* out_row = out_plane + static_cast<std::int64_t>(ih * stride + kh) * ow_n + kw;
                        for (int iw = 0; iw < w; ++iw) out_row[iw * stride] += kv * in_row[iw];
                    }
                }
        }
    });
    return out;
}

template <typename T>
void transposed_conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, int stride,
                                const Tensor<T>& grad_out, Tensor<T>* grad_input,
                                Tensor<T>* grad_kernel) {
    const int n = input.shape[0], ci_n = input.shape[1], h = input.shape[2], w = input.shape[3];
    const int co_n = kernel.shape[0], kh_n = kernel.shape[2], kw_n = kernel.shape[3];
    const int ow_n = grad_out.shape[3];

    for (int in = 0; in < n; ++in)
        for (int co = 0; co < co_n; ++co) {
            const T* go_plane = &grad_out.at4(in, co, 0, 0);
            for (int ci = 0; ci < ci_n; ++ci) {
                const T* in_plane = &input.at4(in, ci, 0, 0);
                T* gi_plane = grad_input ? &grad_input->at4(in, ci, 0, 0) : nullptr;
                for (int kh = 0; kh < kh_n; ++kh)
                    for (int kw = 0; kw < kw_n; ++kw) {
                        const T kv = kernel.at4(co, ci, kh, kw);
                        T acc = T(0);
                        for (int ih = 0; ih < h; ++ih) {
                            const T* go_row =
                                go_plane + static_cast<std::int64_t>(ih * stride + kh) * ow_n + kw;
                            const T* in_row = in_plane + static_cast<std::int64_t>(ih) * w;
                            T* gi_row = gi_plane ? gi_plane + static_cast<std::int64_t>(ih) * w : nullptr;
                            for (int iw = 0; iw < w; ++iw) {
                                const T go = go_row[iw * stride];
                                acc += go * in_row[iw];
                                if (gi_row) gi_row[iw] += kv * go;
                            }
                        }
                        if (grad_kernel) grad_kernel->at4(co, ci, kh, kw) += acc;
                    }
            }
        }
}

template <typename T>
struct PoolResult {
    Tensor<T> output;
    std::vector<std::int64_t> argmax;  // flat index into the input, per output element
};

/// 2x2 max pooling, stride 2. Ties break to the first element in scan order.
template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& input) {
    detail::check_rank(input.shape, 4, "maxpool2d input");
    const int n = input.shape[0], c = input.shape[1], h = input.shape[2], w = input.shape[3];
    require(h % 2 == 0 && w % 2 == 0,
            "maxpool2d requires even spatial extents, got " + shape_to_string(input.shape));
    const int oh_n = h / 2, ow_n = w / 2;
    PoolResult<T> r;
    r.output = Tensor<T>::zeros({n, c, oh_n, ow_n});
    r.argmax.assign(static_cast<std::size_t>(r.output.numel()), 0);
    std::int64_t oidx = 0;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const T* plane = &input.at4(in, ic, 0, 0);
            const std::int64_t plane_base =
                (static_cast<std::int64_t>(in) * c + ic) * h * w;
            for (int oh = 0; oh < oh_n; ++oh)
                for (int ow = 0; ow < ow_n; ++ow, ++oidx) {
                    T best = plane[static_cast<std::int64_t>(2 * oh) * w + 2 * ow];
                    std::int64_t best_at = static_cast<std::int64_t>(2 * oh) * w + 2 * ow;
                    for (int dh = 0; dh < 2; ++dh)
                        for (int dw = 0; dw < 2; ++dw) {
                            const std::int64_t at = static_cast<std::int64_t>(2 * oh + dh) * w + 2 * ow + dw;
                            if (plane[at] > best) {
                                best = plane[at];
                                best_at = at;
                            }
                        }
                    r.output[oidx] = best;
                    r.argmax[static_cast<std::size_t>(oidx)] = plane_base + best_at;
                }
        }
    return r;
}

template <typename T>
void maxpool2d_backward(const std::vector<std::int64_t>& argmax, const Tensor<T>& grad_out,
                        Tensor<T>* grad_input) {
    for (std::int64_t i = 0; i < grad_out.numel(); ++i)
        (*grad_input)[argmax[static_cast<std::size_t>(i)]] += grad_out[i];
}

/// Affine map: input N x F, weight F x G, bias G.
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    detail::check_rank(input.shape, 2, "dense input");
    detail::check_rank(weight.shape, 2, "dense weight");
    require(input.shape[1] == weight.shape[0],
            "dense inner extent mismatch: input " + shape_to_string(input.shape) + " vs weight " +
                shape_to_string(weight.shape));
    require(bias.rank() == 1 && bias.shape[0] == weight.shape[1],
            "dense bias shape " + shape_to_string(bias.shape) + " must be [" +
                std::to_string(weight.shape[1]) + "]");
    const int n = input.shape[0], f = input.shape[1], g = weight.shape[1];
    Tensor<T> out = Tensor<T>::zeros({n, g});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < g; ++j) out.at2(i, j) = bias[j];
        for (int k = 0; k < f; ++k) {
            const T x = input.at2(i, k);
            if (x == T(0)) continue;
            const T* wrow = &weight.at2(k, 0);
            T* orow = &out.at2(i, 0);
            for (int j = 0; j < g; ++j) orow[j] += x * wrow[j];
        }
    }
    return out;
}

template <typename T>
void dense_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                    Tensor<T>* grad_input, Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
    const int n = input.shape[0], f = input.shape[1], g = weight.shape[1];
    for (int i = 0; i < n; ++i) {
        const T* go = &grad_out.at2(i, 0);
        if (grad_bias)
            for (int j = 0; j < g; ++j) (*grad_bias)[j] += go[j];
        for (int k = 0; k < f; ++k) {
            if (grad_weight) {
                const T x = input.at2(i, k);
                T* gw = &grad_weight->at2(k, 0);
                for (int j = 0; j < g; ++j) gw[j] += x * go[j];
            }
            if (grad_input) {
                const T* wrow = &weight.at2(k, 0);
                T acc = T(0);
                for (int j = 0; j < g; ++j) acc += wrow[j] * go[j];
                grad_input->at2(i, k) += acc;
            }
        }
    }
}

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind) {
    Tensor<T> out = input;
    if (kind == Activation::Relu) {
        for (auto& v : out.data) v = v > T(0) ? v : T(0);
    } else {
        for (auto& v : out.data) v = sigmoid_scalar(v);
    }
    return out;
}

/// Channel concatenation of two N x C x H x W tensors with equal N, H, W.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_rank(a.shape, 4, "concat_channels input");
    detail::check_rank(b.shape, 4, "concat_channels input");
    require(a.shape[0] == b.shape[0] && a.shape[2] == b.shape[2] && a.shape[3] == b.shape[3],
            "concat_channels spatial mismatch: " + shape_to_string(a.shape) + " vs " +
                shape_to_string(b.shape));
    const int n = a.shape[0], ca = a.shape[1], cb = b.shape[1], h = a.shape[2], w = a.shape[3];
    Tensor<T> out = Tensor<T>::zeros({n, ca + cb, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int in = 0; in < n; ++in) {
        std::copy_n(&a.at4(in, 0, 0, 0), plane * ca, &out.at4(in, 0, 0, 0));
        std::copy_n(&b.at4(in, 0, 0, 0), plane * cb, &out.at4(in, ca, 0, 0));
    }
    return out;
}

/// Slice channels [c0, c1) out of an N x C x H x W tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
    detail::check_rank(x.shape, 4, "slice_channels input");
    require(0 <= c0 && c0 < c1 && c1 <= x.shape[1], "slice_channels range out of bounds");
    const int n = x.shape[0], h = x.shape[2], w = x.shape[3];
    Tensor<T> out = Tensor<T>::zeros({n, c1 - c0, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int in = 0; in < n; ++in)
        std::copy_n(&x.at4(in, c0, 0, 0), plane * (c1 - c0), &out.at4(in, 0, 0, 0));
    return out;
}

/// Mean over each H x W plane: N x C x H x W -> N x C.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
    detail::check_rank(input.shape, 4, "global_avg_pool input");
    const int n = input.shape[0], c = input.shape[1], h = input.shape[2], w = input.shape[3];
    Tensor<T> out = Tensor<T>::zeros({n, c});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const T* p = &input.at4(in, ic, 0, 0);
            T acc = T(0);
            for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
            out.at2(in, ic) = acc / static_cast<T>(plane);
        }
    return out;
}

}  // namespace veinpipe
