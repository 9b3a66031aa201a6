#pragma once

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>

#include "veinpipe/tensor.hpp"

namespace veinpipe {

/// Reverse-mode tape over the layer primitives. Ops record a closure that
/// scatters adjoints into their inputs; backward() replays them in exact
/// reverse execution order. Single-threaded per training step.
template <typename T>
class Tape {
public:
    using VarId = int;

    VarId constant(Tensor<T> v) { return push(std::move(v)); }

    VarId param(const std::string& name, Tensor<T> v) {
        require(params_.find(name) == params_.end(), "duplicate parameter name: " + name);
        const VarId id = push(std::move(v));
        params_.emplace(name, id);
        param_order_.push_back(name);
        return id;
    }

    const Tensor<T>& value(VarId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor<T>& grad(VarId id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

    VarId conv2d(VarId x, VarId k, VarId b, int stride, Padding pad) {
        VarId out = push(veinpipe::conv2d(value(x), value(k), value(b), stride, pad));
        ops_.push_back([this, x, k, b, stride, pad, out] {
            conv2d_backward(value(x), value(k), stride, pad, node(out).grad, &node(x).grad,
                            &node(k).grad, &node(b).grad);
        });
        return out;
    }

    VarId transposed_conv2d(VarId x, VarId k, int stride) {
        VarId out = push(veinpipe::transposed_conv2d(value(x), value(k), stride));
        ops_.push_back([this, x, k, stride, out] {
            transposed_conv2d_backward(value(x), value(k), stride, node(out).grad, &node(x).grad,
                                       &node(k).grad);
        });
        return out;
    }

    VarId maxpool2d(VarId x) {
        auto r = veinpipe::maxpool2d(value(x));
        VarId out = push(std::move(r.output));
        ops_.push_back([this, x, out, argmax = std::move(r.argmax)] {
            maxpool2d_backward(argmax, node(out).grad, &node(x).grad);
        });
        return out;
    }

    VarId dense(VarId x, VarId w, VarId b) {
        VarId out = push(veinpipe::dense(value(x), value(w), value(b)));
        ops_.push_back([this, x, w, b, out] {
            dense_backward(value(x), value(w), node(out).grad, &node(x).grad, &node(w).grad,
                           &node(b).grad);
        });
        return out;
    }

    VarId relu(VarId x) {
        VarId out = push(activation(value(x), Activation::Relu));
        ops_.push_back([this, x, out] {
            const Tensor<T>& in = value(x);
            const Tensor<T>& go = node(out).grad;
            Tensor<T>& gi = node(x).grad;
            for (std::int64_t i = 0; i < in.numel(); ++i)
                if (in[i] > T(0)) gi[i] += go[i];
        });
        return out;
    }

    VarId sigmoid(VarId x) {
        VarId out = push(activation(value(x), Activation::Sigmoid));
        ops_.push_back([this, x, out] {
            const Tensor<T>& y = value(out);
            const Tensor<T>& go = node(out).grad;
            Tensor<T>& gi = node(x).grad;
            for (std::int64_t i = 0; i < y.numel(); ++i) gi[i] += go[i] * y[i] * (T(1) - y[i]);
        });
        return out;
    }

    VarId concat_channels(VarId a, VarId b) {
        VarId out = push(veinpipe::concat_channels(value(a), value(b)));
        ops_.push_back([this, a, b, out] {
            const Tensor<T>& go = node(out).grad;
            Tensor<T>& ga = node(a).grad;
            Tensor<T>& gb = node(b).grad;
            const int n = go.shape[0], ca = ga.shape[1], cb = gb.shape[1];
            const std::int64_t plane = static_cast<std::int64_t>(go.shape[2]) * go.shape[3];
            for (int in = 0; in < n; ++in) {
                const T* src = &go.at4(in, 0, 0, 0);
                T* pa = &ga.at4(in, 0, 0, 0);
                for (std::int64_t i = 0; i < plane * ca; ++i) pa[i] += src[i];
                const T* srcb = src + plane * ca;
                T* pb = &gb.at4(in, 0, 0, 0);
                for (std::int64_t i = 0; i < plane * cb; ++i) pb[i] += srcb[i];
            }
        });
        return out;
    }

    VarId global_avg_pool(VarId x) {
        VarId out = push(veinpipe::global_avg_pool(value(x)));
        ops_.push_back([this, x, out] {
            const Tensor<T>& go = node(out).grad;
            Tensor<T>& gi = node(x).grad;
            const int n = gi.shape[0], c = gi.shape[1];
            const std::int64_t plane = static_cast<std::int64_t>(gi.shape[2]) * gi.shape[3];
            for (int in = 0; in < n; ++in)
                for (int ic = 0; ic < c; ++ic) {
                    const T g = go.at2(in, ic) / static_cast<T>(plane);
                    T* p = &gi.at4(in, ic, 0, 0);
                    for (std::int64_t i = 0; i < plane; ++i) p[i] += g;
                }
        });
        return out;
    }

    /// Mean binary cross entropy on pre-sigmoid scores against {0,1} targets,
    /// with the sigmoid output clamped to [1e-7, 1 - 1e-7].
    VarId bce_with_logits(VarId logits, Tensor<T> targets) {
        const Tensor<T>& z = value(logits);
        require(z.shape == targets.shape,
                "bce shape mismatch: logits " + shape_to_string(z.shape) + " vs targets " +
                    shape_to_string(targets.shape));
        const T lo = T(1e-7), hi = T(1) - T(1e-7);
        const std::int64_t count = z.numel();
        T acc = T(0);
        for (std::int64_t i = 0; i < count; ++i) {
            const T y = targets[i];
            const T f = std::clamp(sigmoid_scalar(z[i]), lo, hi);
            acc -= y * std::log(f) + (T(1) - y) * std::log(T(1) - f);
        }
        VarId out = push(Tensor<T>::scalar(acc / static_cast<T>(count)));
        ops_.push_back([this, logits, out, t = std::move(targets), lo, hi, count] {
            const T go = node(out).grad[0];
            const Tensor<T>& z = value(logits);
            Tensor<T>& gi = node(logits).grad;
            for (std::int64_t i = 0; i < count; ++i) {
                const T f = sigmoid_scalar(z[i]);
                // clamped region contributes a constant, so zero slope there
                if (f <= lo || f >= hi) continue;
                gi[i] += go * (f - t[i]) / static_cast<T>(count);
            }
        });
        return out;
    }

    /// Mean squared error against a fixed target.
    VarId mse_loss(VarId pred, Tensor<T> target) {
        const Tensor<T>& p = value(pred);
        require(p.shape == target.shape,
                "mse shape mismatch: pred " + shape_to_string(p.shape) + " vs target " +
                    shape_to_string(target.shape));
        const std::int64_t count = p.numel();
        T acc = T(0);
        for (std::int64_t i = 0; i < count; ++i) {
            const T d = p[i] - target[i];
            acc += d * d;
        }
        VarId out = push(Tensor<T>::scalar(acc / static_cast<T>(count)));
        ops_.push_back([this, pred, out, t = std::move(target), count] {
            const T go = node(out).grad[0];
            const Tensor<T>& p = value(pred);
            Tensor<T>& gi = node(pred).grad;
            for (std::int64_t i = 0; i < count; ++i)
                gi[i] += go * T(2) * (p[i] - t[i]) / static_cast<T>(count);
        });
        return out;
    }

    VarId add(VarId a, VarId b) {
        const Tensor<T>& ta = value(a);
        const Tensor<T>& tb = value(b);
        require(ta.shape == tb.shape, "add shape mismatch: " + shape_to_string(ta.shape) + " vs " +
                                          shape_to_string(tb.shape));
        Tensor<T> out = ta;
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
        VarId id = push(std::move(out));
        ops_.push_back([this, a, b, id] {
            const Tensor<T>& go = node(id).grad;
            Tensor<T>& ga = node(a).grad;
            Tensor<T>& gb = node(b).grad;
            for (std::int64_t i = 0; i < go.numel(); ++i) {
                ga[i] += go[i];
                gb[i] += go[i];
            }
        });
        return id;
    }

    /// Sum of all elements, as a scalar node.
    VarId sum(VarId x) {
        const Tensor<T>& v = value(x);
        T acc = T(0);
        for (std::int64_t i = 0; i < v.numel(); ++i) acc += v[i];
        VarId out = push(Tensor<T>::scalar(acc));
        ops_.push_back([this, x, out] {
            const T go = node(out).grad[0];
            Tensor<T>& gi = node(x).grad;
            for (std::int64_t i = 0; i < gi.numel(); ++i) gi[i] += go;
        });
        return out;
    }

    VarId mul(VarId a, VarId b) {
        const Tensor<T>& ta = value(a);
        const Tensor<T>& tb = value(b);
        require(ta.shape == tb.shape, "mul shape mismatch");
        Tensor<T> out = ta;
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
        VarId id = push(std::move(out));
        ops_.push_back([this, a, b, id] {
            const Tensor<T>& go = node(id).grad;
            const Tensor<T>& ta = value(a);
            const Tensor<T>& tb = value(b);
            Tensor<T>& ga = node(a).grad;
            Tensor<T>& gb = node(b).grad;
            for (std::int64_t i = 0; i < go.numel(); ++i) {
                ga[i] += go[i] * tb[i];
                gb[i] += go[i] * ta[i];
            }
        });
        return id;
    }

    /// Run the adjoint sweep from a scalar loss. Returns one gradient per
    /// registered parameter; parameters that never fed the loss get zeros.
    /// Repeated calls on the same tape recompute from scratch and agree.
    std::map<std::string, Tensor<T>> backward(VarId loss) {
        require(loss >= 0 && loss < static_cast<VarId>(nodes_.size()),
                "backward: loss was not produced under this tape");
        require(value(loss).numel() == 1, "backward requires a scalar loss, got shape " +
                                              shape_to_string(value(loss).shape));
        for (auto& n : nodes_) std::fill(n.grad.data.begin(), n.grad.data.end(), T(0));
        node(loss).grad[0] = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        std::map<std::string, Tensor<T>> grads;
        for (const auto& name : param_order_) grads.emplace(name, grad(params_.at(name)));
        return grads;
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
    };

    Node& node(VarId id) { return nodes_[static_cast<std::size_t>(id)]; }

    VarId push(Tensor<T> v) {
        Node n;
        n.grad = Tensor<T>::zeros(v.shape);
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return static_cast<VarId>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    std::vector<std::function<void()>> ops_;
    std::unordered_map<std::string, VarId> params_;
    std::vector<std::string> param_order_;
};

}  // namespace veinpipe
