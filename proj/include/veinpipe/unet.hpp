#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "veinpipe/binio.hpp"
#include "veinpipe/tensor.hpp"

namespace veinpipe {

inline constexpr char kWeightsMagic[] = "VEINW";
inline constexpr std::uint32_t kWeightsFormatVersion = 1;

enum class DType : std::uint8_t { F32 = 1, F64 = 2, F16 = 3, I8 = 4 };

/// Architecture hyperparameters. Channel count at encoder level d is
/// base_channels * 2^d; the bottleneck sits at level `depth`.
struct UNetConfig {
    int input_size = 64;
    int depth = 3;
    int base_channels = 8;
    int regression_hidden = 64;
    int regression_dim = 3;

    void validate() const {
        require(input_size > 0 && input_size % 2 == 0, "input_size must be a positive even int");
        require(depth >= 2, "depth must be >= 2");
        require(base_channels >= 1, "base_channels must be >= 1");
        require(regression_hidden >= 1, "regression_hidden must be >= 1");
        require(regression_dim == 3, "regression_dim is fixed to 3 (cx, cy, angle)");
        require(input_size % (1 << depth) == 0,
                "input_size " + std::to_string(input_size) + " must be divisible by 2^depth = " +
                    std::to_string(1 << depth));
    }

    int channels_at(int level) const { return base_channels << level; }
    int bottleneck_channels() const { return channels_at(depth); }

    static UNetConfig desk_scale() { return UNetConfig{64, 3, 8, 64, 3}; }
    static UNetConfig paper_scale() { return UNetConfig{512, 4, 8, 64, 3}; }
};

struct WeightSpec {
    std::string name;
    std::vector<int> shape;
    int fan_in = 0;  // 0 marks a bias
};

/// The named parameter list, in graph order. Every builder, runner, and
/// serializer agrees on exactly this enumeration.
inline std::vector<WeightSpec> weight_specs(const UNetConfig& cfg) {
    cfg.validate();
    std::vector<WeightSpec> specs;
    auto conv = [&specs](const std::string& name, int cout, int cin, int k) {
        specs.push_back({name + ".w", {cout, cin, k, k}, cin * k * k});
        specs.push_back({name + ".b", {cout}, 0});
    };
    int prev = 1;
    for (int d = 0; d < cfg.depth; ++d) {
        const int c = cfg.channels_at(d);
        conv("enc" + std::to_string(d) + ".conv1", c, prev, 3);
        conv("enc" + std::to_string(d) + ".conv2", c, c, 3);
        prev = c;
    }
    const int cb = cfg.bottleneck_channels();
    conv("bottleneck.conv1", cb, prev, 3);
    conv("bottleneck.conv2", cb, cb, 3);
    for (int d = cfg.depth - 1; d >= 0; --d) {
        const int c = cfg.channels_at(d);
        specs.push_back({"dec" + std::to_string(d) + ".up.w", {c, 2 * c, 2, 2}, 2 * c * 2 * 2});
        conv("dec" + std::to_string(d) + ".conv1", c, 2 * c, 3);
        conv("dec" + std::to_string(d) + ".conv2", c, c, 3);
    }
    conv("head.logits", 1, cfg.base_channels, 1);
    specs.push_back({"fossa.fc1.w", {cb, cfg.regression_hidden}, cb});
    specs.push_back({"fossa.fc1.b", {cfg.regression_hidden}, 0});
    specs.push_back({"fossa.fc2.w", {cfg.regression_hidden, cfg.regression_dim}, cfg.regression_hidden});
    specs.push_back({"fossa.fc2.b", {cfg.regression_dim}, 0});
    return specs;
}

inline std::int64_t parameter_count(const UNetConfig& cfg) {
    std::int64_t n = 0;
    for (const auto& s : weight_specs(cfg)) n += Tensor<float>::numel_of(s.shape);
    return n;
}

template <typename T>
struct ModelWeights {
    UNetConfig config;
    int format_version = static_cast<int>(kWeightsFormatVersion);
    std::vector<std::pair<std::string, Tensor<T>>> tensors;

    void add(const std::string& name, Tensor<T> t) {
        require(index_.emplace(name, tensors.size()).second, "duplicate weight name: " + name);
        tensors.emplace_back(name, std::move(t));
    }

    const Tensor<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown weight name: " + name);
        return tensors[it->second].second;
    }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown weight name: " + name);
        return tensors[it->second].second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    template <typename U>
    ModelWeights<U> cast() const {
        ModelWeights<U> out;
        out.config = config;
        out.format_version = format_version;
        for (const auto& [name, t] : tensors) out.add(name, t.template cast<U>());
        return out;
    }

private:
    std::unordered_map<std::string, std::size_t> index_;
};

/// He-normal kernels, zero biases, drawn from one seeded stream in graph order.
template <typename T = float>
ModelWeights<T> build(const UNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelWeights<T> w;
    w.config = cfg;
    NormalSampler normal(seed);
    for (const auto& spec : weight_specs(cfg)) {
        Tensor<T> t = Tensor<T>::zeros(spec.shape);
        if (spec.fan_in > 0) {
            const double stddev = std::sqrt(2.0 / static_cast<double>(spec.fan_in));
            for (auto& v : t.data) v = static_cast<T>(normal.next() * stddev);
        }
        w.add(spec.name, std::move(t));
    }
    return w;
}

/// One definition of the network topology, shared by every execution mode.
/// A context supplies the concrete activation type and the per-layer kernels;
/// names passed here identify both the weight tensors ("<name>.w"/".b") and
/// the calibration entry for the op's output.
template <typename Ctx>
auto run_unet(Ctx& ctx, const UNetConfig& cfg) {
    using Act = typename Ctx::Act;
    Act x = ctx.input();
    std::vector<Act> skips;
    skips.reserve(static_cast<std::size_t>(cfg.depth));
    for (int d = 0; d < cfg.depth; ++d) {
        const std::string enc = "enc" + std::to_string(d);
        x = ctx.conv_relu(enc + ".conv1", x);
        x = ctx.conv_relu(enc + ".conv2", x);
        skips.push_back(x);
        x = ctx.maxpool("pool" + std::to_string(d), x);
    }
    x = ctx.conv_relu("bottleneck.conv1", x);
    x = ctx.conv_relu("bottleneck.conv2", x);
    Act bottleneck = x;
    for (int d = cfg.depth - 1; d >= 0; --d) {
        const std::string dec = "dec" + std::to_string(d);
        x = ctx.upconv(dec + ".up", x);
        x = ctx.concat(dec + ".cat", skips[static_cast<std::size_t>(d)], x);
        x = ctx.conv_relu(dec + ".conv1", x);
        x = ctx.conv_relu(dec + ".conv2", x);
    }
    Act logits = ctx.conv_linear("head.logits", x);
    Act pooled = ctx.global_pool("gap", bottleneck);
    Act hidden = ctx.dense_relu("fossa.fc1", pooled);
    Act fossa = ctx.dense_sigmoid("fossa.fc2", hidden);
    struct Outputs {
        Act logits, fossa;
    };
    return Outputs{std::move(logits), std::move(fossa)};
}

template <typename T>
struct FloatCtx {
    using Act = Tensor<T>;
    const ModelWeights<T>& weights;
    Tensor<T> batch;

    Act input() { return batch; }
    Act conv_relu(const std::string& n, const Act& x) {
        return activation(conv2d(x, weights.get(n + ".w"), weights.get(n + ".b"), 1, Padding::Same),
                          Activation::Relu);
    }
    Act conv_linear(const std::string& n, const Act& x) {
        return conv2d(x, weights.get(n + ".w"), weights.get(n + ".b"), 1, Padding::Same);
    }
    Act maxpool(const std::string&, const Act& x) { return maxpool2d(x).output; }
    Act upconv(const std::string& n, const Act& x) {
        return transposed_conv2d(x, weights.get(n + ".w"), 2);
    }
    Act concat(const std::string&, const Act& a, const Act& b) { return concat_channels(a, b); }
    Act global_pool(const std::string&, const Act& x) { return global_avg_pool(x); }
    Act dense_relu(const std::string& n, const Act& x) {
        return activation(dense(x, weights.get(n + ".w"), weights.get(n + ".b")), Activation::Relu);
    }
    Act dense_sigmoid(const std::string& n, const Act& x) {
        return activation(dense(x, weights.get(n + ".w"), weights.get(n + ".b")),
                          Activation::Sigmoid);
    }
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;  // pre-sigmoid scores, N x 1 x S x S
    Tensor<T> fossa;   // sigmoid-bounded (cx/S, cy/S, angle/180), N x 3
};

template <typename T>
ForwardResult<T> forward(const ModelWeights<T>& weights, const Tensor<T>& batch) {
    const int s = weights.config.input_size;
    require(batch.rank() == 4 && batch.shape[1] == 1 && batch.shape[2] == s && batch.shape[3] == s,
            "forward expects batch N x 1 x " + std::to_string(s) + " x " + std::to_string(s) +
                ", got " + shape_to_string(batch.shape));
    FloatCtx<T> ctx{weights, batch};
    auto out = run_unet(ctx, weights.config);
    return {std::move(out.logits), std::move(out.fossa)};
}

namespace detail {

template <typename T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>)
        return DType::F32;
    else
        return DType::F64;
}

inline void write_config(binio::Writer& w, const UNetConfig& cfg) {
    w.u32(static_cast<std::uint32_t>(cfg.input_size));
    w.u32(static_cast<std::uint32_t>(cfg.depth));
    w.u32(static_cast<std::uint32_t>(cfg.base_channels));
    w.u32(static_cast<std::uint32_t>(cfg.regression_hidden));
    w.u32(static_cast<std::uint32_t>(cfg.regression_dim));
}

inline UNetConfig read_config(binio::Reader& r) {
    UNetConfig cfg;
    cfg.input_size = static_cast<int>(r.u32("config.input_size"));
    cfg.depth = static_cast<int>(r.u32("config.depth"));
    cfg.base_channels = static_cast<int>(r.u32("config.base_channels"));
    cfg.regression_hidden = static_cast<int>(r.u32("config.regression_hidden"));
    cfg.regression_dim = static_cast<int>(r.u32("config.regression_dim"));
    cfg.validate();
    return cfg;
}

template <typename T>
void write_tensor_payload(binio::Writer& w, const Tensor<T>& t) {
    for (T v : t.data) {
        if constexpr (std::is_same_v<T, float>)
            w.f32(v);
        else
            w.f64(v);
    }
}

inline void write_shape(binio::Writer& w, const std::vector<int>& shape) {
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (int d : shape) w.u32(static_cast<std::uint32_t>(d));
}

inline std::vector<int> read_shape(binio::Reader& r, const std::string& name) {
    const int rank = r.u8("rank of tensor '" + name + "'");
    std::vector<int> shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) d = static_cast<int>(r.u32("shape of tensor '" + name + "'"));
    return shape;
}

}  // namespace detail

template <typename T>
std::string serialize_weights(const ModelWeights<T>& weights) {
    binio::Writer w;
    w.bytes(kWeightsMagic, 5);
    w.u32(kWeightsFormatVersion);
    detail::write_config(w, weights.config);
    w.u32(static_cast<std::uint32_t>(weights.tensors.size()));
    for (const auto& [name, t] : weights.tensors) {
        w.str(name);
        w.u8(static_cast<std::uint8_t>(detail::dtype_of<T>()));
        detail::write_shape(w, t.shape);
        detail::write_tensor_payload(w, t);
    }
    return w.buffer();
}

template <typename T>
void save_weights(const ModelWeights<T>& weights, const std::filesystem::path& path) {
    binio::atomic_write_file(path, serialize_weights(weights));
}

template <typename T = float>
ModelWeights<T> load_weights(const std::filesystem::path& path) {
    binio::Reader r(binio::read_file(path), path.string());
    char magic[5];
    r.bytes(magic, 5, "magic");
    if (std::memcmp(magic, kWeightsMagic, 5) != 0)
        throw std::runtime_error("not a weights file: " + path.string());
    const std::uint32_t version = r.u32("version");
    if (version != kWeightsFormatVersion)
        throw std::runtime_error("unsupported weights file version " + std::to_string(version) +
                                 " in " + path.string());
    ModelWeights<T> weights;
    weights.config = detail::read_config(r);
    weights.format_version = static_cast<int>(version);
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str("tensor name");
        const auto dtype = static_cast<DType>(r.u8("dtype of tensor '" + name + "'"));
        if (dtype != detail::dtype_of<T>())
            throw std::runtime_error("tensor '" + name + "' has unexpected dtype tag " +
                                     std::to_string(static_cast<int>(dtype)) + " in " +
                                     path.string());
        const auto shape = detail::read_shape(r, name);
        Tensor<T> t = Tensor<T>::zeros(shape);
        for (auto& v : t.data) {
            if constexpr (std::is_same_v<T, float>)
                v = r.f32("payload of tensor '" + name + "'");
            else
                v = r.f64("payload of tensor '" + name + "'");
        }
        weights.add(name, std::move(t));
    }
    // the file must carry exactly the tensors the config implies
    const auto specs = weight_specs(weights.config);
    require(specs.size() == weights.tensors.size(),
            "weights file tensor count does not match config: " + path.string());
    for (const auto& spec : specs) {
        require(weights.has(spec.name), "weights file missing tensor '" + spec.name + "'");
        require(weights.get(spec.name).shape == spec.shape,
                "tensor '" + spec.name + "' has shape " +
                    shape_to_string(weights.get(spec.name).shape) + ", config implies " +
                    shape_to_string(spec.shape));
    }
    return weights;
}

}  // namespace veinpipe
