#include <doctest.h>

#include <filesystem>

#include <veinpipe/quantize.hpp>

#include "test_util.hpp"

using namespace veinpipe;
namespace fs = std::filesystem;

namespace {

UNetConfig small_config() {
    UNetConfig cfg;
    cfg.input_size = 16;
    cfg.depth = 2;
    cfg.base_channels = 8;
    cfg.regression_hidden = 8;
    return cfg;
}

std::vector<Tensor<float>> calib_batches(int n, int size, std::uint64_t seed) {
    std::vector<Tensor<float>> out;
    for (int i = 0; i < n; ++i)
        out.push_back(testutil::random_tensor<float>({1, 1, size, size}, seed + i, 0.0, 1.0));
    return out;
}

}  // namespace

TEST_CASE("hand-quantization arithmetic") {
    // x = 1.26 with scale 0.5, zp 0 -> q = 3, dequant 1.5, |err| <= scale/2
    const QuantParams p{0.5, 0};
    const auto q = quantize_value(1.26, p);
    CHECK(q == 3);
    CHECK(dequantize_value(q, p) == doctest::Approx(1.5));
    CHECK(std::abs(dequantize_value(q, p) - 1.26) <= 0.25);
}

TEST_CASE("symmetric quantization of t and -t negates payloads at the same scale") {
    auto t = testutil::random_tensor<float>({40}, 1, -2.0, 2.0);
    auto neg = t;
    for (auto& v : neg.data) v = -v;
    const auto qa = quantize_tensor(t, QuantMode::Int8Symmetric);
    const auto qb = quantize_tensor(neg, QuantMode::Int8Symmetric);
    CHECK(qa.params.scale == qb.params.scale);
    CHECK(qa.params.zero_point == 0);
    for (std::size_t i = 0; i < qa.i8.size(); ++i) CHECK(qa.i8[i] == -qb.i8[i]);
}

TEST_CASE("all-zero tensors quantize degenerately and roundtrip exactly") {
    const auto z = Tensor<float>::zeros({8});
    for (auto mode : {QuantMode::Int8Symmetric, QuantMode::Int8Affine}) {
        const auto q = quantize_tensor(z, mode);
        CHECK(q.params.scale == 1.0);
        const auto back = q.dequantize();
        for (auto v : back.data) CHECK(v == 0.0f);
    }
}

TEST_CASE("roundtrip error is bounded by scale/2 for in-range values, all modes") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const double lo = uniform_range(rng, -3.0, 0.0);
        const double hi = lo + uniform_range(rng, 0.1, 5.0);
        auto t = testutil::random_tensor<float>({64}, 100 + trial, lo, hi);
        for (auto mode : {QuantMode::Int8Symmetric, QuantMode::Int8Affine}) {
            const auto q = quantize_tensor(t, mode);
            const auto back = q.dequantize();
            for (std::int64_t i = 0; i < t.numel(); ++i) {
                // symmetric covers [-max|x|, max|x|], affine [min, max]
                CHECK(std::abs(back[i] - t[i]) <= q.params.scale / 2 + 1e-9);
            }
        }
        const auto h = quantize_tensor(t, QuantMode::Float16);
        const auto back = h.dequantize();
        for (std::int64_t i = 0; i < t.numel(); ++i)
            CHECK(std::abs(back[i] - t[i]) <=
                  std::max(std::abs(static_cast<double>(t[i])) * 0x1.0p-11, 0x1.0p-24));
    }
}

TEST_CASE("float16 conversion round-trips exact half values and rounds to nearest even") {
    CHECK(half_to_float(float_to_half(1.0f)) == 1.0f);
    CHECK(half_to_float(float_to_half(-0.5f)) == -0.5f);
    CHECK(half_to_float(float_to_half(65504.0f)) == 65504.0f);  // max finite half
    CHECK(float_to_half(0.0f) == 0);
    // 1 + 2^-11 is exactly halfway between 1.0 and the next half; RNE keeps 1.0
    CHECK(half_to_float(float_to_half(1.0f + 0x1.0p-11f)) == 1.0f);
    // 1 + 3*2^-11 is halfway to the odd side; RNE rounds up to 1 + 2^-10
    CHECK(half_to_float(float_to_half(1.0f + 3 * 0x1.0p-11f)) == 1.0f + 0x1.0p-9f);
    CHECK(std::isinf(half_to_float(float_to_half(1e30f))));
}

TEST_CASE("quantization preserves ordering within a tensor") {
    auto t = testutil::random_tensor<float>({100}, 9, -4.0, 4.0);
    for (auto mode : {QuantMode::Int8Symmetric, QuantMode::Int8Affine}) {
        const auto q = quantize_tensor(t, mode);
        for (std::int64_t i = 0; i < t.numel(); ++i)
            for (std::int64_t j = 0; j < t.numel(); ++j)
                if (t[i] < t[j]) CHECK(q.i8[static_cast<std::size_t>(i)] <= q.i8[static_cast<std::size_t>(j)]);
    }
}

TEST_CASE("calibration accumulates extrema independent of batch order") {
    const auto cfg = small_config();
    const auto w = build<float>(cfg, 4);
    const auto batches = calib_batches(3, 16, 500);

    const auto one = calibrate(w, {batches[0]});
    CHECK(one.count("input") == 1);
    CHECK(one.count("enc0.conv1") == 1);
    CHECK(one.count("fossa.fc2.pre") == 1);

    const auto ab = calibrate(w, {batches[0], batches[1]});
    for (const auto& [name, mm] : one) {
        CHECK(ab.at(name).min <= mm.min + 1e-12);
        CHECK(ab.at(name).max >= mm.max - 1e-12);
    }
    const auto ba = calibrate(w, {batches[1], batches[0]});
    for (const auto& [name, mm] : ab) {
        CHECK(ba.at(name).min == mm.min);
        CHECK(ba.at(name).max == mm.max);
    }

    CHECK_THROWS_WITH_AS(calibrate(w, {}), doctest::Contains("non-empty"), std::invalid_argument);
}

TEST_CASE("integer schemes demand calibration data") {
    const auto w = build<float>(small_config(), 5);
    CHECK_THROWS_WITH_AS(apply_scheme(w, Scheme::FullInteger, nullptr),
                         doctest::Contains("requires calibration data"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(apply_scheme(w, Scheme::FloatFallback, nullptr),
                         doctest::Contains("requires calibration data"), std::invalid_argument);
    // dynamic-range needs none
    CHECK_NOTHROW(apply_scheme(w, Scheme::DynamicRange, nullptr));
}

TEST_CASE("serialized size accounting across schemes") {
    const auto w = build<float>(small_config(), 6);
    const auto calib = calibrate(w, calib_batches(2, 16, 900));
    const auto f32 = serialize_weights(w).size();
    const auto dyn = serialize_quantized(apply_scheme(w, Scheme::DynamicRange)).size();
    const auto f16 = serialize_quantized(apply_scheme(w, Scheme::Float16)).size();
    const auto full = serialize_quantized(apply_scheme(w, Scheme::FullInteger, &calib)).size();
    const auto fb = serialize_quantized(apply_scheme(w, Scheme::FloatFallback, &calib)).size();

    CHECK(dyn <= 0.30 * static_cast<double>(f32));
    CHECK(full <= 0.30 * static_cast<double>(f32));
    CHECK(fb <= 0.30 * static_cast<double>(f32));
    CHECK(f16 <= 0.52 * static_cast<double>(f32));
    CHECK(f16 >= 0.48 * static_cast<double>(f32));
    CHECK(dyn < f16);
    CHECK(f16 < f32);
}

TEST_CASE("dynamic-range outputs stay within 0.1 max-abs of float") {
    const auto cfg = small_config();
    const auto w = build<float>(cfg, 8);
    const auto qm = apply_scheme(w, Scheme::DynamicRange);
    auto batch = testutil::random_tensor<float>({2, 1, 16, 16}, 10, 0.0, 1.0);
    const auto f = forward(w, batch);
    const auto q = quantized_forward(qm, batch);
    REQUIRE(q.logits.shape == f.logits.shape);
    REQUIRE(q.fossa.shape == f.fossa.shape);
    for (std::int64_t i = 0; i < f.logits.numel(); ++i)
        CHECK(std::abs(q.logits[i] - f.logits[i]) <= 0.1);
    for (std::int64_t i = 0; i < f.fossa.numel(); ++i)
        CHECK(std::abs(q.fossa[i] - f.fossa[i]) <= 0.1);
}

TEST_CASE("float16 outputs stay within 1e-2 max-abs of float32") {
    const auto cfg = small_config();
    const auto w = build<float>(cfg, 12);
    const auto qm = apply_scheme(w, Scheme::Float16);
    auto batch = testutil::random_tensor<float>({2, 1, 16, 16}, 13, 0.0, 1.0);
    const auto f = forward(w, batch);
    const auto q = quantized_forward(qm, batch);
    for (std::int64_t i = 0; i < f.logits.numel(); ++i)
        CHECK(std::abs(q.logits[i] - f.logits[i]) <= 1e-2);
    for (std::int64_t i = 0; i < f.fossa.numel(); ++i)
        CHECK(std::abs(q.fossa[i] - f.fossa[i]) <= 1e-2);
}

TEST_CASE("integer forward output shapes match the float contract") {
    const auto cfg = small_config();
    const auto w = build<float>(cfg, 14);
    const auto calib = calibrate(w, calib_batches(2, 16, 700));
    for (auto scheme : {Scheme::FullInteger, Scheme::FloatFallback}) {
        const auto qm = apply_scheme(w, scheme, &calib);
        auto batch = testutil::random_tensor<float>({2, 1, 16, 16}, 15, 0.0, 1.0);
        const auto out = quantized_forward(qm, batch);
        CHECK(out.logits.shape == std::vector<int>{2, 1, 16, 16});
        CHECK(out.fossa.shape == std::vector<int>{2, 3});
        for (std::int64_t i = 0; i < out.fossa.numel(); ++i) {
            CHECK(out.fossa[i] >= 0.0f);
            CHECK(out.fossa[i] <= 1.0f);
        }
    }
}

TEST_CASE("full-integer conv and dense match an independent scalar oracle bit-exactly") {
    Rng rng(21);
    // seeded 2-layer micro-model: conv3x3(1->2)+relu then conv3x3(2->1)
    auto w1 = testutil::random_tensor<float>({2, 1, 3, 3}, 22, -0.8, 0.8);
    auto b1 = testutil::random_tensor<float>({2}, 23, -0.2, 0.2);
    auto w2 = testutil::random_tensor<float>({1, 2, 3, 3}, 24, -0.6, 0.6);
    auto b2 = testutil::random_tensor<float>({1}, 25, -0.1, 0.1);
    auto x = testutil::random_tensor<float>({1, 1, 8, 8}, 26, 0.0, 1.0);

    QTensor qw1 = quantize_tensor(w1, QuantMode::Int8Symmetric);
    QTensor qb1 = quantize_tensor(b1, QuantMode::Int8Symmetric);
    QTensor qw2 = quantize_tensor(w2, QuantMode::Int8Symmetric);
    QTensor qb2 = quantize_tensor(b2, QuantMode::Int8Symmetric);

    const QuantParams in_qp = affine_params(0.0, 1.0);
    const QuantParams mid_qp = affine_params(0.0, 2.5);
    const QuantParams out_qp = affine_params(-2.0, 2.0);

    const QuantAct qx = quantize_activation(x, in_qp);
    const QuantAct mid = int_conv2d(qx, qw1, &qb1, 1, Padding::Same, mid_qp, true);
    const QuantAct got = int_conv2d(mid, qw2, &qb2, 1, Padding::Same, out_qp, false);

    // independent scalar re-implementation, straight from the arithmetic spec
    auto oracle_conv = [](const QuantAct& in, const QTensor& kern, const QTensor& bias,
                          const QuantParams& oq, bool relu) {
        const int ci = in.shape[1], h = in.shape[2], wd = in.shape[3];
        const int co = kern.shape[0];
        const double acc_scale = in.qp.scale * kern.params.scale;
        QuantAct out;
        out.shape = {1, co, h, wd};
        out.qp = oq;
        out.data.assign(static_cast<std::size_t>(co) * h * wd, 0);
        for (int oc = 0; oc < co; ++oc) {
            const std::int32_t bq = static_cast<std::int32_t>(std::llround(
                bias.params.scale * bias.i8[static_cast<std::size_t>(oc)] / acc_scale));
            for (int oy = 0; oy < h; ++oy)
                for (int ox = 0; ox < wd; ++ox) {
                    std::int32_t acc = bq;
                    for (int ic = 0; ic < ci; ++ic)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int iy = oy + ky - 1, ix = ox + kx - 1;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                                const int qv = in.data[(static_cast<std::size_t>(ic) * h + iy) * wd + ix];
                                const int kv =
                                    kern.i8[((static_cast<std::size_t>(oc) * ci + ic) * 3 + ky) * 3 + kx];
                                acc += (qv - in.qp.zero_point) * kv;
                            }
                    std::int64_t q =
                        std::llround(acc_scale / oq.scale * static_cast<double>(acc)) +
                        oq.zero_point;
                    q = std::clamp<std::int64_t>(q, -128, 127);
                    if (relu && q < oq.zero_point) q = oq.zero_point;
                    out.data[(static_cast<std::size_t>(oc) * h + oy) * wd + ox] =
                        static_cast<std::int8_t>(q);
                }
        }
        return out;
    };

    const QuantAct want_mid = oracle_conv(qx, qw1, qb1, mid_qp, true);
    REQUIRE(mid.data.size() == want_mid.data.size());
    CHECK(mid.data == want_mid.data);
    const QuantAct want_out = oracle_conv(want_mid, qw2, qb2, out_qp, false);
    CHECK(got.data == want_out.data);

    // dense against a scalar oracle, same arithmetic
    auto xd = testutil::random_tensor<float>({1, 6}, 30, -1.0, 1.0);
    auto wd = testutil::random_tensor<float>({6, 4}, 31, -0.9, 0.9);
    auto bd = testutil::random_tensor<float>({4}, 32, -0.3, 0.3);
    const QTensor qwd = quantize_tensor(wd, QuantMode::Int8Symmetric);
    const QTensor qbd = quantize_tensor(bd, QuantMode::Int8Symmetric);
    const QuantParams dq_in = affine_params(-1.0, 1.0);
    const QuantParams dq_out = affine_params(-3.0, 3.0);
    const QuantAct qxd = quantize_activation(xd, dq_in);
    const QuantAct dg = int_dense(qxd, qwd, &qbd, dq_out, false);
    const double acc_scale = dq_in.scale * qwd.params.scale;
    for (int j = 0; j < 4; ++j) {
        std::int32_t acc = static_cast<std::int32_t>(
            std::llround(qbd.params.scale * qbd.i8[static_cast<std::size_t>(j)] / acc_scale));
        for (int k = 0; k < 6; ++k)
            acc += (static_cast<int>(qxd.data[static_cast<std::size_t>(k)]) - dq_in.zero_point) *
                   qwd.i8[static_cast<std::size_t>(k) * 4 + j];
        std::int64_t q = std::llround(acc_scale / dq_out.scale * static_cast<double>(acc)) +
                         dq_out.zero_point;
        q = std::clamp<std::int64_t>(q, -128, 127);
        CHECK(dg.data[static_cast<std::size_t>(j)] == static_cast<std::int8_t>(q));
    }
}

TEST_CASE("quantized model files roundtrip with scheme byte and calibration table") {
    const auto dir = fs::temp_directory_path() / "veinpipe_quant_tests";
    fs::create_directories(dir);
    const auto cfg = small_config();
    const auto w = build<float>(cfg, 40);
    const auto calib = calibrate(w, calib_batches(2, 16, 41));

    for (auto scheme :
         {Scheme::DynamicRange, Scheme::Float16, Scheme::FullInteger, Scheme::FloatFallback}) {
        const auto qm = apply_scheme(w, scheme, &calib);
        const auto path = dir / (std::string("model_") + scheme_name(scheme) + ".veinq");
        save_quantized(qm, path);
        const auto back = load_quantized(path);
        CHECK(back.scheme == scheme);
        REQUIRE(back.tensors.size() == qm.tensors.size());
        for (std::size_t i = 0; i < qm.tensors.size(); ++i) {
            CHECK(back.tensors[i].name == qm.tensors[i].name);
            CHECK(back.tensors[i].i8 == qm.tensors[i].i8);
            CHECK(back.tensors[i].f16 == qm.tensors[i].f16);
            CHECK(back.tensors[i].params.scale == qm.tensors[i].params.scale);
        }
        CHECK(back.calib.size() == qm.calib.size());

        // serialized scheme byte sits right after magic+version
        const auto bytes = serialize_quantized(qm);
        CHECK(static_cast<Scheme>(bytes[9]) == scheme);

        // the two forwards agree after a roundtrip
        auto batch = testutil::random_tensor<float>({1, 1, 16, 16}, 42, 0.0, 1.0);
        const auto a = quantized_forward(qm, batch);
        const auto b = quantized_forward(back, batch);
        CHECK(a.logits.data == b.logits.data);
        CHECK(a.fossa.data == b.fossa.data);
    }

    CHECK_THROWS_WITH_AS(load_quantized(dir / "model_dynamic-range.veinq" / "nope"),
                         doctest::Contains("cannot open"), std::runtime_error);
    const auto wpath = dir / "plain.veinw";
    save_weights(w, wpath);
    CHECK_THROWS_WITH_AS(load_quantized(wpath), doctest::Contains("not a quantized model"),
                         std::runtime_error);
}

TEST_CASE("float16 reproduces every weight tensor at least as precisely as int8") {
    // the scheme fidelity ordering (f16 <= dynamic-range) reduced to its
    // deterministic core: per-tensor roundtrip error
    const auto w = build<float>(small_config(), 77);
    for (const auto& [name, t] : w.tensors) {
        if (t.numel() == 0) continue;
        const auto qi = quantize_tensor(t, QuantMode::Int8Symmetric);
        const auto qh = quantize_tensor(t, QuantMode::Float16);
        const auto bi = qi.dequantize();
        const auto bh = qh.dequantize();
        double worst_i8 = 0.0, worst_f16 = 0.0;
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            worst_i8 = std::max(worst_i8, std::abs(static_cast<double>(bi[i] - t[i])));
            worst_f16 = std::max(worst_f16, std::abs(static_cast<double>(bh[i] - t[i])));
        }
        CAPTURE(name);
        CHECK(worst_f16 <= worst_i8 + 1e-12);
    }
}

TEST_CASE("scheme names parse and print consistently") {
    for (auto s : {Scheme::Float32, Scheme::DynamicRange, Scheme::Float16, Scheme::FullInteger,
                   Scheme::FloatFallback})
        CHECK(parse_scheme(scheme_name(s)) == s);
    CHECK_FALSE(parse_scheme("int4").has_value());
}
