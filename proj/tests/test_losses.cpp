#include <doctest.h>

#include <veinpipe/losses.hpp>

#include "test_util.hpp"

using namespace veinpipe;

namespace {

Tensor<double> random_binary(std::vector<int> shape, std::uint64_t seed) {
    auto t = Tensor<double>::zeros(std::move(shape));
    Rng rng(seed);
    for (auto& v : t.data) v = uniform_index(rng, 2) ? 1.0 : 0.0;
    return t;
}

// brute-force per-pixel oracle for BCE
double bce_oracle(const Tensor<double>& logits, const Tensor<double>& targets) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < logits.numel(); ++i) {
        double f = 1.0 / (1.0 + std::exp(-logits[i]));
        f = std::min(std::max(f, 1e-7), 1.0 - 1e-7);
        acc += -(targets[i] * std::log(f) + (1.0 - targets[i]) * std::log(1.0 - f));
    }
    return acc / static_cast<double>(logits.numel());
}

}  // namespace

TEST_CASE("bce anchors") {
    CHECK(bce(Tensor<double>::scalar(0.0), Tensor<double>::scalar(1.0)) ==
          doctest::Approx(0.6931471805599453));
    CHECK(bce(Tensor<double>::scalar(20.0), Tensor<double>::scalar(1.0)) < 1e-6);
    auto logits = testutil::random_tensor<double>({1, 1, 8, 8}, 5, -4.0, 4.0);
    auto targets = random_binary({1, 1, 8, 8}, 6);
    CHECK(std::abs(bce(logits, targets) - bce_oracle(logits, targets)) < 1e-10);
    CHECK_THROWS_AS(bce(logits, Tensor<double>::zeros({1, 1, 4, 4})), std::invalid_argument);
}

TEST_CASE("mse and mae hand cases") {
    Tensor<double> a({2}, {0, 2});
    Tensor<double> b({2}, {1, 1});
    CHECK(mse(a, b) == doctest::Approx(1.0));
    CHECK(mae(a, b) == doctest::Approx(1.0));
    Tensor<double> c({2}, {0, 3});
    Tensor<double> z({2}, {0, 0});
    CHECK(mse(c, z) == doctest::Approx(4.5));
    CHECK(mae(c, z) == doctest::Approx(1.5));
    CHECK(mse(a, a) == 0.0);
    CHECK(mae(a, a) == 0.0);
    CHECK_THROWS_AS(mse(a, Tensor<double>::zeros({3})), std::invalid_argument);
}

TEST_CASE("loss symmetry and non-negativity properties") {
    for (int trial = 0; trial < 20; ++trial) {
        auto a = testutil::random_tensor<double>({7}, 100 + trial);
        auto b = testutil::random_tensor<double>({7}, 200 + trial);
        CHECK(mse(a, b) == mse(b, a));
        CHECK(mae(a, b) == mae(b, a));
        CHECK(mse(a, b) >= 0.0);
        CHECK(mae(a, b) >= 0.0);
    }
}

TEST_CASE("multitask loss is exactly bce plus mse") {
    auto logits = testutil::random_tensor<double>({1, 1, 4, 4}, 10, -3.0, 3.0);
    auto mask = random_binary({1, 1, 4, 4}, 11);
    auto pred = testutil::random_tensor<double>({1, 3}, 12, 0.1, 0.9);
    auto target = testutil::random_tensor<double>({1, 3}, 13, 0.1, 0.9);
    const double combined = multitask_loss(logits, mask, pred, target);
    CHECK(combined == bce(logits, mask) + mse(pred, target));

    // component anchor: bce 0.3, mse 0.1 -> 0.4 by definition of the sum
    CHECK(0.3 + 0.1 == doctest::Approx(0.4));

    // perfect prediction
    Tensor<double> strong = mask;
    for (auto& v : strong.data) v = v > 0.5 ? 30.0 : -30.0;
    CHECK(multitask_loss(strong, mask, target, target) < 1e-6);
}

TEST_CASE("confusion counting oracle") {
    auto gt = Tensor<double>::zeros({1, 1, 4, 4});
    for (int i = 0; i < 5; ++i) gt[i] = 1.0;
    const auto c = confusion(gt, gt);
    CHECK(c.tp == 5);
    CHECK(c.tn == 11);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);

    auto ones = Tensor<double>::full({1, 1, 4, 4}, 1.0);
    auto zeros = Tensor<double>::zeros({1, 1, 4, 4});
    CHECK(confusion(ones, zeros).fp == 16);

    for (int trial = 0; trial < 10; ++trial) {
        auto p = random_binary({1, 1, 5, 5}, 300 + trial);
        auto g = random_binary({1, 1, 5, 5}, 400 + trial);
        CHECK(confusion(p, g).total() == 25);
    }

    auto bad = Tensor<double>::full({1, 1, 4, 4}, 0.5);
    CHECK_THROWS_AS(confusion(bad, zeros), std::invalid_argument);
}

TEST_CASE("metrics identity and anchor cases") {
    auto m = random_binary({1, 1, 8, 8}, 20);
    m[0] = 1.0;  // non-empty
    const auto r = metrics(confusion(m, m), m, m);
    CHECK(r.iou == 1.0);
    CHECK(r.dice == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.pixel_accuracy == 1.0);
    CHECK(std::isinf(r.psnr_db));

    // two 2x2 blocks overlapping in 2 pixels: union 6 -> IoU 1/3, Dice = F1 = 1/2
    auto a = Tensor<double>::zeros({1, 1, 4, 4});
    auto b = Tensor<double>::zeros({1, 1, 4, 4});
    a.at4(0, 0, 0, 0) = a.at4(0, 0, 0, 1) = a.at4(0, 0, 1, 0) = a.at4(0, 0, 1, 1) = 1.0;
    b.at4(0, 0, 1, 0) = b.at4(0, 0, 1, 1) = b.at4(0, 0, 2, 0) = b.at4(0, 0, 2, 1) = 1.0;
    const auto r2 = metrics(confusion(a, b), a, b);
    CHECK(r2.iou == doctest::Approx(1.0 / 3.0));
    CHECK(r2.dice == doctest::Approx(0.5));
    CHECK(r2.f1 == doctest::Approx(0.5));

    // masks differing in every pixel: MSE = 255^2 on the 0/255 scale -> 0 dB
    auto inv = a;
    for (auto& v : inv.data) v = 1.0 - v;
    const auto r3 = metrics(confusion(a, inv), a, inv);
    CHECK(r3.psnr_db == doctest::Approx(0.0));
    CHECK(r3.pixel_accuracy == 0.0);
}

TEST_CASE("dice equals f1 identically and iou <= dice on random pairs") {
    for (int trial = 0; trial < 100; ++trial) {
        auto p = random_binary({1, 1, 6, 6}, 1000 + trial);
        auto g = random_binary({1, 1, 6, 6}, 2000 + trial);
        const auto r = metrics(confusion(p, g), p, g);
        CHECK(std::abs(r.dice - r.f1) < 1e-12);
        CHECK(r.iou <= r.dice + 1e-15);
        CHECK(r.iou >= 0.0);
        CHECK(r.iou <= 1.0);
        CHECK(r.dice >= 0.0);
        CHECK(r.dice <= 1.0);
        CHECK(r.pixel_accuracy >= 0.0);
        CHECK(r.pixel_accuracy <= 1.0);

        // symmetry of IoU and Dice in (P, G)
        const auto rs = metrics(confusion(g, p), g, p);
        CHECK(r.iou == doctest::Approx(rs.iou));
        CHECK(r.dice == doctest::Approx(rs.dice));
    }
}

TEST_CASE("empty-vs-empty masks count as perfect agreement") {
    auto z = Tensor<double>::zeros({1, 1, 4, 4});
    const auto r = metrics(confusion(z, z), z, z);
    CHECK(r.iou == 1.0);
    CHECK(r.dice == 1.0);
    CHECK(r.pixel_accuracy == 1.0);
}

TEST_CASE("eval report serializes with snake_case keys and inf psnr") {
    EvalReport r;
    r.iou = 0.5;
    r.dice = 0.6;
    r.psnr_db = std::numeric_limits<double>::infinity();
    r.pixel_accuracy = 0.9;
    r.f1 = 0.6;
    r.mse = 0.01;
    r.mae = 0.05;
    r.latency = LatencyStats{0.2, 5.0, 20, 5};
    const auto j = to_json(r);
    for (const char* key : {"iou", "dice", "psnr_db", "pixel_accuracy", "f1", "mse", "mae"})
        CHECK(j.contains(key));
    CHECK(j["psnr_db"] == "inf");
    CHECK(j["latency"]["fps"] == doctest::Approx(5.0));
    CHECK(j["multitask_loss"].is_null());
}
