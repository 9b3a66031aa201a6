#include <doctest.h>

#include <veinpipe/augment.hpp>

#include "test_util.hpp"

using namespace veinpipe;

namespace {

double axial_gap(double a, double b) {
    double d = std::abs(a - b);
    d = std::fmod(d, 180.0);
    return std::min(d, 180.0 - d);
}

Sample synth_at_angle(double deg, std::uint64_t seed) {
    SynthParams params;
    params.angle_min_deg = deg;
    params.angle_max_deg = deg;
    return synth_generate(1, 64, seed, params).front();
}

AugSpec off_spec() {
    AugSpec spec;
    spec.flip_prob = 0.0;
    spec.rotate_enabled = false;
    spec.perspective_enabled = false;
    spec.blur_enabled = false;
    spec.gamma_enabled = false;
    return spec;
}

}  // namespace

TEST_CASE("identity spec leaves the sample unchanged") {
    const auto sample = synth_at_angle(40.0, 1);
    const auto spec = off_spec();
    Rng rng(5);
    const auto out = augment_once(sample, spec, rng);
    REQUIRE(out.has_value());
    CHECK(out->image == sample.image);
    CHECK(out->vein_mask == sample.vein_mask);
    CHECK(out->arm_mask == sample.arm_mask);
    CHECK(out->cx == sample.cx);
    CHECK(out->cy == sample.cy);
    CHECK(out->angle_deg == sample.angle_deg);
}

TEST_CASE("horizontal flip re-derives the reflected angle") {
    const auto sample = synth_at_angle(30.0, 2);
    auto spec = off_spec();
    spec.flip_prob = 1.0;
    const auto out = augment(sample, spec, 7);
    REQUIRE(out.has_value());
    CAPTURE(out->angle_deg);
    CHECK(axial_gap(out->angle_deg, 150.0) <= 3.0);
    // centroid mirrors too
    CHECK(std::abs(out->cx - (sample.image.width - 1 - sample.cx)) <= 1.5);
}

TEST_CASE("rotation by 90 degrees of a 0-degree arm re-derives 90") {
    const auto sample = synth_at_angle(0.0, 3);
    auto spec = off_spec();
    spec.rotate_enabled = true;
    spec.rotate_prob = 1.0;
    spec.rotate_min_deg = 90.0;
    spec.rotate_max_deg = 90.0;
    const auto out = augment(sample, spec, 8);
    REQUIRE(out.has_value());
    CHECK(axial_gap(out->angle_deg, 90.0) <= 3.0);
    CHECK(out->angle_deg >= 0.0);
    CHECK(out->angle_deg < 180.0);
}

TEST_CASE("geometric transforms keep masks binary and aligned") {
    const auto sample = synth_at_angle(55.0, 4);
    AugSpec spec;
    spec.seed = 9;
    spec.flip_prob = 0.5;
    spec.rotate_prob = 1.0;
    spec.rotate_min_deg = -60.0;
    spec.rotate_max_deg = 60.0;
    spec.perspective_prob = 1.0;
    spec.perspective_magnitude = 0.04;
    spec.blur_enabled = false;
    spec.gamma_enabled = false;

    int produced = 0;
    for (std::uint64_t item = 0; item < 6; ++item) {
        const auto out = augment(sample, spec, mix_seed(9, item));
        if (!out) continue;
        ++produced;
        CHECK(is_binary_mask(out->vein_mask));
        CHECK(is_binary_mask(out->arm_mask));
        CHECK(out->angle_deg >= 0.0);
        CHECK(out->angle_deg < 180.0);
        // vein stays inside arm
        for (std::int64_t i = 0; i < out->image.pixel_count(); ++i)
            if (out->vein_mask.pixels[static_cast<std::size_t>(i)])
                CHECK(out->arm_mask.pixels[static_cast<std::size_t>(i)] == 255);
        // centroid inside bbox
        CHECK(out->cx >= out->bbox.x);
        CHECK(out->cx <= out->bbox.x + out->bbox.w - 1);
    }
    CHECK(produced >= 4);
}

TEST_CASE("mask-image alignment: transform commutes with masking up to 1% of pixels") {
    // boundary-fringe mismatches scale with the mask perimeter, so the 1%
    // pixel budget is checked at a realistic image size
    SynthParams params;
    params.angle_min_deg = params.angle_max_deg = 25.0;
    const auto sample = synth_generate(1, 256, 6, params).front();
    auto spec = off_spec();
    spec.rotate_enabled = true;
    spec.rotate_prob = 1.0;
    spec.rotate_min_deg = 33.0;
    spec.rotate_max_deg = 33.0;

    // masked image transformed
    Sample masked = sample;
    for (std::int64_t i = 0; i < masked.image.pixel_count(); ++i)
        if (!masked.arm_mask.pixels[static_cast<std::size_t>(i)])
            masked.image.pixels[static_cast<std::size_t>(i)] = 0;
    const auto t_masked = augment(masked, spec, 11);
    const auto t_plain = augment(sample, spec, 11);
    REQUIRE(t_masked.has_value());
    REQUIRE(t_plain.has_value());

    // compare transform(image * mask) with transform(image) * transform(mask)
    std::int64_t mismatched = 0;
    for (std::int64_t i = 0; i < sample.image.pixel_count(); ++i) {
        const int a = t_masked->image.pixels[static_cast<std::size_t>(i)];
        const int b = t_plain->arm_mask.pixels[static_cast<std::size_t>(i)]
                          ? t_plain->image.pixels[static_cast<std::size_t>(i)]
                          : 0;
        if (std::abs(a - b) > 8) ++mismatched;
    }
    CHECK(static_cast<double>(mismatched) <=
          0.01 * static_cast<double>(sample.image.pixel_count()));
}

TEST_CASE("photometric transforms touch the image only") {
    const auto sample = synth_at_angle(80.0, 12);
    auto spec = off_spec();
    spec.blur_enabled = true;
    spec.blur_prob = 1.0;
    spec.gamma_enabled = true;
    spec.gamma_prob = 1.0;
    const auto out = augment(sample, spec, 13);
    REQUIRE(out.has_value());
    CHECK(out->vein_mask == sample.vein_mask);
    CHECK(out->arm_mask == sample.arm_mask);
    CHECK(out->angle_deg == sample.angle_deg);
    CHECK(out->cx == sample.cx);
    CHECK_FALSE(out->image == sample.image);
}

TEST_CASE("build_augmented_set reaches the target deterministically") {
    const auto base = synth_generate(4, 64, 20);
    AugSpec spec;
    spec.seed = 33;
    spec.rotate_min_deg = -40.0;
    spec.rotate_max_deg = 40.0;
    const auto a = build_augmented_set(base, 11, spec);
    const auto b = build_augmented_set(base, 11, spec);
    REQUIRE(a.size() == 11);
    REQUIRE(b.size() == 11);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].image == b[i].image);
    }
    // base samples come through once each, first
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(a[i].id == base[i].id);

    // passthrough when target == base size
    const auto same = build_augmented_set(base, 4, spec);
    CHECK(same.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(same[i].image == base[i].image);

    CHECK_THROWS_AS(build_augmented_set({}, 5, spec), std::invalid_argument);
}

TEST_CASE("full-range rotation keeps derived angles in range") {
    const auto base = synth_generate(2, 64, 30);
    AugSpec spec;
    spec.seed = 44;
    const auto out = build_augmented_set(base, 8, spec);
    for (const auto& s : out) {
        CHECK(s.angle_deg >= 0.0);
        CHECK(s.angle_deg < 180.0);
        CHECK(is_binary_mask(s.vein_mask));
    }
}
