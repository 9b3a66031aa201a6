#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <veinpipe/augment.hpp>
#include <veinpipe/dataset.hpp>

#include "test_util.hpp"

using namespace veinpipe;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "veinpipe_dataset_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

double axial_gap_test(double a, double b) {
    double d = std::abs(a - b);
    d = std::fmod(d, 180.0);
    return std::min(d, 180.0 - d);
}

}  // namespace

TEST_CASE("synthetic samples satisfy their construction invariants") {
    const auto ds = synth_generate(12, 64, 7);
    REQUIRE(ds.size() == 12);
    for (const auto& s : ds) {
        CHECK(is_binary_mask(s.vein_mask));
        CHECK(is_binary_mask(s.arm_mask));
        for (std::int64_t i = 0; i < s.image.pixel_count(); ++i)
            if (s.vein_mask.pixels[static_cast<std::size_t>(i)])
                CHECK(s.arm_mask.pixels[static_cast<std::size_t>(i)] == 255);
        CHECK(s.cx >= s.bbox.x);
        CHECK(s.cx <= s.bbox.x + s.bbox.w - 1);
        CHECK(s.cy >= s.bbox.y);
        CHECK(s.cy <= s.bbox.y + s.bbox.h - 1);
        CHECK(s.angle_deg >= 0.0);
        CHECK(s.angle_deg < 180.0);
        // bbox fully inside the arm band
        for (int y = s.bbox.y; y < s.bbox.y + s.bbox.h; ++y)
            for (int x = s.bbox.x; x < s.bbox.x + s.bbox.w; ++x) CHECK(s.arm_mask.at(x, y) == 255);
    }
}

TEST_CASE("synthetic angle labels agree with the angle labeler") {
    const auto ds = synth_generate(10, 64, 21);
    for (const auto& s : ds) {
        const double derived = arm_angle(s.arm_mask, s.id);
        CAPTURE(s.id);
        CAPTURE(s.angle_deg);
        CHECK(axial_gap_test(derived, s.angle_deg) <= 3.0);
    }
}

TEST_CASE("synthetic generation is byte-identical under one seed") {
    const auto a = synth_generate(4, 48, 99);
    const auto b = synth_generate(4, 48, 99);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(encode_gray_png(a[i].image) == encode_gray_png(b[i].image));
        CHECK(encode_gray_png(a[i].vein_mask) == encode_gray_png(b[i].vein_mask));
        CHECK(a[i].angle_deg == b[i].angle_deg);
        CHECK(a[i].cx == b[i].cx);
    }
    const auto c = synth_generate(4, 48, 100);
    CHECK(encode_gray_png(a[0].image) != encode_gray_png(c[0].image));
}

TEST_CASE("dataset save/load roundtrips every field") {
    const auto dir = fresh_dir("roundtrip");
    const auto ds = synth_generate(5, 48, 3);
    save_dataset(ds, dir);
    const auto back = load_dataset(dir);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back[i].id == ds[i].id);  // load order == CSV order
        CHECK(back[i].image == ds[i].image);
        CHECK(back[i].vein_mask == ds[i].vein_mask);
        CHECK(back[i].arm_mask == ds[i].arm_mask);
        CHECK(back[i].fossa_mask == ds[i].fossa_mask);
        CHECK(back[i].bbox.x == ds[i].bbox.x);
        CHECK(back[i].bbox.w == ds[i].bbox.w);
        CHECK(back[i].cx == ds[i].cx);
        CHECK(back[i].cy == ds[i].cy);
        CHECK(back[i].angle_deg == ds[i].angle_deg);
    }
}

TEST_CASE("loader reports missing masks with id and path, by row") {
    const auto dir = fresh_dir("missing");
    const auto ds = synth_generate(3, 48, 4);
    save_dataset(ds, dir);
    fs::remove(dir / "masks_vein" / (ds[1].id + ".png"));
    try {
        load_dataset(dir);
        FAIL("expected a dataset error");
    } catch (const DatasetError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(ds[1].id) != std::string::npos);
        CHECK(msg.find("masks_vein") != std::string::npos);
        CHECK(msg.find("row 3") != std::string::npos);
    }
}

TEST_CASE("loader rejects a centroid outside its bounding box") {
    const auto dir = fresh_dir("badcentroid");
    const auto ds = synth_generate(3, 48, 5);
    save_dataset(ds, dir);
    // rewrite row 2's centroid far outside its box
    std::ifstream in(dir / "annotations.csv");
    std::string line, all;
    std::getline(in, line);
    all = line + "\n";
    int row = 0;
    while (std::getline(in, line)) {
        if (row == 1) {
            const auto fields_start = line.find(',');
            line = line.substr(0, fields_start) + ",1.00,1.00" +
                   line.substr(line.find(',', line.find(',', fields_start + 1) + 1));
        }
        all += line + "\n";
        ++row;
    }
    in.close();
    std::ofstream(dir / "annotations.csv") << all;
    try {
        load_dataset(dir);
        FAIL("expected a dataset error");
    } catch (const DatasetError& e) {
        CHECK(std::string(e.what()).find("centroid") != std::string::npos);
    }
}

TEST_CASE("loader rejects malformed rows and a bad header") {
    const auto dir = fresh_dir("malformed");
    const auto ds = synth_generate(3, 48, 6);
    save_dataset(ds, dir);
    {
        std::ofstream app(dir / "annotations.csv", std::ios::app);
        app << "rogue,notanumber,2,3,4,5,6,7\n";
    }
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("malformed"), DatasetError);

    const auto dir2 = fresh_dir("badheader");
    save_dataset(ds, dir2);
    std::string contents = "id,wrong,header\n";
    std::ofstream(dir2 / "annotations.csv") << contents;
    CHECK_THROWS_WITH_AS(load_dataset(dir2), doctest::Contains("header"), DatasetError);

    CHECK_THROWS_WITH_AS(load_dataset(fresh_dir("empty")), doctest::Contains("missing"),
                         DatasetError);
}

TEST_CASE("split matches the paper arithmetic") {
    std::vector<std::string> ids;
    for (int i = 0; i < 2016; ++i) ids.push_back("s" + std::to_string(i));
    const auto m = split(ids, 1);
    CHECK(m.train.size() == 1411);
    CHECK(m.val.size() == 403);
    CHECK(m.test.size() == 202);

    std::vector<std::string> ten(10);
    for (int i = 0; i < 10; ++i) ten[static_cast<std::size_t>(i)] = std::to_string(i);
    const auto m10 = split(ten, 2);
    CHECK(m10.train.size() == 7);
    CHECK(m10.val.size() == 2);
    CHECK(m10.test.size() == 1);

    std::vector<std::string> nine(9, "x");
    CHECK_THROWS_AS(split(nine, 1), std::invalid_argument);
}

TEST_CASE("split is deterministic, disjoint, and covers the set") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 10 + uniform_index(rng, 500);
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
        const auto a = split(ids, trial);
        const auto b = split(ids, trial);
        CHECK(a.train == b.train);
        CHECK(a.val == b.val);
        CHECK(a.test == b.test);

        std::set<std::string> seen;
        for (const auto* part : {&a.train, &a.val, &a.test})
            for (const auto& id : *part) CHECK(seen.insert(id).second);
        CHECK(seen.size() == n);
        CHECK(a.train.size() + a.val.size() + a.test.size() == n);

        // proportions within one sample of 70/20/10
        CHECK(std::abs(static_cast<double>(a.train.size()) - 0.7 * static_cast<double>(n)) <= 1.0);
        CHECK(std::abs(static_cast<double>(a.val.size()) - 0.2 * static_cast<double>(n)) <= 1.0);
    }
}
