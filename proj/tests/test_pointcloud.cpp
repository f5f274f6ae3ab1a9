#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mvf/point_cloud.hpp"

using namespace mvf;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "mvf_pointcloud_tests";
    fs::create_directories(dir);
    return dir / name;
}

void write_raw(const fs::path& path, const std::vector<float>& values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
}

}  // namespace

TEST_SUITE("pointcloud") {

TEST_CASE("to_spherical axis cases") {
    SphericalPoint s = to_spherical({1.0, 0.0, 0.0, 0.0});
    CHECK(s.phi == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.theta == doctest::Approx(kPi / 2).epsilon(1e-12));
    CHECK(s.d == doctest::Approx(1.0).epsilon(1e-12));

    s = to_spherical({0.0, 0.0, 1.0, 0.0});
    CHECK(s.phi == 0.0);
    CHECK(s.theta == 0.0);
    CHECK(s.d == doctest::Approx(1.0));
}

TEST_CASE("to_spherical full-quadrant azimuth") {
    // d = 5, phi = atan2(4,3), theta = pi/2
    const SphericalPoint s = to_spherical({3.0, 4.0, 0.0, 0.0});
    CHECK(s.phi == doctest::Approx(0.9272952).epsilon(1e-6));
    CHECK(s.theta == doctest::Approx(1.5707963).epsilon(1e-6));
    CHECK(s.d == doctest::Approx(5.0).epsilon(1e-12));

    // Left half-plane needs the two-argument arctangent.
    const SphericalPoint left = to_spherical({-1.0, 0.0, 0.0, 0.0});
    CHECK(left.phi == doctest::Approx(kPi));
}

TEST_CASE("origin maps to the degenerate convention") {
    const SphericalPoint s = to_spherical({0.0, 0.0, 0.0, 0.0});
    CHECK(s.phi == 0.0);
    CHECK(s.theta == 0.0);
    CHECK(s.d == 0.0);
}

TEST_CASE("cartesian-spherical round trip within 1e-9") {
    Rng rng(42);
    for (int i = 0; i < 2000; ++i) {
        Point p{rng.uniform(-80.0, 80.0), rng.uniform(-80.0, 80.0), rng.uniform(-10.0, 10.0),
                0.5};
        const SphericalPoint s = to_spherical(p);
        const Point back = to_cartesian(s, p.intensity);
        CHECK(std::abs(back.x - p.x) < 1e-9);
        CHECK(std::abs(back.y - p.y) < 1e-9);
        CHECK(std::abs(back.z - p.z) < 1e-9);
        CHECK(s.phi > -kPi);
        CHECK(s.phi <= kPi);
        CHECK(s.theta >= 0.0);
        CHECK(s.theta <= kPi);
    }
}

TEST_CASE("range is rotation invariant") {
    Rng rng(7);
    for (int i = 0; i < 500; ++i) {
        const Point p{rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0),
                      rng.uniform(-5.0, 5.0), 0.0};
        const double angle = rng.uniform(-kPi, kPi);
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const Point q{c * p.x - s * p.y, s * p.x + c * p.y, p.z, 0.0};
        CHECK(std::abs(to_spherical(p).d - to_spherical(q).d) < 1e-9);
    }
}

TEST_CASE("read_kitti_bin parses records in order") {
    const fs::path path = temp_file("two_records.bin");
    write_raw(path, {1.0f, 2.0f, 3.0f, 0.5f, 4.0f, 5.0f, 6.0f, 0.25f});
    const PointCloud pc = read_kitti_bin(path);
    REQUIRE(pc.size() == 2);
    CHECK(pc.points[0].x == 1.0);
    CHECK(pc.points[0].y == 2.0);
    CHECK(pc.points[0].z == 3.0);
    CHECK(pc.points[0].intensity == 0.5);
    CHECK(pc.points[1].x == 4.0);
    CHECK(pc.points[1].intensity == 0.25);
}

TEST_CASE("read_kitti_bin empty file") {
    const fs::path path = temp_file("empty.bin");
    write_raw(path, {});
    CHECK(read_kitti_bin(path).empty());
}

TEST_CASE("read_kitti_bin rejects truncated files") {
    const fs::path path = temp_file("truncated.bin");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    const char bytes[17] = {};
    out.write(bytes, sizeof(bytes));
    out.close();
    CHECK_THROWS_AS(read_kitti_bin(path), TruncatedFileError);
}

TEST_CASE("read_kitti_bin rejects non-finite fields with the record index") {
    const fs::path path = temp_file("nan.bin");
    write_raw(path, {1.0f, 2.0f, 3.0f, 0.5f, std::numeric_limits<float>::quiet_NaN(), 0.0f, 0.0f,
                     0.0f});
    try {
        read_kitti_bin(path);
        FAIL("expected NonFiniteValueError");
    } catch (const NonFiniteValueError& e) {
        CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
}

TEST_CASE("out-of-range intensities are clamped and counted") {
    const fs::path path = temp_file("hot_intensity.bin");
    write_raw(path, {0.0f, 0.0f, 0.0f, 1.25f, 0.0f, 0.0f, 0.0f, 0.5f});
    ReadStats stats;
    const PointCloud pc = read_kitti_bin(path, &stats);
    CHECK(pc.points[0].intensity == 1.0);
    CHECK(pc.points[1].intensity == 0.5);
    CHECK(stats.clamped_intensities == 1);
}

TEST_CASE("binary write/read round trip is bitwise") {
    SyntheticSceneSpec spec;
    spec.object_classes.push_back({});
    spec.object_classes[0].count = 3;
    spec.background_points = 200;
    spec.rng_seed = 11;
    const SyntheticScene scene = generate_scene(spec);

    const fs::path path = temp_file("roundtrip.bin");
    write_kitti_bin(path, scene.cloud);
    const PointCloud back = read_kitti_bin(path);
    REQUIRE(back.size() == scene.cloud.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back.points[i].x == scene.cloud.points[i].x);
        CHECK(back.points[i].y == scene.cloud.points[i].y);
        CHECK(back.points[i].z == scene.cloud.points[i].z);
        CHECK(back.points[i].intensity == scene.cloud.points[i].intensity);
    }
    // And the file itself re-writes identically.
    const fs::path path2 = temp_file("roundtrip2.bin");
    write_kitti_bin(path2, back);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(c1 == c2);
}

TEST_CASE("generate_scene with no objects") {
    SyntheticSceneSpec spec;
    spec.background_points = 100;
    spec.rng_seed = 7;
    const SyntheticScene scene = generate_scene(spec);
    CHECK(scene.cloud.size() == 100);
    CHECK(scene.boxes.empty());
}

TEST_CASE("generate_scene is a pure function of the spec") {
    SyntheticSceneSpec spec;
    spec.object_classes.push_back({});
    spec.object_classes[0].count = 5;
    spec.background_points = 300;
    spec.rng_seed = 99;
    const SyntheticScene a = generate_scene(spec);
    const SyntheticScene b = generate_scene(spec);
    REQUIRE(a.cloud.size() == b.cloud.size());
    REQUIRE(a.boxes.size() == b.boxes.size());
    for (std::size_t i = 0; i < a.cloud.size(); ++i) {
        CHECK(a.cloud.points[i].x == b.cloud.points[i].x);
        CHECK(a.cloud.points[i].y == b.cloud.points[i].y);
        CHECK(a.cloud.points[i].z == b.cloud.points[i].z);
        CHECK(a.cloud.points[i].intensity == b.cloud.points[i].intensity);
    }
    for (std::size_t i = 0; i < a.boxes.size(); ++i) {
        CHECK(a.boxes[i].box.x == b.boxes[i].box.x);
        CHECK(a.boxes[i].box.yaw == b.boxes[i].box.yaw);
    }
}

TEST_CASE("object points stay inside their box") {
    // One 4 x 2 x 1.6 box pinned at the origin with yaw 0.
    SyntheticSceneSpec spec;
    ObjectClassSpec cls;
    cls.count = 1;
    cls.l_min = cls.l_max = 4.0;
    cls.w_min = cls.w_max = 2.0;
    cls.h_min = cls.h_max = 1.6;
    cls.yaw_min = cls.yaw_max = 0.0;
    cls.cx_min = cls.cx_max = 0.0;
    cls.cy_min = cls.cy_max = 0.0;
    cls.points_min = cls.points_max = 50;
    spec.object_classes.push_back(cls);
    spec.rng_seed = 3;
    const SyntheticScene scene = generate_scene(spec);
    REQUIRE(scene.boxes.size() == 1);
    REQUIRE(scene.cloud.size() == 50);
    const double zc = scene.boxes[0].box.z;
    for (const Point& p : scene.cloud.points) {
        CHECK(std::abs(p.x) <= 2.0);
        CHECK(std::abs(p.y) <= 1.0);
        CHECK(std::abs(p.z - zc) <= 0.8);
    }
}

TEST_CASE("background points avoid every box") {
    SyntheticSceneSpec spec;
    spec.object_classes.push_back({});
    spec.object_classes[0].count = 4;
    spec.background_points = 500;
    spec.rng_seed = 21;
    const SyntheticScene scene = generate_scene(spec);
    std::size_t object_points = 0;
    for (const GroundTruthBox& unused : scene.boxes) (void)unused;
    // Object points come first; everything after is background.
    for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
        bool inside = false;
        for (const GroundTruthBox& gt : scene.boxes) {
            if (gt.box.contains(scene.cloud.points[i].x, scene.cloud.points[i].y,
                                scene.cloud.points[i].z)) {
                inside = true;
                break;
            }
        }
        if (inside) ++object_points;
    }
    CHECK(object_points == scene.cloud.size() - 500);
}

TEST_CASE("ground truth sidecar round trips") {
    SyntheticSceneSpec spec;
    spec.object_classes.push_back({});
    spec.object_classes[0].count = 3;
    spec.rng_seed = 5;
    const SyntheticScene scene = generate_scene(spec);
    const fs::path path = temp_file("boxes.txt");
    write_ground_truth(path, scene.boxes, default_class_table());
    const auto back = read_ground_truth(path, default_class_table());
    REQUIRE(back.size() == scene.boxes.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].class_id == scene.boxes[i].class_id);
        CHECK(back[i].box.x == scene.boxes[i].box.x);
        CHECK(back[i].box.l == scene.boxes[i].box.l);
        CHECK(back[i].box.yaw == scene.boxes[i].box.yaw);
    }
}

}  // TEST_SUITE
