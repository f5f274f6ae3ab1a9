#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "mvf/voxelizer.hpp"

using namespace mvf;

namespace {

// Set view of a mapping: voxel grid coordinate -> set of point ids.
std::map<std::array<std::int32_t, 3>, std::set<std::int64_t>> mapping_as_sets(
    const VoxelMapping& m) {
    std::map<std::array<std::int32_t, 3>, std::set<std::int64_t>> out;
    for (std::size_t j = 0; j < m.num_voxels(); ++j) {
        out[m.voxel_coords[j].idx] = {m.voxel_to_points[j].begin(), m.voxel_to_points[j].end()};
    }
    return out;
}

PointCloud random_cloud(std::size_t n, double extent, std::uint64_t seed) {
    Rng rng(seed);
    PointCloud pc;
    for (std::size_t i = 0; i < n; ++i) {
        pc.points.push_back({rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                             rng.uniform(-1.0, 1.0), rng.uniform()});
    }
    return pc;
}

}  // namespace

TEST_SUITE("voxelizer") {

TEST_CASE("assign_voxel matches the hand-derived full-scale indices") {
    const GridSpec grid = GridSpec::full_scale_bev();
    // floor((10+74.88)/0.32) = 265, floor((-10+74.88)/0.32) = 202
    const auto vc = assign_voxel({10.0, -10.0, 0.0, 0.0}, grid);
    REQUIRE(vc.has_value());
    CHECK(vc->idx[0] == 265);
    CHECK(vc->idx[1] == 202);
}

TEST_CASE("exact bounds follow the half-open convention") {
    const GridSpec grid = GridSpec::full_scale_bev();
    const auto at_lower = assign_voxel({-74.88, -74.88, 0.0, 0.0}, grid);
    REQUIRE(at_lower.has_value());
    CHECK(at_lower->idx[0] == 0);
    CHECK(at_lower->idx[1] == 0);
    CHECK_FALSE(assign_voxel({74.88, 0.0, 0.0, 0.0}, grid).has_value());
    // The collapsed z axis still gates the range.
    CHECK_FALSE(assign_voxel({0.0, 0.0, 5.0, 0.0}, grid).has_value());
}

TEST_CASE("full-scale grid is exactly 468 x 468") {
    const auto counts = GridSpec::full_scale_bev().cell_counts();
    CHECK(counts[0] == 468);
    CHECK(counts[1] == 468);
    CHECK(counts[2] == 1);
}

TEST_CASE("dynamic voxelization reproduces the four-voxel illustration") {
    const VoxelMapping m = dynamic_voxelize(fixtures::fig2_cloud(), fixtures::fig2_grid());
    REQUIRE(m.num_voxels() == 4);
    CHECK(m.mapped_points() == 13);
    CHECK(m.dropped_points == 0);
    CHECK(m.dropped_voxels == 0);
    CHECK(m.out_of_range_points == 0);
    std::multiset<std::size_t> sizes;
    for (const auto& v : m.voxel_to_points) sizes.insert(v.size());
    CHECK(sizes == std::multiset<std::size_t>{1, 2, 4, 6});

    const BufferReport report = buffer_report_dynamic(m, 4);
    CHECK(report.allocated_slots == 13);
    CHECK(report.allocated_feature_units == 13 * 4);  // the "13F" optimum
    CHECK(report.occupied_slots == 13);
    CHECK(m.check_consistency());
}

TEST_CASE("hard voxelization at K=3 T=5 drops voxels and points") {
    const HardVoxelConfig cfg{3, 5, 123};
    const VoxelMapping m = hard_voxelize(fixtures::fig2_cloud(), fixtures::fig2_grid(), cfg);
    CHECK(m.num_voxels() == 3);
    CHECK(m.dropped_voxels == 1);
    CHECK(m.dropped_points > 0);
    // If the six-point voxel was retained it lost at least one point.
    for (std::size_t j = 0; j < m.num_voxels(); ++j) {
        CHECK(m.voxel_to_points[j].size() <= 5);
    }
    const BufferReport report = buffer_report_hard(m, cfg, 4);
    CHECK(report.allocated_slots == 15);
    CHECK(report.allocated_feature_units == 15 * 4);  // the "15F" buffer
    // Enumerating retained-voxel combinations caps occupancy at
    // min(6,5)+4+2 = 11 slots.
    CHECK(report.occupied_slots <= 11);
    CHECK(m.check_consistency());
}

TEST_CASE("full coverage of the illustration needs a 4 x 6 buffer") {
    const HardVoxelConfig cfg{4, 6, 0};
    const VoxelMapping m = hard_voxelize(fixtures::fig2_cloud(), fixtures::fig2_grid(), cfg);
    CHECK(m.num_voxels() == 4);
    CHECK(m.dropped_points == 0);
    CHECK(m.dropped_voxels == 0);
    const BufferReport report = buffer_report_hard(m, cfg, 1);
    CHECK(report.allocated_feature_units == 4 * 6);
}

TEST_CASE("hard voxelization is deterministic per seed") {
    const PointCloud pc = random_cloud(3000, 10.0, 5);
    const GridSpec grid = GridSpec::bev(10.24, 0.32, -2.0, 2.0);
    const HardVoxelConfig cfg{50, 3, 77};
    const VoxelMapping a = hard_voxelize(pc, grid, cfg);
    const VoxelMapping b = hard_voxelize(pc, grid, cfg);
    CHECK(a.point_to_voxel == b.point_to_voxel);
    CHECK(a.voxel_to_points == b.voxel_to_points);
    CHECK(a.dropped_points == b.dropped_points);

    const VoxelMapping c = hard_voxelize(pc, grid, HardVoxelConfig{50, 3, 78});
    CHECK(mapping_as_sets(a) != mapping_as_sets(c));  // seed matters
}

TEST_CASE("hard voxelization without capacity pressure equals dynamic") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const PointCloud pc = random_cloud(1500, 9.0, seed);
        const GridSpec grid = GridSpec::bev(10.24, 0.64, -2.0, 2.0);
        const VoxelMapping dyn = dynamic_voxelize(pc, grid);
        std::size_t max_points = 0;
        for (const auto& v : dyn.voxel_to_points) max_points = std::max(max_points, v.size());
        const HardVoxelConfig cfg{static_cast<std::int64_t>(dyn.num_voxels()),
                                  static_cast<std::int64_t>(max_points), seed};
        const VoxelMapping hard = hard_voxelize(pc, grid, cfg);
        CHECK(hard.dropped_points == 0);
        CHECK(hard.dropped_voxels == 0);
        CHECK(mapping_as_sets(hard) == mapping_as_sets(dyn));
    }
}

TEST_CASE("dynamic mapping partitions in-range points") {
    const PointCloud pc = random_cloud(1000, 12.0, 9);  // some land outside the 10.24 grid
    const GridSpec grid = GridSpec::bev(10.24, 0.32, -2.0, 2.0);
    const VoxelMapping m = dynamic_voxelize(pc, grid);
    CHECK(m.check_consistency());
    CHECK(m.mapped_points() + m.out_of_range_points == 1000);
    CHECK(m.dropped_points == 0);

    // Brute-force recheck of every point's cell.
    const auto counts = grid.cell_counts();
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const Point& p = pc.points[i];
        const bool in_range = p.x >= grid.lower[0] && p.x < grid.upper[0] &&
                              p.y >= grid.lower[1] && p.y < grid.upper[1] &&
                              p.z >= grid.lower[2] && p.z < grid.upper[2];
        const std::int64_t slot = m.point_to_voxel[i];
        REQUIRE(in_range == (slot != kNoVoxel));
        if (!in_range) continue;
        auto ix = static_cast<std::int64_t>(std::floor((p.x - grid.lower[0]) / grid.cell[0]));
        auto iy = static_cast<std::int64_t>(std::floor((p.y - grid.lower[1]) / grid.cell[1]));
        ix = std::min(ix, counts[0] - 1);
        iy = std::min(iy, counts[1] - 1);
        CHECK(m.voxel_coords[static_cast<std::size_t>(slot)].idx[0] == ix);
        CHECK(m.voxel_coords[static_cast<std::size_t>(slot)].idx[1] == iy);
    }
}

TEST_CASE("dynamic voxelization is order insensitive up to identity") {
    const PointCloud pc = random_cloud(800, 9.0, 13);
    const GridSpec grid = GridSpec::bev(10.24, 0.64, -2.0, 2.0);
    const VoxelMapping base = dynamic_voxelize(pc, grid);

    Rng rng(99);
    std::vector<std::size_t> perm(pc.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i-- > 1;) {
        std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform_int(
                               static_cast<std::int64_t>(i + 1)))]);
    }
    PointCloud shuffled;
    for (std::size_t i : perm) shuffled.points.push_back(pc.points[i]);
    const VoxelMapping permuted = dynamic_voxelize(shuffled, grid);

    // Same voxel set; member identities match through the permutation.
    auto base_sets = mapping_as_sets(base);
    std::map<std::array<std::int32_t, 3>, std::set<std::int64_t>> permuted_sets;
    for (std::size_t j = 0; j < permuted.num_voxels(); ++j) {
        std::set<std::int64_t> ids;
        for (std::int64_t i : permuted.voxel_to_points[j]) {
            ids.insert(static_cast<std::int64_t>(perm[static_cast<std::size_t>(i)]));
        }
        permuted_sets[permuted.voxel_coords[j].idx] = ids;
    }
    CHECK(base_sets == permuted_sets);
}

TEST_CASE("empty cloud yields an empty mapping") {
    const VoxelMapping m = dynamic_voxelize(PointCloud{}, fixtures::fig2_grid());
    CHECK(m.num_voxels() == 0);
    CHECK(m.mapped_points() == 0);
    const BufferReport report = buffer_report_dynamic(m, 8);
    CHECK(report.allocated_slots == 0);
    CHECK(report.allocated_feature_units == 0);
}

TEST_CASE("parallel and serial dynamic voxelization agree bitwise") {
    const PointCloud pc = random_cloud(5000, 11.0, 31);
    for (const GridSpec& grid :
         {GridSpec::bev(10.24, 0.32, -2.0, 2.0), GridSpec::perspective(64, 16, 40.0)}) {
        const VoxelMapping par = dynamic_voxelize(pc, grid);
        const VoxelMapping ser = dynamic_voxelize_serial(pc, grid);
        CHECK(par.point_to_voxel == ser.point_to_voxel);
        CHECK(par.voxel_to_points == ser.voxel_to_points);
        CHECK(par.voxel_linear_ids == ser.voxel_linear_ids);
        CHECK(par.out_of_range_points == ser.out_of_range_points);
    }
}

TEST_CASE("spherical grid buckets by azimuth and inclination") {
    GridSpec grid = GridSpec::perspective(8, 4, 10.0);
    // +x axis: phi = 0 -> cell 4 of 8; theta = pi/2 -> cell 2 of 4.
    const auto vc = assign_voxel({1.0, 0.0, 0.0, 0.0}, grid);
    REQUIRE(vc.has_value());
    CHECK(vc->idx[0] == 4);
    CHECK(vc->idx[1] == 2);
    // Out of range beyond d_max.
    CHECK_FALSE(assign_voxel({11.0, 0.0, 0.0, 0.0}, grid).has_value());
    // phi = pi folds onto the -pi edge cell.
    const auto folded = assign_voxel({-1.0, 0.0, 0.0, 0.0}, grid);
    REQUIRE(folded.has_value());
    CHECK(folded->idx[0] == 0);
}

TEST_CASE("kt_sweep covers everything when capacity exceeds the scene") {
    const PointCloud pc = fixtures::fig2_cloud();
    const std::vector<HardVoxelConfig> configs = {{100, 100, 0}};
    const auto rows = kt_sweep(std::span(&pc, 1), fixtures::fig2_grid(), configs, 2);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].point_coverage == 1.0);
    CHECK(rows[0].voxel_coverage == 1.0);
    CHECK(rows[0].allocated_feature_units == 100 * 100 * 2);
}

TEST_CASE("kt_sweep point coverage follows T on a single voxel") {
    PointCloud pc;
    for (int i = 0; i < 10; ++i) {
        pc.points.push_back({0.5, 0.5, 0.0, 0.0});
    }
    const std::vector<HardVoxelConfig> configs = {{1, 5, 3}, {1, 10, 3}};
    const auto rows = kt_sweep(std::span(&pc, 1), fixtures::fig2_grid(), configs, 1);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].point_coverage == doctest::Approx(0.5));
    CHECK(rows[1].point_coverage == doctest::Approx(1.0));
    CHECK(rows[0].voxel_coverage == 1.0);
}

TEST_CASE("mapping dump uses the documented line format") {
    PointCloud pc;
    pc.points.push_back({0.5, 0.5, 0.0, 0.0});
    pc.points.push_back({0.6, 0.6, 0.0, 0.0});
    pc.points.push_back({2.5, 1.5, 0.0, 0.0});
    const GridSpec grid = fixtures::fig2_grid();
    const VoxelMapping m = dynamic_voxelize(pc, grid);
    std::ostringstream out;
    dump_mapping(out, m, grid);
    CHECK(out.str() == "voxel (0,0): 0 1\nvoxel (2,1): 2\n");
}

}  // TEST_SUITE
