#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "mvf/common.hpp"
#include "mvf/point_cloud.hpp"

namespace mvf {

enum class ViewKind {
    Cartesian,  // axes x, y, z (meters)
    Spherical,  // axes phi, theta, d (radians, radians, meters)
};

/// Grid geometry for one view. Cells are half-open [lower, upper) per axis;
/// a collapsed axis is pooled into a single cell (z for BEV pillars, d for
/// perspective frustums) but its bounds still gate the in-range test.
struct GridSpec {
    ViewKind view = ViewKind::Cartesian;
    std::array<double, 3> lower{};
    std::array<double, 3> upper{};
    std::array<double, 3> cell{};
    std::array<bool, 3> collapse{};

    void validate() const;

    /// floor((upper-lower)/cell) per axis, snapped when the quotient is
    /// within 1e-9 cells of an integer (so 149.76 / 0.32 counts as 468
    /// despite binary rounding). Collapsed axes report 1.
    std::array<std::int64_t, 3> cell_counts() const;
    std::int64_t num_cells() const;

    /// Cell center coordinate on one axis; collapsed axes use the range
    /// midpoint.
    double cell_center(int axis, std::int64_t index) const;

    /// §4.1 BEV grid: x, y in [-74.88, 74.88) at 0.32 m, z in [-5, 5)
    /// collapsed (468 x 468 pillars).
    static GridSpec full_scale_bev();
    /// Perspective grid: 512 x 64 frustums over azimuth x inclination, range
    /// collapsed up to d_max.
    static GridSpec full_scale_perspective(double d_max = 120.0);
    static GridSpec bev(double xy_extent, double cell_size, double z_min, double z_max);
    static GridSpec perspective(std::int64_t phi_cells, std::int64_t theta_cells, double d_max);
};

struct VoxelCoord {
    std::array<std::int32_t, 3> idx{};  // collapsed axes hold 0

    bool operator==(const VoxelCoord&) const = default;
};

inline constexpr std::int64_t kNoVoxel = -1;

/// Bidirectional point/voxel mapping for one view. `point_to_voxel[i]` is a
/// slot into the voxel arrays (or kNoVoxel); `voxel_to_points[j]` lists the
/// member point indices ascending.
struct VoxelMapping {
    std::vector<std::int64_t> point_to_voxel;
    std::vector<std::vector<std::int64_t>> voxel_to_points;
    std::vector<VoxelCoord> voxel_coords;
    std::vector<std::int64_t> voxel_linear_ids;
    std::size_t dropped_points = 0;       // capacity drops (hard mode only)
    std::size_t dropped_voxels = 0;       // capacity drops (hard mode only)
    std::size_t out_of_range_points = 0;  // excluded by the grid bounds

    std::size_t num_points() const { return point_to_voxel.size(); }
    std::size_t num_voxels() const { return voxel_to_points.size(); }
    std::size_t mapped_points() const;

    /// Exhaustive cross-walk of both directions.
    bool check_consistency() const;
};

struct HardVoxelConfig {
    std::int64_t max_voxels = 1;       // K
    std::int64_t max_points = 1;       // T, per voxel
    std::uint64_t rng_seed = 0;

    void validate() const;
};

/// Buffer accounting in units of feature vectors (Fig. 2's "13F" / "15F").
struct BufferReport {
    std::size_t allocated_slots = 0;
    std::size_t feature_width = 0;
    std::size_t allocated_feature_units = 0;
    std::size_t occupied_slots = 0;
};

/// Per-axis cell assignment; nullopt when any axis (collapsed included)
/// falls outside [lower, upper).
std::optional<VoxelCoord> assign_voxel(const Point& p, const GridSpec& grid);

/// Complete, capacity-free point/voxel mapping. In-range points are all
/// mapped; out-of-range points get kNoVoxel and are only counted. Voxel
/// slots appear in order of first point occurrence.
VoxelMapping dynamic_voxelize(const PointCloud& pc, const GridSpec& grid);
/// Single-threaded reference, bit-identical to dynamic_voxelize.
VoxelMapping dynamic_voxelize_serial(const PointCloud& pc, const GridSpec& grid);

/// Fixed-capacity K x T scheme: voxels beyond K and points beyond T per
/// voxel are subsampled uniformly without replacement, seeded.
VoxelMapping hard_voxelize(const PointCloud& pc, const GridSpec& grid,
                           const HardVoxelConfig& cfg);
/// The sampling stage alone, applied to an existing dynamic mapping.
VoxelMapping hard_from_dynamic(const VoxelMapping& dynamic, const HardVoxelConfig& cfg);

BufferReport buffer_report_dynamic(const VoxelMapping& mapping, std::size_t feature_width);
BufferReport buffer_report_hard(const VoxelMapping& mapping, const HardVoxelConfig& cfg,
                                std::size_t feature_width);

struct KtSweepRow {
    std::int64_t max_voxels = 0;
    std::int64_t max_points = 0;
    double point_coverage = 0.0;  // retained / in-range points
    double voxel_coverage = 0.0;  // retained / occupied voxels
    std::size_t allocated_feature_units = 0;
};

/// Hard-voxelization coverage/memory sweep over (K, T) configurations,
/// aggregated across the given clouds. Rows keep the config order.
std::vector<KtSweepRow> kt_sweep(std::span<const PointCloud> clouds, const GridSpec& grid,
                                 std::span<const HardVoxelConfig> configs,
                                 std::size_t feature_width);

/// Debug dump, one line per voxel: `voxel (<coords>): <point indices>`.
void dump_mapping(std::ostream& out, const VoxelMapping& mapping, const GridSpec& grid);
void dump_buffer_report(std::ostream& out, const BufferReport& report,
                        const VoxelMapping& mapping);

}  // namespace mvf
