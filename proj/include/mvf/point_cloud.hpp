#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvf/box.hpp"
#include "mvf/common.hpp"

namespace mvf {

/// One LiDAR return in the sensor frame. Intensity is normalized
/// reflectance in [0, 1].
struct Point {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double intensity = 0.0;
};

/// Spherical coordinates: azimuth phi in (-pi, pi], inclination theta in
/// [0, pi] measured from +z, range d >= 0. The origin maps to (0, 0, 0).
struct SphericalPoint {
    double phi = 0.0;
    double theta = 0.0;
    double d = 0.0;
};

struct PointCloud {
    std::vector<Point> points;
    std::string frame_id;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

SphericalPoint to_spherical(const Point& p);
Point to_cartesian(const SphericalPoint& s, double intensity = 0.0);

struct ReadStats {
    std::size_t clamped_intensities = 0;
};

/// Reads a KITTI velodyne scan: packed little-endian float32 x 4
/// (x, y, z, intensity) per point, no header. Intensities outside [0, 1]
/// are clamped and counted in `stats`; NaN/Inf fields are rejected.
PointCloud read_kitti_bin(const std::filesystem::path& path, ReadStats* stats = nullptr);

/// Writes the same format, atomically. Coordinates are narrowed to float32.
void write_kitti_bin(const std::filesystem::path& path, const PointCloud& pc);

/// Sidecar ground-truth file: one box per line,
/// `class x y z l w h yaw` with space-separated decimals.
void write_ground_truth(const std::filesystem::path& path,
                        const std::vector<GroundTruthBox>& boxes,
                        const ClassTable& classes);
std::vector<GroundTruthBox> read_ground_truth(const std::filesystem::path& path,
                                              const ClassTable& classes);

/// Per-class object population for synthetic scenes.
struct ObjectClassSpec {
    std::string class_name = "vehicle";
    int count = 0;
    double l_min = 3.8, l_max = 4.6;
    double w_min = 1.7, w_max = 2.1;
    double h_min = 1.4, h_max = 1.8;
    double z_center_min = 0.0, z_center_max = 0.0;
    double yaw_min = -kPi, yaw_max = kPi;
    // Center placement; an inverted range (max < min) means "anywhere in
    // the scene bounds, shrunk by the footprint reach".
    double cx_min = 1.0, cx_max = -1.0;
    double cy_min = 1.0, cy_max = -1.0;
    int points_min = 50, points_max = 150;
};

enum class BackgroundMode {
    Uniform,        // uniform over the scene volume
    RadialFalloff,  // log-uniform in range: density ~ 1/r, panorama-like
};

struct SyntheticSceneSpec {
    std::vector<ObjectClassSpec> object_classes;
    std::size_t background_points = 0;
    BackgroundMode background_mode = BackgroundMode::Uniform;
    double x_min = -20.0, x_max = 20.0;
    double y_min = -20.0, y_max = 20.0;
    double z_min = -1.0, z_max = 3.0;
    double falloff_r_min = 2.0;  // RadialFalloff only
    std::uint64_t rng_seed = 0;

    void validate() const;
};

struct SyntheticScene {
    PointCloud cloud;
    std::vector<GroundTruthBox> boxes;
};

/// Deterministic per seed. Object points lie strictly inside their box,
/// background points outside every box. All values are float32-exact so
/// the KITTI binary format round-trips bitwise.
SyntheticScene generate_scene(const SyntheticSceneSpec& spec,
                              const ClassTable& classes = default_class_table());

}  // namespace mvf
