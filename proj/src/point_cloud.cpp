#include "mvf/point_cloud.hpp"

#include <cstring>
#include <sstream>

namespace mvf {

SphericalPoint to_spherical(const Point& p) {
    const double d = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    if (d == 0.0) {
        return {0.0, 0.0, 0.0};  // origin convention
    }
    double cos_theta = p.z / d;
    cos_theta = std::clamp(cos_theta, -1.0, 1.0);
    const double theta = std::acos(cos_theta);
    const double phi = wrap_angle(std::atan2(p.y, p.x));
    return {phi, theta, d};
}

Point to_cartesian(const SphericalPoint& s, double intensity) {
    const double sin_theta = std::sin(s.theta);
    return {s.d * sin_theta * std::cos(s.phi),
            s.d * sin_theta * std::sin(s.phi),
            s.d * std::cos(s.theta),
            intensity};
}

PointCloud read_kitti_bin(const std::filesystem::path& path, ReadStats* stats) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open point cloud file: " + path.string());
    }
    in.seekg(0, std::ios::end);
    const auto file_size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    constexpr std::size_t record_size = 4 * sizeof(float);
    if (file_size % record_size != 0) {
        throw TruncatedFileError(path.string() + ": size " + std::to_string(file_size) +
                                 " is not a multiple of " + std::to_string(record_size));
    }
    const std::size_t n = file_size / record_size;
    std::vector<char> raw(file_size);
    in.read(raw.data(), static_cast<std::streamsize>(file_size));
    if (!in) {
        throw IoError("short read: " + path.string());
    }

    PointCloud pc;
    pc.frame_id = path.stem().string();
    pc.points.resize(n);
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < n; ++i) {
        float rec[4];
        std::memcpy(rec, raw.data() + i * record_size, record_size);
        for (int f = 0; f < 4; ++f) {
            if (!std::isfinite(rec[f])) {
                throw NonFiniteValueError(path.string() + ": non-finite field " +
                                          std::to_string(f) + " in record " + std::to_string(i));
            }
        }
        double intensity = rec[3];
        if (intensity < 0.0 || intensity > 1.0) {
            intensity = std::clamp(intensity, 0.0, 1.0);
            ++clamped;
        }
        pc.points[i] = {rec[0], rec[1], rec[2], intensity};
    }
    if (stats) stats->clamped_intensities = clamped;
    return pc;
}

void write_kitti_bin(const std::filesystem::path& path, const PointCloud& pc) {
    AtomicFileWriter w(path, /*binary=*/true);
    std::vector<char> raw(pc.size() * 4 * sizeof(float));
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const Point& p = pc.points[i];
        const float rec[4] = {static_cast<float>(p.x), static_cast<float>(p.y),
                              static_cast<float>(p.z), static_cast<float>(p.intensity)};
        std::memcpy(raw.data() + i * 4 * sizeof(float), rec, sizeof(rec));
    }
    w.stream().write(raw.data(), static_cast<std::streamsize>(raw.size()));
    w.commit();
}

void write_ground_truth(const std::filesystem::path& path,
                        const std::vector<GroundTruthBox>& boxes,
                        const ClassTable& classes) {
    std::ostringstream out;
    for (const GroundTruthBox& gt : boxes) {
        const Box3& b = gt.box;
        out << classes.at(static_cast<std::size_t>(gt.class_id)) << ' '
            << format_double(b.x) << ' ' << format_double(b.y) << ' '
            << format_double(b.z) << ' ' << format_double(b.l) << ' '
            << format_double(b.w) << ' ' << format_double(b.h) << ' '
            << format_double(b.yaw) << '\n';
    }
    atomic_write_text(path, out.str());
}

std::vector<GroundTruthBox> read_ground_truth(const std::filesystem::path& path,
                                              const ClassTable& classes) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open ground-truth file: " + path.string());
    }
    std::vector<GroundTruthBox> boxes;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name;
        GroundTruthBox gt;
        if (!(ls >> name >> gt.box.x >> gt.box.y >> gt.box.z >> gt.box.l >> gt.box.w >>
              gt.box.h >> gt.box.yaw)) {
            throw IoError(path.string() + ": malformed box on line " + std::to_string(line_no));
        }
        gt.class_id = class_id_for(classes, name);
        boxes.push_back(gt);
    }
    return boxes;
}

void SyntheticSceneSpec::validate() const {
    if (x_max <= x_min || y_max <= y_min || z_max <= z_min) {
        throw ConfigError("scene spec: empty placement volume");
    }
    for (const ObjectClassSpec& c : object_classes) {
        if (c.count < 0 || c.points_min < 0 || c.points_max < c.points_min) {
            throw ConfigError("scene spec: negative count for class " + c.class_name);
        }
        if (c.l_min <= 0.0 || c.w_min <= 0.0 || c.h_min <= 0.0 || c.l_max < c.l_min ||
            c.w_max < c.w_min || c.h_max < c.h_min || c.z_center_max < c.z_center_min ||
            c.yaw_max < c.yaw_min) {
            throw ConfigError("scene spec: bad size range for class " + c.class_name);
        }
    }
    if (background_mode == BackgroundMode::RadialFalloff && falloff_r_min <= 0.0) {
        throw ConfigError("scene spec: falloff_r_min must be positive");
    }
}

namespace {

// Narrow through float32 so written scans re-read bitwise. The volatile
// stop keeps the round-trip from being folded away once the surrounding
// arithmetic is vectorized.
double f32(double v) {
    volatile float narrowed = static_cast<float>(v);
    return static_cast<double>(narrowed);
}

bool inside_any_box(const std::vector<GroundTruthBox>& boxes, double x, double y, double z,
                    double margin) {
    for (const GroundTruthBox& gt : boxes) {
        Box3 inflated = gt.box;
        inflated.l += 2.0 * margin;
        inflated.w += 2.0 * margin;
        inflated.h += 2.0 * margin;
        if (inflated.contains(x, y, z)) return true;
    }
    return false;
}

}  // namespace

SyntheticScene generate_scene(const SyntheticSceneSpec& spec, const ClassTable& classes) {
    spec.validate();
    Rng rng(spec.rng_seed);
    SyntheticScene scene;
    scene.cloud.frame_id = "synthetic-" + std::to_string(spec.rng_seed);

    for (const ObjectClassSpec& cls : spec.object_classes) {
        const int class_id = class_id_for(classes, cls.class_name);
        for (int obj = 0; obj < cls.count; ++obj) {
            GroundTruthBox gt;
            gt.class_id = class_id;
            gt.box.l = f32(rng.uniform(cls.l_min, cls.l_max));
            gt.box.w = f32(rng.uniform(cls.w_min, cls.w_max));
            gt.box.h = f32(rng.uniform(cls.h_min, cls.h_max));
            gt.box.yaw = f32(rng.uniform(cls.yaw_min, cls.yaw_max));
            const double reach = 0.5 * std::hypot(gt.box.l, gt.box.w);
            const bool auto_x = cls.cx_max < cls.cx_min;
            const bool auto_y = cls.cy_max < cls.cy_min;
            const double cx_lo = auto_x ? spec.x_min + reach : cls.cx_min;
            const double cx_hi = auto_x ? spec.x_max - reach : cls.cx_max;
            const double cy_lo = auto_y ? spec.y_min + reach : cls.cy_min;
            const double cy_hi = auto_y ? spec.y_max - reach : cls.cy_max;
            if (cx_hi < cx_lo || cy_hi < cy_lo) {
                throw ConfigError("generate_scene: scene too small for class " + cls.class_name);
            }
            // Keep whole footprints inside the scene and BEV-disjoint from
            // earlier objects so ground truths never overlap.
            bool placed = false;
            for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
                gt.box.x = f32(rng.uniform(cx_lo, cx_hi));
                gt.box.y = f32(rng.uniform(cy_lo, cy_hi));
                gt.box.z = f32(rng.uniform(cls.z_center_min, cls.z_center_max));
                placed = true;
                for (const GroundTruthBox& other : scene.boxes) {
                    const double min_dist =
                        reach + 0.5 * std::hypot(other.box.l, other.box.w) + 0.5;
                    if (std::hypot(gt.box.x - other.box.x, gt.box.y - other.box.y) < min_dist) {
                        placed = false;
                        break;
                    }
                }
            }
            if (!placed) {
                throw ConfigError("generate_scene: could not place object " +
                                  std::to_string(obj) + " of class " + cls.class_name +
                                  " without overlap; enlarge the scene");
            }
            scene.boxes.push_back(gt);

            const int npts =
                cls.points_min + static_cast<int>(rng.uniform_int(cls.points_max - cls.points_min + 1));
            const double c = std::cos(gt.box.yaw);
            const double s = std::sin(gt.box.yaw);
            // Sample strictly interior so float32 narrowing cannot push a
            // point across the box boundary.
            const double margin = 1e-3;
            for (int k = 0; k < npts; ++k) {
                const double lx = rng.uniform(-0.5 * gt.box.l + margin, 0.5 * gt.box.l - margin);
                const double ly = rng.uniform(-0.5 * gt.box.w + margin, 0.5 * gt.box.w - margin);
                const double lz = rng.uniform(-0.5 * gt.box.h + margin, 0.5 * gt.box.h - margin);
                Point p;
                p.x = f32(gt.box.x + c * lx - s * ly);
                p.y = f32(gt.box.y + s * lx + c * ly);
                p.z = f32(gt.box.z + lz);
                p.intensity = f32(rng.uniform());
                scene.cloud.points.push_back(p);
            }
        }
    }

    const double r_max = std::max({std::abs(spec.x_min), std::abs(spec.x_max),
                                   std::abs(spec.y_min), std::abs(spec.y_max)});
    for (std::size_t k = 0; k < spec.background_points; ++k) {
        Point p;
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            double x, y, z;
            if (spec.background_mode == BackgroundMode::Uniform) {
                x = rng.uniform(spec.x_min, spec.x_max);
                y = rng.uniform(spec.y_min, spec.y_max);
                z = rng.uniform(spec.z_min, spec.z_max);
            } else {
                // Log-uniform range gives the near-sensor density pile-up of
                // a real panoramic scan.
                const double u = rng.uniform();
                const double r = spec.falloff_r_min *
                                 std::pow(r_max / spec.falloff_r_min, u);
                const double ang = rng.uniform(-kPi, kPi);
                x = r * std::cos(ang);
                y = r * std::sin(ang);
                z = rng.uniform(spec.z_min, spec.z_max);
                if (x < spec.x_min || x >= spec.x_max || y < spec.y_min || y >= spec.y_max) {
                    continue;
                }
            }
            x = f32(x);
            y = f32(y);
            z = f32(z);
            if (inside_any_box(scene.boxes, x, y, z, 1e-3)) continue;
            p.x = x;
            p.y = y;
            p.z = z;
            ok = true;
        }
        if (!ok) {
            throw ConfigError("generate_scene: background sampling failed; boxes fill the scene");
        }
        p.intensity = f32(rng.uniform());
        scene.cloud.points.push_back(p);
    }
    return scene;
}

}  // namespace mvf
