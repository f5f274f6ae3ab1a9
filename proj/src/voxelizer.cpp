#include "mvf/voxelizer.hpp"

#include <algorithm>
#include <unordered_map>

namespace mvf {

void GridSpec::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (!(upper[a] > lower[a])) {
            throw ConfigError("grid: upper must exceed lower on axis " + std::to_string(a));
        }
        if (!(cell[a] > 0.0)) {
            throw ConfigError("grid: cell size must be positive on axis " + std::to_string(a));
        }
    }
    for (std::int64_t c : cell_counts()) {
        if (c < 1) throw ConfigError("grid: fewer than one cell on an axis");
    }
}

std::array<std::int64_t, 3> GridSpec::cell_counts() const {
    std::array<std::int64_t, 3> counts{};
    for (int a = 0; a < 3; ++a) {
        if (collapse[a]) {
            counts[a] = 1;
            continue;
        }
        counts[a] = static_cast<std::int64_t>(
            std::floor((upper[a] - lower[a]) / cell[a] + 1e-9));
    }
    return counts;
}

std::int64_t GridSpec::num_cells() const {
    const auto counts = cell_counts();
    return counts[0] * counts[1] * counts[2];
}

double GridSpec::cell_center(int axis, std::int64_t index) const {
    if (collapse[static_cast<std::size_t>(axis)]) {
        return 0.5 * (lower[static_cast<std::size_t>(axis)] + upper[static_cast<std::size_t>(axis)]);
    }
    return lower[static_cast<std::size_t>(axis)] +
           (static_cast<double>(index) + 0.5) * cell[static_cast<std::size_t>(axis)];
}

GridSpec GridSpec::full_scale_bev() {
    return bev(74.88, 0.32, -5.0, 5.0);
}

GridSpec GridSpec::bev(double xy_extent, double cell_size, double z_min, double z_max) {
    GridSpec g;
    g.view = ViewKind::Cartesian;
    g.lower = {-xy_extent, -xy_extent, z_min};
    g.upper = {xy_extent, xy_extent, z_max};
    g.cell = {cell_size, cell_size, z_max - z_min};
    g.collapse = {false, false, true};
    return g;
}

GridSpec GridSpec::full_scale_perspective(double d_max) {
    return perspective(512, 64, d_max);
}

GridSpec GridSpec::perspective(std::int64_t phi_cells, std::int64_t theta_cells, double d_max) {
    GridSpec g;
    g.view = ViewKind::Spherical;
    g.lower = {-kPi, 0.0, 0.0};
    g.upper = {kPi, kPi, d_max};
    g.cell = {2.0 * kPi / static_cast<double>(phi_cells),
              kPi / static_cast<double>(theta_cells), d_max};
    g.collapse = {false, false, true};
    return g;
}

namespace {

std::array<double, 3> view_coords(const Point& p, const GridSpec& grid) {
    if (grid.view == ViewKind::Cartesian) {
        return {p.x, p.y, p.z};
    }
    SphericalPoint s = to_spherical(p);
    // phi == pi is the same ray as -pi; fold it so the panorama is closed.
    if (s.phi >= kPi) s.phi -= 2.0 * kPi;
    return {s.phi, s.theta, s.d};
}

std::optional<VoxelCoord> assign_from_coords(const std::array<double, 3>& c,
                                             const GridSpec& grid,
                                             const std::array<std::int64_t, 3>& counts) {
    VoxelCoord vc;
    for (int a = 0; a < 3; ++a) {
        if (c[a] < grid.lower[a] || c[a] >= grid.upper[a]) {
            return std::nullopt;  // half-open: the exact upper bound is out
        }
        if (grid.collapse[a]) {
            vc.idx[a] = 0;
            continue;
        }
        auto i = static_cast<std::int64_t>(std::floor((c[a] - grid.lower[a]) / grid.cell[a]));
        // Guard binary rounding right at the top edge; in-range is already
        // decided by the coordinate comparison above.
        i = std::clamp<std::int64_t>(i, 0, counts[a] - 1);
        vc.idx[a] = static_cast<std::int32_t>(i);
    }
    return vc;
}

std::int64_t linear_id(const VoxelCoord& vc, const std::array<std::int64_t, 3>& counts) {
    return (static_cast<std::int64_t>(vc.idx[0]) * counts[1] + vc.idx[1]) * counts[2] + vc.idx[2];
}

VoxelMapping group_points(const PointCloud& pc, const GridSpec& grid,
                          const std::vector<std::int64_t>& ids) {
    const auto counts = grid.cell_counts();
    VoxelMapping m;
    m.point_to_voxel.assign(pc.size(), kNoVoxel);
    std::unordered_map<std::int64_t, std::int64_t> slot_of;
    slot_of.reserve(pc.size() / 4 + 16);
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const std::int64_t id = ids[i];
        if (id < 0) {
            ++m.out_of_range_points;
            continue;
        }
        auto [it, inserted] = slot_of.try_emplace(id, static_cast<std::int64_t>(m.voxel_to_points.size()));
        if (inserted) {
            m.voxel_to_points.emplace_back();
            m.voxel_linear_ids.push_back(id);
            VoxelCoord vc;
            std::int64_t rest = id;
            vc.idx[2] = static_cast<std::int32_t>(rest % counts[2]);
            rest /= counts[2];
            vc.idx[1] = static_cast<std::int32_t>(rest % counts[1]);
            vc.idx[0] = static_cast<std::int32_t>(rest / counts[1]);
            m.voxel_coords.push_back(vc);
        }
        const std::int64_t slot = it->second;
        m.point_to_voxel[i] = slot;
        m.voxel_to_points[static_cast<std::size_t>(slot)].push_back(static_cast<std::int64_t>(i));
    }
    return m;
}

}  // namespace

std::optional<VoxelCoord> assign_voxel(const Point& p, const GridSpec& grid) {
    return assign_from_coords(view_coords(p, grid), grid, grid.cell_counts());
}

std::size_t VoxelMapping::mapped_points() const {
    std::size_t n = 0;
    for (const auto& v : voxel_to_points) n += v.size();
    return n;
}

bool VoxelMapping::check_consistency() const {
    std::size_t mapped = 0;
    for (std::size_t i = 0; i < point_to_voxel.size(); ++i) {
        const std::int64_t slot = point_to_voxel[i];
        if (slot == kNoVoxel) continue;
        if (slot < 0 || slot >= static_cast<std::int64_t>(voxel_to_points.size())) return false;
        const auto& members = voxel_to_points[static_cast<std::size_t>(slot)];
        if (std::find(members.begin(), members.end(), static_cast<std::int64_t>(i)) ==
            members.end()) {
            return false;
        }
        ++mapped;
    }
    for (std::size_t j = 0; j < voxel_to_points.size(); ++j) {
        for (std::int64_t i : voxel_to_points[j]) {
            if (i < 0 || i >= static_cast<std::int64_t>(point_to_voxel.size())) return false;
            if (point_to_voxel[static_cast<std::size_t>(i)] != static_cast<std::int64_t>(j)) {
                return false;
            }
        }
    }
    return mapped == mapped_points();
}

void HardVoxelConfig::validate() const {
    if (max_voxels < 1 || max_points < 1) {
        throw ConfigError("hard voxelization: K and T must be at least 1");
    }
}

VoxelMapping dynamic_voxelize(const PointCloud& pc, const GridSpec& grid) {
    grid.validate();
    const auto counts = grid.cell_counts();
    const auto n = static_cast<std::int64_t>(pc.size());
    std::vector<std::int64_t> ids(pc.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto vc = assign_from_coords(
            view_coords(pc.points[static_cast<std::size_t>(i)], grid), grid, counts);
        ids[static_cast<std::size_t>(i)] = vc ? linear_id(*vc, counts) : -1;
    }
    return group_points(pc, grid, ids);
}

VoxelMapping dynamic_voxelize_serial(const PointCloud& pc, const GridSpec& grid) {
    grid.validate();
    const auto counts = grid.cell_counts();
    std::vector<std::int64_t> ids(pc.size());
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const auto vc = assign_from_coords(view_coords(pc.points[i], grid), grid, counts);
        ids[i] = vc ? linear_id(*vc, counts) : -1;
    }
    return group_points(pc, grid, ids);
}

VoxelMapping hard_from_dynamic(const VoxelMapping& dynamic, const HardVoxelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.rng_seed);
    const auto total_voxels = static_cast<std::int64_t>(dynamic.num_voxels());

    std::vector<std::int64_t> kept_slots;
    if (total_voxels > cfg.max_voxels) {
        kept_slots = rng.sample_without_replacement(total_voxels, cfg.max_voxels);
    } else {
        kept_slots.resize(static_cast<std::size_t>(total_voxels));
        for (std::int64_t j = 0; j < total_voxels; ++j) kept_slots[static_cast<std::size_t>(j)] = j;
    }

    VoxelMapping m;
    m.point_to_voxel.assign(dynamic.point_to_voxel.size(), kNoVoxel);
    m.out_of_range_points = dynamic.out_of_range_points;
    m.dropped_voxels = static_cast<std::size_t>(total_voxels) - kept_slots.size();

    std::vector<bool> kept(static_cast<std::size_t>(total_voxels), false);
    for (std::int64_t j : kept_slots) kept[static_cast<std::size_t>(j)] = true;
    for (std::int64_t j = 0; j < total_voxels; ++j) {
        if (!kept[static_cast<std::size_t>(j)]) {
            m.dropped_points += dynamic.voxel_to_points[static_cast<std::size_t>(j)].size();
        }
    }

    for (std::int64_t j : kept_slots) {
        const auto& members = dynamic.voxel_to_points[static_cast<std::size_t>(j)];
        std::vector<std::int64_t> sampled;
        if (static_cast<std::int64_t>(members.size()) > cfg.max_points) {
            const auto picks =
                rng.sample_without_replacement(static_cast<std::int64_t>(members.size()),
                                               cfg.max_points);
            sampled.reserve(picks.size());
            for (std::int64_t k : picks) sampled.push_back(members[static_cast<std::size_t>(k)]);
            m.dropped_points += members.size() - sampled.size();
        } else {
            sampled = members;
        }
        const auto slot = static_cast<std::int64_t>(m.voxel_to_points.size());
        for (std::int64_t i : sampled) m.point_to_voxel[static_cast<std::size_t>(i)] = slot;
        m.voxel_to_points.push_back(std::move(sampled));
        m.voxel_coords.push_back(dynamic.voxel_coords[static_cast<std::size_t>(j)]);
        m.voxel_linear_ids.push_back(dynamic.voxel_linear_ids[static_cast<std::size_t>(j)]);
    }
    return m;
}

VoxelMapping hard_voxelize(const PointCloud& pc, const GridSpec& grid,
                           const HardVoxelConfig& cfg) {
    return hard_from_dynamic(dynamic_voxelize(pc, grid), cfg);
}

BufferReport buffer_report_dynamic(const VoxelMapping& mapping, std::size_t feature_width) {
    BufferReport r;
    r.allocated_slots = mapping.mapped_points();
    r.feature_width = feature_width;
    r.allocated_feature_units = r.allocated_slots * feature_width;
    r.occupied_slots = mapping.mapped_points();
    return r;
}

BufferReport buffer_report_hard(const VoxelMapping& mapping, const HardVoxelConfig& cfg,
                                std::size_t feature_width) {
    BufferReport r;
    r.allocated_slots = static_cast<std::size_t>(cfg.max_voxels * cfg.max_points);
    r.feature_width = feature_width;
    r.allocated_feature_units = r.allocated_slots * feature_width;
    r.occupied_slots = mapping.mapped_points();
    return r;
}

std::vector<KtSweepRow> kt_sweep(std::span<const PointCloud> clouds, const GridSpec& grid,
                                 std::span<const HardVoxelConfig> configs,
                                 std::size_t feature_width) {
    std::vector<VoxelMapping> dynamics;
    dynamics.reserve(clouds.size());
    for (const PointCloud& pc : clouds) dynamics.push_back(dynamic_voxelize(pc, grid));

    std::vector<KtSweepRow> rows;
    rows.reserve(configs.size());
    for (const HardVoxelConfig& cfg : configs) {
        cfg.validate();
        std::size_t total_points = 0, kept_points = 0;
        std::size_t total_voxels = 0, kept_voxels = 0;
        for (const VoxelMapping& dyn : dynamics) {
            const VoxelMapping hard = hard_from_dynamic(dyn, cfg);
            total_points += dyn.mapped_points();
            kept_points += hard.mapped_points();
            total_voxels += dyn.num_voxels();
            kept_voxels += hard.num_voxels();
        }
        KtSweepRow row;
        row.max_voxels = cfg.max_voxels;
        row.max_points = cfg.max_points;
        row.point_coverage =
            total_points ? static_cast<double>(kept_points) / static_cast<double>(total_points) : 1.0;
        row.voxel_coverage =
            total_voxels ? static_cast<double>(kept_voxels) / static_cast<double>(total_voxels) : 1.0;
        row.allocated_feature_units =
            static_cast<std::size_t>(cfg.max_voxels * cfg.max_points) * feature_width;
        rows.push_back(row);
    }
    return rows;
}

void dump_mapping(std::ostream& out, const VoxelMapping& mapping, const GridSpec& grid) {
    for (std::size_t j = 0; j < mapping.num_voxels(); ++j) {
        const VoxelCoord& vc = mapping.voxel_coords[j];
        out << "voxel (";
        bool first = true;
        for (int a = 0; a < 3; ++a) {
            if (grid.collapse[static_cast<std::size_t>(a)]) continue;
            if (!first) out << ",";
            out << vc.idx[static_cast<std::size_t>(a)];
            first = false;
        }
        out << "):";
        for (std::int64_t i : mapping.voxel_to_points[j]) out << ' ' << i;
        out << '\n';
    }
}

void dump_buffer_report(std::ostream& out, const BufferReport& report,
                        const VoxelMapping& mapping) {
    out << "voxels " << mapping.num_voxels() << '\n'
        << "allocated_slots " << report.allocated_slots << '\n'
        << "feature_width " << report.feature_width << '\n'
        << "allocated_feature_units " << report.allocated_feature_units << '\n'
        << "occupied_slots " << report.occupied_slots << '\n'
        << "dropped_points " << mapping.dropped_points << '\n'
        << "dropped_voxels " << mapping.dropped_voxels << '\n'
        << "out_of_range_points " << mapping.out_of_range_points << '\n';
}

}  // namespace mvf
