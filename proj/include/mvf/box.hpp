#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mvf/common.hpp"

namespace mvf {

/// Upright 7-DOF box: center, size, yaw about +z. l spans the box's local
/// x axis at yaw 0, w the local y axis.
struct Box3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double l = 0.0;
    double w = 0.0;
    double h = 0.0;
    double yaw = 0.0;

    /// BEV footprint corners, counter-clockwise.
    std::array<std::array<double, 2>, 4> bev_corners() const {
        const double c = std::cos(yaw);
        const double s = std::sin(yaw);
        const double hl = 0.5 * l;
        const double hw = 0.5 * w;
        std::array<std::array<double, 2>, 4> out{};
        const double lx[4] = {hl, -hl, -hl, hl};
        const double ly[4] = {hw, hw, -hw, -hw};
        for (int i = 0; i < 4; ++i) {
            out[static_cast<std::size_t>(i)] = {x + c * lx[i] - s * ly[i],
                                                y + s * lx[i] + c * ly[i]};
        }
        return out;
    }

    double range() const { return std::sqrt(x * x + y * y + z * z); }
    double bev_area() const { return l * w; }
    double volume() const { return l * w * h; }

    /// True if the Cartesian point lies inside the box (all faces inclusive).
    bool contains(double px, double py, double pz) const {
        const double c = std::cos(yaw);
        const double s = std::sin(yaw);
        const double dx = px - x;
        const double dy = py - y;
        const double lx = c * dx + s * dy;
        const double ly = -s * dx + c * dy;
        return std::abs(lx) <= 0.5 * l && std::abs(ly) <= 0.5 * w &&
               std::abs(pz - z) <= 0.5 * h;
    }
};

using AnchorBox = Box3;

struct GroundTruthBox {
    Box3 box;
    int class_id = 0;
};

struct DetectionBox {
    Box3 box;
    int class_id = 0;
    double score = 0.0;
};

/// Class-name table; class id is the index. Used by the text file formats.
using ClassTable = std::vector<std::string>;

inline ClassTable default_class_table() { return {"vehicle", "pedestrian"}; }

inline int class_id_for(const ClassTable& table, const std::string& name) {
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (table[i] == name) return static_cast<int>(i);
    }
    throw ConfigError("unknown class name: " + name);
}

}  // namespace mvf
