// Shared test fixtures.
#pragma once

#include <vector>

#include "mvf/point_cloud.hpp"
#include "mvf/voxelizer.hpp"

namespace fixtures {

/// The hard-vs-dynamic illustration scene: 13 points spread over four
/// voxels holding 6, 4, 2 and 1 points. Cells are 1 m on a 4 x 4 grid.
inline mvf::GridSpec fig2_grid() {
    mvf::GridSpec g;
    g.view = mvf::ViewKind::Cartesian;
    g.lower = {0.0, 0.0, -1.0};
    g.upper = {4.0, 4.0, 1.0};
    g.cell = {1.0, 1.0, 2.0};
    g.collapse = {false, false, true};
    return g;
}

inline mvf::PointCloud fig2_cloud() {
    mvf::PointCloud pc;
    pc.frame_id = "fig2";
    auto cluster = [&pc](double cx, double cy, int count) {
        for (int k = 0; k < count; ++k) {
            const double off = 0.1 + 0.1 * static_cast<double>(k);
            pc.points.push_back({cx + off * 0.5, cy + off * 0.3, 0.0, 0.5});
        }
    };
    cluster(0.0, 0.0, 6);  // v1
    cluster(1.0, 0.0, 4);  // v2
    cluster(2.0, 1.0, 2);  // v3
    cluster(3.0, 3.0, 1);  // v4
    return pc;
}

}  // namespace fixtures
