// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "surfelslam/raster.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace surfelslam::detail {

/// Footprints of all surfels plus the global front-to-back order of the visible ones.
struct PreparedScene {
    std::vector<Footprint> footprints;
    std::vector<int>       order;
    std::size_t            degenerate{0};
};

PreparedScene prepare(std::span<const Surfel> surfels, const Sim3Transform &camera_to_world,
                      const CameraIntrinsics &intr, const RasterConfig &cfg);

/// Surfel indices touching each image row, in compositing order.
std::vector<std::vector<int>> bucket_rows(const PreparedScene &scene, int height);

inline double gaussian(const Footprint &fp, double px, double py) {
    const double dx    = px - fp.center.x();
    const double dy    = py - fp.center.y();
    const double power = -0.5 * (fp.conic(0, 0) * dx * dx + 2.0 * fp.conic(0, 1) * dx * dy +
                                 fp.conic(1, 1) * dy * dy);
    return std::exp(std::min(power, 0.0));
}

/// Blending weight and whether the clamp was active.
struct Weight {
    double value;
    bool   clamped;
};

inline Weight blend_weight(double opacity, double g, double clamp) {
    const double w = opacity * g;
    if (w > clamp) {
        return {clamp, true};
    }
    return {w, false};
}

void check_targets(const CameraIntrinsics &intr, const RenderTargets &targets);

} // namespace surfelslam::detail
