// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "raster_internal.hpp"

#include "surfelslam/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

namespace surfelslam {

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw ConfigError("intrinsics: focal lengths must be positive");
    }
    if (width <= 0 || height <= 0) {
        throw ConfigError("intrinsics: image size must be positive");
    }
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
        throw ConfigError("intrinsics: principal point outside the image");
    }
}

Footprint project_surfel(const Surfel &surfel, const Sim3Transform &camera_to_world,
                         const CameraIntrinsics &intr, const RasterConfig &cfg) {
    Footprint           fp;
    const Sim3Transform world_to_camera = camera_to_world.inverse();
    const Vec3          p               = world_to_camera.act(surfel.mean);
    if (!(p.z() > cfg.near_plane)) {
        fp.status = Footprint::Status::culled;
        return fp;
    }
    fp.depth = p.z();
    const double u_px = intr.fx * p.x() / p.z() + intr.cx;
    const double v_px = intr.fy * p.y() / p.z() + intr.cy;
    if (!(std::abs(u_px - 0.5 * intr.width) <= (0.5 + cfg.guard_band) * intr.width) ||
        !(std::abs(v_px - 0.5 * intr.height) <= (0.5 + cfg.guard_band) * intr.height)) {
        fp.status = Footprint::Status::culled;
        return fp;
    }

    const Mat3 axes = (world_to_camera.rotation() * surfel.rotation).matrix();
    const Vec3 u    = axes.col(0) * (surfel.scale.x() * world_to_camera.scale());
    const Vec3 v    = axes.col(1) * (surfel.scale.y() * world_to_camera.scale());

    const double                 iz = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> j;
    j << intr.fx * iz, 0.0, -intr.fx * p.x() * iz * iz, 0.0, intr.fy * iz,
        -intr.fy * p.y() * iz * iz;
    const Vec2 ju  = j * u;
    const Vec2 jv  = j * v;
    fp.covariance  = ju * ju.transpose() + jv * jv.transpose();
    fp.center      = Vec2(u_px, v_px);

    const double a    = fp.covariance(0, 0);
    const double b    = fp.covariance(0, 1);
    const double c    = fp.covariance(1, 1);
    const double mid  = 0.5 * (a + c);
    const double disc = std::sqrt(std::max(0.0, 0.25 * (a - c) * (a - c) + b * b));
    const double lmax = mid + disc;
    const double lmin = mid - disc;
    const double det  = a * c - b * b;
    if (!(lmin > 0.0) || !(det > 0.0) || lmax > cfg.max_condition * lmin) {
        fp.status = Footprint::Status::degenerate;
        return fp;
    }
    fp.conic << c / det, -b / det, -b / det, a / det;
    fp.status = Footprint::Status::visible;

    const double r = cfg.footprint_sigmas * std::sqrt(lmax);
    fp.x0          = std::max(0, static_cast<int>(std::ceil(fp.center.x() - r)));
    fp.x1          = std::min(intr.width - 1, static_cast<int>(std::floor(fp.center.x() + r)));
    fp.y0          = std::max(0, static_cast<int>(std::ceil(fp.center.y() - r)));
    fp.y1          = std::min(intr.height - 1, static_cast<int>(std::floor(fp.center.y() + r)));
    return fp;
}

Footprint project_surfel(const Surfel &surfel, const SE3Pose &camera_to_world,
                         const CameraIntrinsics &intr, const RasterConfig &cfg) {
    return project_surfel(surfel, Sim3Transform(camera_to_world), intr, cfg);
}

RenderBuffers render(std::span<const Surfel> surfels, const SE3Pose &camera_to_world,
                     const CameraIntrinsics &intr, const RasterConfig &cfg) {
    return render(surfels, Sim3Transform(camera_to_world), intr, cfg);
}

double render_loss(const RenderBuffers &buffers, const Image &target_rgb, const Image &target_depth,
                   const LossWeights &weights) {
    if (!buffers.color.same_shape(target_rgb) || !buffers.depth.same_shape(target_depth) ||
        !buffers.accumulation.same_shape(buffers.depth)) {
        throw ConfigError("render_loss: dimension mismatch");
    }
    double rgb_sum = 0.0;
    {
        const auto a = buffers.color.data();
        const auto b = target_rgb.data();
        for (std::size_t k = 0; k < a.size(); ++k) {
            const double d = a[k] - b[k];
            rgb_sum += d * d;
        }
    }
    double      depth_sum = 0.0;
    std::size_t masked    = 0;
    {
        const auto d   = buffers.depth.data();
        const auto t   = target_depth.data();
        const auto acc = buffers.accumulation.data();
        for (std::size_t k = 0; k < d.size(); ++k) {
            if (acc[k] > 0.5) {
                const double e = d[k] - t[k];
                depth_sum += e * e;
                ++masked;
            }
        }
    }
    const double rgb_mse = buffers.color.data().empty()
                               ? 0.0
                               : rgb_sum / static_cast<double>(buffers.color.data().size());
    const double depth_mse = masked == 0 ? 0.0 : depth_sum / static_cast<double>(masked);
    return weights.mse * rgb_mse + weights.depth * depth_mse;
}

namespace detail {

PreparedScene prepare(std::span<const Surfel> surfels, const Sim3Transform &camera_to_world,
                      const CameraIntrinsics &intr, const RasterConfig &cfg) {
    intr.validate();
    PreparedScene scene;
    scene.footprints.resize(surfels.size());
    for (std::size_t i = 0; i < surfels.size(); ++i) {
        scene.footprints[i] = project_surfel(surfels[i], camera_to_world, intr, cfg);
        const auto &fp      = scene.footprints[i];
        if (fp.status == Footprint::Status::degenerate) {
            ++scene.degenerate;
        } else if (fp.status == Footprint::Status::visible && fp.x0 <= fp.x1 && fp.y0 <= fp.y1) {
            scene.order.push_back(static_cast<int>(i));
        }
    }
    // Depths within ~1e-9 relative of each other count as equal and keep index
    // order, so coplanar surfels do not swap under rounding noise in the pose.
    std::vector<std::int64_t> key(surfels.size(), 0);
    for (const int i : scene.order) {
        key[i] = std::llround(std::log2(scene.footprints[i].depth) * 0x1p30);
    }
    std::sort(scene.order.begin(), scene.order.end(),
              [&](int a, int b) { return key[a] < key[b] || (key[a] == key[b] && a < b); });
    return scene;
}

std::vector<std::vector<int>> bucket_rows(const PreparedScene &scene, int height) {
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(height));
    for (const int idx : scene.order) {
        const auto &fp = scene.footprints[idx];
        for (int y = fp.y0; y <= fp.y1; ++y) {
            rows[y].push_back(idx);
        }
    }
    return rows;
}

void check_targets(const CameraIntrinsics &intr, const RenderTargets &targets) {
    if (targets.rgb == nullptr || targets.rgb->width() != intr.width ||
        targets.rgb->height() != intr.height || targets.rgb->channels() != 3) {
        throw ConfigError("gradient: RGB target missing or mis-sized");
    }
    if (targets.depth != nullptr &&
        (targets.depth->width() != intr.width || targets.depth->height() != intr.height ||
         targets.depth->channels() != 1)) {
        throw ConfigError("gradient: depth target mis-sized");
    }
}

} // namespace detail
} // namespace surfelslam
