// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Straightforward single-threaded versions of the splatting kernels.
//
#include "../raster_internal.hpp"

namespace surfelslam::reference {

using detail::blend_weight;
using detail::gaussian;

RenderBuffers render_serial(std::span<const Surfel> surfels, const Sim3Transform &camera_to_world,
                            const CameraIntrinsics &intr, const RasterConfig &cfg) {
    const detail::PreparedScene scene = detail::prepare(surfels, camera_to_world, intr, cfg);
    RenderBuffers               out;
    out.color              = Image(intr.width, intr.height, 3);
    out.depth              = Image(intr.width, intr.height, 1);
    out.accumulation       = Image(intr.width, intr.height, 1);
    out.degenerate_skipped = scene.degenerate;

    for (int y = 0; y < intr.height; ++y) {
        for (int x = 0; x < intr.width; ++x) {
            double t = 1.0;
            for (const int idx : scene.order) {
                if (t < cfg.transmittance_cutoff) {
                    break;
                }
                const Footprint &fp = scene.footprints[idx];
                if (x < fp.x0 || x > fp.x1 || y < fp.y0 || y > fp.y1) {
                    continue;
                }
                const Surfel &s       = surfels[idx];
                const double  w       = blend_weight(s.opacity, gaussian(fp, x, y), cfg.weight_clamp).value;
                const double  contrib = w * t;
                out.color.at(x, y, 0) += s.color.x() * contrib;
                out.color.at(x, y, 1) += s.color.y() * contrib;
                out.color.at(x, y, 2) += s.color.z() * contrib;
                out.depth.at(x, y) += fp.depth * contrib;
                out.accumulation.at(x, y) += contrib;
                t *= 1.0 - w;
            }
        }
    }
    return out;
}

AppearanceGradient grad_color_opacity_serial(std::span<const Surfel> surfels,
                                             const Sim3Transform &camera_to_world,
                                             const CameraIntrinsics &intr,
                                             const RenderTargets &targets,
                                             const LossWeights &weights, const RasterConfig &cfg) {
    detail::check_targets(intr, targets);
    const RenderBuffers         buf   = render_serial(surfels, camera_to_world, intr, cfg);
    const detail::PreparedScene scene = detail::prepare(surfels, camera_to_world, intr, cfg);

    AppearanceGradient out;
    out.loss = render_loss(buf, *targets.rgb,
                           targets.depth != nullptr ? *targets.depth : buf.depth,
                           {weights.mse, targets.depth != nullptr ? weights.depth : 0.0});
    out.d_color.assign(surfels.size(), Vec3::Zero());
    out.d_opacity.assign(surfels.size(), 0.0);
    out.h_color.assign(surfels.size(), Vec3::Zero());
    out.h_opacity.assign(surfels.size(), 0.0);

    std::size_t masked = 0;
    for (const double a : buf.accumulation.data()) {
        masked += a > 0.5 ? 1 : 0;
    }
    const double n_rgb       = 3.0 * intr.width * intr.height;
    const double rgb_scale   = 2.0 * weights.mse / n_rgb;
    const double depth_scale = (targets.depth != nullptr && masked > 0)
                                   ? 2.0 * weights.depth / static_cast<double>(masked)
                                   : 0.0;

    struct Hit {
        int    idx;
        double g, w, t;
        bool   clamped;
    };
    std::vector<Hit> hits;
    for (int y = 0; y < intr.height; ++y) {
        for (int x = 0; x < intr.width; ++x) {
            hits.clear();
            double t = 1.0;
            for (const int idx : scene.order) {
                if (t < cfg.transmittance_cutoff) {
                    break;
                }
                const Footprint &fp = scene.footprints[idx];
                if (x < fp.x0 || x > fp.x1 || y < fp.y0 || y > fp.y1) {
                    continue;
                }
                const double g  = gaussian(fp, x, y);
                const auto   wt = blend_weight(surfels[idx].opacity, g, cfg.weight_clamp);
                hits.push_back({idx, g, wt.value, t, wt.clamped});
                t *= 1.0 - wt.value;
            }
            Vec3 dl_dc;
            for (int c = 0; c < 3; ++c) {
                dl_dc[c] = rgb_scale * (buf.color.at(x, y, c) - targets.rgb->at(x, y, c));
            }
            const double dl_dd = (depth_scale != 0.0 && buf.accumulation.at(x, y) > 0.5)
                                     ? depth_scale * (buf.depth.at(x, y) - targets.depth->at(x, y))
                                     : 0.0;
            for (std::size_t k = 0; k < hits.size(); ++k) {
                const Hit   &hk  = hits[k];
                const Vec3  &ck  = surfels[hk.idx].color;
                const double zk  = scene.footprints[hk.idx].depth;
                Vec3         tail_c = Vec3::Zero();
                double       tail_z = 0.0;
                if (1.0 - hk.w != 0.0) {
                    for (std::size_t i = k + 1; i < hits.size(); ++i) {
                        const double c_i = hits[i].w * hits[i].t;
                        tail_c += surfels[hits[i].idx].color * c_i;
                        tail_z += scene.footprints[hits[i].idx].depth * c_i;
                    }
                    tail_c /= 1.0 - hk.w;
                    tail_z /= 1.0 - hk.w;
                }
                const Vec3   dc_dw   = hk.t * ck - tail_c;
                const double dd_dw   = hk.t * zk - tail_z;
                const double dw_do   = hk.clamped ? 0.0 : hk.g;
                const double contrib = hk.w * hk.t;
                out.d_color[hk.idx] += dl_dc * contrib;
                out.d_opacity[hk.idx] += dw_do * (dl_dc.dot(dc_dw) + dl_dd * dd_dw);
                out.h_color[hk.idx] += Vec3::Constant(rgb_scale * contrib * contrib);
                out.h_opacity[hk.idx] +=
                    dw_do * dw_do * (rgb_scale * dc_dw.squaredNorm() + depth_scale * dd_dw * dd_dw);
            }
        }
    }
    return out;
}

} // namespace surfelslam::reference
