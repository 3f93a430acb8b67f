// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Row-parallel splatting kernels. Each row is written by exactly one
// iteration; cross-row reductions go through per-row buffers that are folded
// serially in row order, so results do not depend on the thread count.
//
#include "../raster_internal.hpp"

#include <algorithm>

namespace surfelslam {

using detail::blend_weight;
using detail::gaussian;

RenderBuffers render(std::span<const Surfel> surfels, const Sim3Transform &camera_to_world,
                     const CameraIntrinsics &intr, const RasterConfig &cfg) {
    const detail::PreparedScene scene = detail::prepare(surfels, camera_to_world, intr, cfg);
    const auto                  rows  = detail::bucket_rows(scene, intr.height);

    RenderBuffers out;
    out.color              = Image(intr.width, intr.height, 3);
    out.depth              = Image(intr.width, intr.height, 1);
    out.accumulation       = Image(intr.width, intr.height, 1);
    out.degenerate_skipped = scene.degenerate;

#pragma omp parallel for schedule(dynamic, 1)
    for (int y = 0; y < intr.height; ++y) {
        std::vector<double> trans(static_cast<std::size_t>(intr.width), 1.0);
        for (const int idx : rows[y]) {
            const Footprint &fp = scene.footprints[idx];
            const Surfel    &s  = surfels[idx];
            for (int x = fp.x0; x <= fp.x1; ++x) {
                double &t = trans[x];
                if (t < cfg.transmittance_cutoff) {
                    continue;
                }
                const double w       = blend_weight(s.opacity, gaussian(fp, x, y), cfg.weight_clamp).value;
                const double contrib = w * t;
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

namespace {

struct BlendEntry {
    int    idx;
    double g;
    double w;
    double trans;
    bool   clamped;
};

struct PixelState {
    std::vector<BlendEntry>  entries;
    std::vector<std::size_t> offsets; // per pixel of the row, plus end
    std::vector<Vec3>        color;
    std::vector<double>      depth;
    std::vector<double>      accum;
};

PixelState forward_row(std::span<const Surfel> surfels, const detail::PreparedScene &scene,
                       const std::vector<int> &row, int y, int width, const RasterConfig &cfg) {
    // Per-pixel lists are assembled surfel-major first, then regrouped pixel-major.
    std::vector<std::vector<BlendEntry>> per_pixel(static_cast<std::size_t>(width));
    std::vector<double>                  trans(static_cast<std::size_t>(width), 1.0);
    for (const int idx : row) {
        const Footprint &fp = scene.footprints[idx];
        const Surfel    &s  = surfels[idx];
        for (int x = fp.x0; x <= fp.x1; ++x) {
            double &t = trans[x];
            if (t < cfg.transmittance_cutoff) {
                continue;
            }
            const double g  = gaussian(fp, x, y);
            const auto   wt = blend_weight(s.opacity, g, cfg.weight_clamp);
            per_pixel[x].push_back({idx, g, wt.value, t, wt.clamped});
            t *= 1.0 - wt.value;
        }
    }
    PixelState st;
    st.offsets.reserve(static_cast<std::size_t>(width) + 1);
    st.color.assign(static_cast<std::size_t>(width), Vec3::Zero());
    st.depth.assign(static_cast<std::size_t>(width), 0.0);
    st.accum.assign(static_cast<std::size_t>(width), 0.0);
    for (int x = 0; x < width; ++x) {
        st.offsets.push_back(st.entries.size());
        for (const auto &e : per_pixel[x]) {
            const double contrib = e.w * e.trans;
            st.color[x] += surfels[e.idx].color * contrib;
            st.depth[x] += scene.footprints[e.idx].depth * contrib;
            st.accum[x] += contrib;
            st.entries.push_back(e);
        }
    }
    st.offsets.push_back(st.entries.size());
    return st;
}

struct GradEntry {
    int    idx;
    Vec3   d_color;
    double d_opacity;
    double h_color;
    double h_opacity;
};

} // namespace

AppearanceGradient grad_color_opacity(std::span<const Surfel> surfels,
                                      const Sim3Transform &camera_to_world,
                                      const CameraIntrinsics &intr, const RenderTargets &targets,
                                      const LossWeights &weights, const RasterConfig &cfg) {
    detail::check_targets(intr, targets);
    const detail::PreparedScene scene = detail::prepare(surfels, camera_to_world, intr, cfg);
    const auto                  rows  = detail::bucket_rows(scene, intr.height);
    const int                   h     = intr.height;
    const int                   w     = intr.width;

    std::vector<PixelState> state(static_cast<std::size_t>(h));
#pragma omp parallel for schedule(dynamic, 1)
    for (int y = 0; y < h; ++y) {
        state[y] = forward_row(surfels, scene, rows[y], y, w, cfg);
    }

    const bool   use_depth = targets.depth != nullptr && weights.depth != 0.0;
    double       rgb_sum   = 0.0;
    double       depth_sum = 0.0;
    std::size_t  masked    = 0;
    const Image &rgb       = *targets.rgb;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double d = state[y].color[x][c] - rgb.at(x, y, c);
                rgb_sum += d * d;
            }
            if (state[y].accum[x] > 0.5) {
                ++masked;
                if (targets.depth != nullptr) {
                    const double e = state[y].depth[x] - targets.depth->at(x, y);
                    depth_sum += e * e;
                }
            }
        }
    }
    const double n_rgb = 3.0 * static_cast<double>(w) * h;

    AppearanceGradient out;
    out.loss = weights.mse * rgb_sum / n_rgb;
    if (targets.depth != nullptr && masked > 0) {
        out.loss += weights.depth * depth_sum / static_cast<double>(masked);
    }

    const double rgb_scale   = 2.0 * weights.mse / n_rgb;
    const double depth_scale = (use_depth && masked > 0) ? 2.0 * weights.depth / masked : 0.0;

    std::vector<std::vector<GradEntry>> row_grads(static_cast<std::size_t>(h));
#pragma omp parallel for schedule(dynamic, 1)
    for (int y = 0; y < h; ++y) {
        const PixelState &st = state[y];
        auto             &gr = row_grads[y];
        gr.reserve(st.entries.size());
        for (int x = 0; x < w; ++x) {
            Vec3 dl_dc;
            for (int c = 0; c < 3; ++c) {
                dl_dc[c] = rgb_scale * (st.color[x][c] - rgb.at(x, y, c));
            }
            double dl_dd = 0.0;
            if (depth_scale != 0.0 && st.accum[x] > 0.5) {
                dl_dd = depth_scale * (st.depth[x] - targets.depth->at(x, y));
            }
            Vec3   after_c = Vec3::Zero();
            double after_z = 0.0;
            for (std::size_t k = st.offsets[x + 1]; k-- > st.offsets[x];) {
                const BlendEntry &e       = st.entries[k];
                const Vec3       &col     = surfels[e.idx].color;
                const double      z       = scene.footprints[e.idx].depth;
                const double      contrib = e.w * e.trans;
                const Vec3        dc_dw   = e.trans * (col - after_c);
                const double      dd_dw   = e.trans * (z - after_z);
                const double      dw_do   = e.clamped ? 0.0 : e.g;
                GradEntry         g;
                g.idx       = e.idx;
                g.d_color   = dl_dc * contrib;
                g.d_opacity = dw_do * (dl_dc.dot(dc_dw) + dl_dd * dd_dw);
                g.h_color   = rgb_scale * contrib * contrib;
                g.h_opacity = dw_do * dw_do * (rgb_scale * dc_dw.squaredNorm() + depth_scale * dd_dw * dd_dw);
                gr.push_back(g);
                after_c = e.w * col + (1.0 - e.w) * after_c;
                after_z = e.w * z + (1.0 - e.w) * after_z;
            }
        }
    }

    out.d_color.assign(surfels.size(), Vec3::Zero());
    out.d_opacity.assign(surfels.size(), 0.0);
    out.h_color.assign(surfels.size(), Vec3::Zero());
    out.h_opacity.assign(surfels.size(), 0.0);
    for (const auto &gr : row_grads) {
        for (const auto &g : gr) {
            out.d_color[g.idx] += g.d_color;
            out.d_opacity[g.idx] += g.d_opacity;
            out.h_color[g.idx] += Vec3::Constant(g.h_color);
            out.h_opacity[g.idx] += g.h_opacity;
        }
    }
    return out;
}

std::vector<double> max_contribution(std::span<const Surfel> surfels,
                                     const Sim3Transform &camera_to_world,
                                     const CameraIntrinsics &intr,
                                     std::span<const unsigned char> pixel_mask,
                                     const RasterConfig &cfg) {
    const detail::PreparedScene scene = detail::prepare(surfels, camera_to_world, intr, cfg);
    const auto                  rows  = detail::bucket_rows(scene, intr.height);
    const bool                  all   = pixel_mask.empty();

    std::vector<std::vector<std::pair<int, double>>> row_max(static_cast<std::size_t>(intr.height));
#pragma omp parallel for schedule(dynamic, 1)
    for (int y = 0; y < intr.height; ++y) {
        std::vector<double> trans(static_cast<std::size_t>(intr.width), 1.0);
        for (const int idx : rows[y]) {
            const Footprint &fp   = scene.footprints[idx];
            double           best = 0.0;
            for (int x = fp.x0; x <= fp.x1; ++x) {
                double &t = trans[x];
                if (t < cfg.transmittance_cutoff) {
                    continue;
                }
                const double wv =
                    blend_weight(surfels[idx].opacity, gaussian(fp, x, y), cfg.weight_clamp).value;
                if (all || pixel_mask[static_cast<std::size_t>(y) * intr.width + x] != 0) {
                    best = std::max(best, wv * t);
                }
                t *= 1.0 - wv;
            }
            if (best > 0.0) {
                row_max[y].emplace_back(idx, best);
            }
        }
    }
    std::vector<double> out(surfels.size(), 0.0);
    for (const auto &rm : row_max) {
        for (const auto &[idx, v] : rm) {
            out[idx] = std::max(out[idx], v);
        }
    }
    return out;
}

std::vector<int> dominant_surfel(std::span<const Surfel> surfels, const Sim3Transform &camera_to_world,
                                 const CameraIntrinsics &intr, const RasterConfig &cfg) {
    const detail::PreparedScene scene = detail::prepare(surfels, camera_to_world, intr, cfg);
    const auto                  rows  = detail::bucket_rows(scene, intr.height);
    std::vector<int>            out(intr.pixel_count(), -1);

#pragma omp parallel for schedule(dynamic, 1)
    for (int y = 0; y < intr.height; ++y) {
        std::vector<double> trans(static_cast<std::size_t>(intr.width), 1.0);
        std::vector<double> best(static_cast<std::size_t>(intr.width), 0.0);
        int                *row_out = out.data() + static_cast<std::size_t>(y) * intr.width;
        for (const int idx : rows[y]) {
            const Footprint &fp = scene.footprints[idx];
            for (int x = fp.x0; x <= fp.x1; ++x) {
                double &t = trans[x];
                if (t < cfg.transmittance_cutoff) {
                    continue;
                }
                const double wv =
                    blend_weight(surfels[idx].opacity, gaussian(fp, x, y), cfg.weight_clamp).value;
                if (wv * t > best[x]) {
                    best[x]    = wv * t;
                    row_out[x] = idx;
                }
                t *= 1.0 - wv;
            }
        }
    }
    return out;
}

} // namespace surfelslam
