// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "surfelslam/mapper.hpp"

#include "surfelslam/errors.hpp"
#include "surfelslam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace surfelslam {

// ---------------------------------------------------------------------------
// GlobalSurfelMap

void GlobalSurfelMap::set_keyframe_pose(int keyframe_id, const Sim3Transform &pose) { poses_[keyframe_id] = pose; }

void GlobalSurfelMap::insert(std::span<const Surfel> surfels, int keyframe_id) {
    if (!poses_.contains(keyframe_id)) {
        throw ConfigError("keyframe " + std::to_string(keyframe_id) + " has no registered pose");
    }
    auto &bound = index_[keyframe_id];
    for (Surfel s : surfels) {
        s.keyframe_id = keyframe_id;
        bound.push_back(static_cast<int>(surfels_.size()));
        surfels_.push_back(s);
    }
}

void GlobalSurfelMap::remove(std::span<const int> indices) {
    if (indices.empty()) {
        return;
    }
    std::vector<char> drop(surfels_.size(), 0);
    for (const int i : indices) {
        drop.at(static_cast<std::size_t>(i)) = 1;
    }
    std::size_t out = 0;
    for (std::size_t i = 0; i < surfels_.size(); ++i) {
        if (drop[i] == 0) {
            surfels_[out++] = surfels_[i];
        }
    }
    surfels_.resize(out);
    rebuild_index();
}

void GlobalSurfelMap::rebuild_index() {
    for (auto &[kf, ids] : index_) {
        ids.clear();
    }
    for (std::size_t i = 0; i < surfels_.size(); ++i) {
        index_[surfels_[i].keyframe_id].push_back(static_cast<int>(i));
    }
}

void GlobalSurfelMap::check_bindings() const {
    std::vector<int> seen(surfels_.size(), 0);
    for (const auto &[kf, ids] : index_) {
        if (!poses_.contains(kf)) {
            throw ConfigError("bound keyframe " + std::to_string(kf) + " has no pose");
        }
        for (const int i : ids) {
            if (i < 0 || static_cast<std::size_t>(i) >= surfels_.size() || surfels_[i].keyframe_id != kf) {
                throw ConfigError("keyframe index entry out of sync");
            }
            ++seen[i];
        }
    }
    if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) {
        throw ConfigError("keyframe index does not cover every surfel exactly once");
    }
}

// ---------------------------------------------------------------------------
// Voxelization

SurfelGrid make_grid(const FramePrediction &prediction, const CameraIntrinsics &intr) {
    SurfelGrid grid;
    grid.width  = intr.width;
    grid.height = intr.height;
    grid.cells.resize(intr.pixel_count());
    grid.valid.assign(intr.pixel_count(), 0);
    for (std::size_t k = 0; k < prediction.points_cam.size(); ++k) {
        const int pix = prediction.pixels[k];
        if (pix < 0 || static_cast<std::size_t>(pix) >= intr.pixel_count()) {
            throw ConfigError("prediction pixel index outside the image");
        }
        const auto &a = prediction.attrs[k];
        Surfel      s;
        s.mean        = prediction.points_cam[k];
        s.rotation    = a.rotation;
        s.scale       = a.scale;
        s.opacity     = a.opacity;
        s.color       = a.color;
        s.confidence  = a.confidence;
        grid.cells[pix] = s;
        grid.valid[pix] = 1;
    }
    return grid;
}

namespace {

Surfel merge_block(const std::array<const Surfel *, 4> &block) {
    Surfel          m         = *block[0];
    const auto     &reference = block[0]->rotation;
    Eigen::Vector4d qsum      = Eigen::Vector4d::Zero();
    m.mean.setZero();
    m.scale.setZero();
    m.color.setZero();
    m.opacity    = 0.0;
    m.confidence = 0.0;
    for (const Surfel *s : block) {
        m.mean += s->mean;
        m.scale += s->scale;
        m.color += s->color;
        m.opacity += s->opacity;
        m.confidence += s->confidence;
        qsum += s->rotation.aligned_to(reference).eigen().coeffs();
    }
    m.mean /= 4.0;
    m.scale /= 4.0;
    m.color /= 4.0;
    m.opacity /= 4.0;
    m.confidence /= 4.0;
    // coeffs() order is (x, y, z, w).
    m.rotation = UnitQuaternion(qsum[3], qsum[0], qsum[1], qsum[2]).aligned_to(reference);
    return m;
}

} // namespace

std::vector<Surfel> adaptive_voxelize(const SurfelGrid &grid, const VoxelizationConfig &cfg) {
    const int bw = grid.width / 2;
    const int bh = grid.height / 2;
    auto      at = [&](int x, int y) { return static_cast<std::size_t>(y) * grid.width + x; };

    double threshold = cfg.depth_threshold;
    if (!(threshold > 0.0)) {
        std::vector<double> depths;
        for (int by = 0; by < bh; ++by) {
            for (int bx = 0; bx < bw; ++bx) {
                double sum = 0.0;
                int    n   = 0;
                for (int k = 0; k < 4; ++k) {
                    const auto i = at(2 * bx + (k & 1), 2 * by + (k >> 1));
                    if (grid.valid[i] != 0) {
                        sum += grid.cells[i].mean.z();
                        ++n;
                    }
                }
                if (n == 4) {
                    depths.push_back(sum / 4.0);
                }
            }
        }
        if (depths.empty()) {
            threshold = 0.0;
        } else {
            const auto mid = depths.begin() + static_cast<std::ptrdiff_t>(depths.size() / 2);
            std::nth_element(depths.begin(), mid, depths.end());
            threshold = cfg.depth_ratio * *mid;
        }
    }

    std::vector<Surfel> out;
    std::vector<char>   consumed(grid.cells.size(), 0);
    for (int by = 0; by < bh; ++by) {
        for (int bx = 0; bx < bw; ++bx) {
            std::array<const Surfel *, 4> block{};
            std::array<std::size_t, 4>    ids{};
            bool                          full = true;
            double                        zmin = 0.0;
            double                        zmax = 0.0;
            for (int k = 0; k < 4; ++k) {
                ids[k] = at(2 * bx + (k & 1), 2 * by + (k >> 1));
                if (grid.valid[ids[k]] == 0) {
                    full = false;
                    break;
                }
                block[k]     = &grid.cells[ids[k]];
                const double z = block[k]->mean.z();
                zmin           = k == 0 ? z : std::min(zmin, z);
                zmax           = k == 0 ? z : std::max(zmax, z);
            }
            if (full && zmax - zmin <= threshold) {
                out.push_back(merge_block(block));
                for (const auto i : ids) {
                    consumed[i] = 1;
                }
            }
        }
    }
    // Unmerged cells, including odd trailing rows and columns, pass through.
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        if (grid.valid[i] != 0 && consumed[i] == 0) {
            out.push_back(grid.cells[i]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fusion and pruning

FusionStats fuse(GlobalSurfelMap &map, std::span<const Surfel> camera_surfels, int keyframe_id,
                 const Sim3Transform &keyframe_pose, const CameraIntrinsics &intr, const FusionConfig &cfg,
                 const RasterConfig &raster) {
    map.set_keyframe_pose(keyframe_id, keyframe_pose);
    FusionStats stats;
    stats.candidates = camera_surfels.size();

    const RenderBuffers coverage = render(map.surfels(), keyframe_pose, intr, raster);
    std::vector<Surfel> accepted;
    for (const Surfel &c : camera_surfels) {
        if (!(c.mean.z() > 0.0)) {
            continue;
        }
        const long px = std::lround(intr.fx * c.mean.x() / c.mean.z() + intr.cx);
        const long py = std::lround(intr.fy * c.mean.y() / c.mean.z() + intr.cy);
        const bool inside = px >= 0 && py >= 0 && px < intr.width && py < intr.height;
        if (inside && coverage.accumulation.at(static_cast<int>(px), static_cast<int>(py)) >= cfg.accumulation_threshold) {
            continue;
        }
        Surfel w   = c;
        w.mean     = keyframe_pose.act(c.mean);
        w.rotation = keyframe_pose.rotation() * c.rotation;
        w.scale    = c.scale * keyframe_pose.scale();
        accepted.push_back(w);
    }
    map.insert(accepted, keyframe_id);
    stats.inserted = accepted.size();
    return stats;
}

Image prediction_depth(const FramePrediction &prediction, const CameraIntrinsics &intr) {
    Image depth(intr.width, intr.height, 1);
    for (std::size_t k = 0; k < prediction.points_cam.size(); ++k) {
        const int pix = prediction.pixels[k];
        depth.at(pix % intr.width, pix / intr.width) = prediction.points_cam[k].z();
    }
    return depth;
}

std::size_t prune(GlobalSurfelMap &map, int keyframe_id, const Image &rgb, const Image &depth,
                  const CameraIntrinsics &intr, const FusionConfig &cfg, const RasterConfig &raster) {
    const auto pose_it = map.keyframe_poses().find(keyframe_id);
    if (pose_it == map.keyframe_poses().end()) {
        throw ConfigError("prune: keyframe " + std::to_string(keyframe_id) + " has no pose");
    }
    if (map.size() == 0) {
        return 0;
    }
    const Sim3Transform &pose = pose_it->second;
    const RenderBuffers  buf  = render(map.surfels(), pose, intr, raster);
    const bool           use_depth = depth.width() == intr.width && depth.height() == intr.height;

    std::vector<unsigned char> bad(intr.pixel_count(), 0);
    bool                       any = false;
    for (int y = 0; y < intr.height; ++y) {
        for (int x = 0; x < intr.width; ++x) {
            double err = 0.0;
            for (int c = 0; c < 3; ++c) {
                err += std::abs(buf.color.at(x, y, c) - rgb.at(x, y, c));
            }
            bool marked = err / 3.0 > cfg.prune_rgb_error;
            const double a = buf.accumulation.at(x, y);
            if (!marked && use_depth && a > 0.5 && depth.at(x, y) > 0.0) {
                const double d = buf.depth.at(x, y) / a;
                marked         = std::abs(d - depth.at(x, y)) > cfg.prune_depth_error * depth.at(x, y);
            }
            if (marked) {
                bad[static_cast<std::size_t>(y) * intr.width + x] = 1;
                any                                               = true;
            }
        }
    }
    if (!any) {
        return 0;
    }
    const auto       contrib = max_contribution(map.surfels(), pose, intr, bad, raster);
    std::vector<int> doomed;
    for (std::size_t i = 0; i < contrib.size(); ++i) {
        if (contrib[i] > cfg.prune_contribution_floor) {
            doomed.push_back(static_cast<int>(i));
        }
    }
    map.remove(doomed);
    return doomed.size();
}

// ---------------------------------------------------------------------------
// Refinement

namespace {

struct ViewLoss {
    double loss{0.0};
    double psnr_sum{0.0};
};

ViewLoss evaluate_views(std::span<const Surfel> surfels, const GlobalSurfelMap &map,
                        std::span<const RefineView> views, const CameraIntrinsics &intr, const RefineConfig &cfg,
                        const RasterConfig &raster) {
    ViewLoss out;
    for (const auto &v : views) {
        const auto  buf   = render(surfels, map.keyframe_poses().at(v.keyframe_id), intr, raster);
        const Image depth = v.depth != nullptr ? *v.depth : buf.depth;
        out.loss += render_loss(buf, *v.rgb, depth, {cfg.mse_weight, v.depth != nullptr ? cfg.depth_weight : 0.0});
        const Psnr p = psnr(buf.color, *v.rgb);
        out.psnr_sum += p.exact ? 100.0 : p.db;
    }
    return out;
}

} // namespace

RefineReport refine(GlobalSurfelMap &map, std::span<const RefineView> views, const CameraIntrinsics &intr,
                    const RefineConfig &cfg, const RasterConfig &raster) {
    RefineReport report;
    if (views.empty()) {
        return report;
    }
    for (const auto &v : views) {
        if (!map.keyframe_poses().contains(v.keyframe_id) || v.rgb == nullptr) {
            throw ConfigError("refine: view " + std::to_string(v.keyframe_id) + " lacks a pose or image");
        }
    }
    std::vector<int> active;
    for (const auto &v : views) {
        const auto it = map.keyframe_index().find(v.keyframe_id);
        if (it != map.keyframe_index().end()) {
            active.insert(active.end(), it->second.begin(), it->second.end());
        }
    }
    std::sort(active.begin(), active.end());
    active.erase(std::unique(active.begin(), active.end()), active.end());

    std::vector<Surfel> current(map.surfels().begin(), map.surfels().end());
    ViewLoss            base = evaluate_views(current, map, views, intr, cfg, raster);
    const double        n_views = static_cast<double>(views.size());
    report.loss.push_back(base.loss);
    report.psnr_before = base.psnr_sum / n_views;
    report.psnr_after  = report.psnr_before;

    for (int iter = 0; iter < cfg.iterations && !active.empty(); ++iter) {
        std::vector<Vec3>   g_color(current.size(), Vec3::Zero());
        std::vector<double> g_opacity(current.size(), 0.0);
        std::vector<Vec3>   h_color(current.size(), Vec3::Zero());
        std::vector<double> h_opacity(current.size(), 0.0);
        for (const auto &v : views) {
            const RenderTargets t{v.rgb, v.depth};
            const auto          g = grad_color_opacity(current, map.keyframe_poses().at(v.keyframe_id), intr, t,
                                                       {cfg.mse_weight, v.depth != nullptr ? cfg.depth_weight : 0.0}, raster);
            for (const int i : active) {
                g_color[i] += g.d_color[i];
                g_opacity[i] += g.d_opacity[i];
                h_color[i] += g.h_color[i];
                h_opacity[i] += g.h_opacity[i];
            }
        }
        double h_max = 0.0;
        for (const int i : active) {
            h_max = std::max({h_max, h_color[i].maxCoeff(), h_opacity[i]});
        }
        if (!(h_max > 0.0)) {
            break;
        }
        const double eps = 1e-6 * h_max;

        bool   accepted = false;
        double step     = cfg.initial_step;
        for (int halving = 0; halving <= cfg.max_halvings && !accepted; ++halving, step *= 0.5) {
            std::vector<Surfel> trial = current;
            for (const int i : active) {
                Surfel &s = trial[i];
                for (int c = 0; c < 3; ++c) {
                    s.color[c] = std::clamp(s.color[c] - step * g_color[i][c] / (h_color[i][c] + eps), 0.0, 1.0);
                }
                s.opacity = std::clamp(s.opacity - step * g_opacity[i] / (h_opacity[i] + eps), 1e-3, 0.999);
            }
            const ViewLoss cand = evaluate_views(trial, map, views, intr, cfg, raster);
            if (cand.loss < base.loss) {
                current  = std::move(trial);
                base     = cand;
                accepted = true;
            }
        }
        if (!accepted) {
            break;
        }
        ++report.accepted_steps;
        report.loss.push_back(base.loss);
        report.psnr_after = base.psnr_sum / n_views;
    }

    for (const int i : active) {
        map.surfel(static_cast<std::size_t>(i)).color   = current[i].color;
        map.surfel(static_cast<std::size_t>(i)).opacity = current[i].opacity;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Loop correction

void loop_correct(GlobalSurfelMap &map, const std::map<int, Sim3Transform> &deltas) {
    for (const auto &[kf, ids] : map.keyframe_index()) {
        if (!ids.empty() && !deltas.contains(kf)) {
            throw ConfigError("no pose correction for keyframe " + std::to_string(kf));
        }
    }
    for (const auto &[kf, ids] : map.keyframe_index()) {
        const auto it = deltas.find(kf);
        if (it == deltas.end()) {
            continue;
        }
        const Sim3Transform &d = it->second;
        // Composition renormalizes quaternions; an exact identity must leave the bits alone.
        if (d.scale() == 1.0 && d.translation().isZero(0.0) && d.rotation().eigen().vec().isZero(0.0)) {
            continue;
        }
        for (const int i : ids) {
            Surfel &s  = map.surfel(static_cast<std::size_t>(i));
            s.mean     = d.act(s.mean);
            s.rotation = d.rotation() * s.rotation;
            s.scale    = s.scale * d.scale();
        }
    }
    for (const auto &[kf, d] : deltas) {
        const auto it = map.keyframe_poses().find(kf);
        if (it != map.keyframe_poses().end()) {
            map.set_keyframe_pose(kf, d * it->second);
        }
    }
}

// ---------------------------------------------------------------------------
// Mapper

Mapper::Mapper(CameraIntrinsics intr, MapperConfig cfg) : intr_(intr), cfg_(cfg) { intr_.validate(); }

void Mapper::process(KeyframePacket packet) {
    const int kf = packet.keyframe_id;
    Observation obs{std::move(packet.rgb), prediction_depth(packet.prediction, intr_)};
    map_.set_keyframe_pose(kf, packet.pose);

    if (cfg_.prune) {
        stats_.pruned += prune(map_, kf, obs.rgb, obs.depth, intr_, cfg_.fusion, cfg_.raster);
    }
    const SurfelGrid    grid = make_grid(packet.prediction, intr_);
    std::vector<Surfel> candidates;
    if (cfg_.voxelize) {
        candidates = adaptive_voxelize(grid, cfg_.voxelization);
    } else {
        for (std::size_t i = 0; i < grid.cells.size(); ++i) {
            if (grid.valid[i] != 0) {
                candidates.push_back(grid.cells[i]);
            }
        }
    }
    stats_.fused += fuse(map_, candidates, kf, packet.pose, intr_, cfg_.fusion, cfg_.raster).inserted;

    observations_[kf] = std::move(obs);
    recent_.push_back(kf);
    if (static_cast<int>(recent_.size()) > std::max(1, cfg_.refine.window)) {
        recent_.erase(recent_.begin());
    }
    if (cfg_.refine_enabled && cfg_.refine.iterations > 0) {
        std::vector<RefineView> views;
        for (const int k : recent_) {
            const auto &o = observations_.at(k);
            views.push_back({k, &o.rgb, &o.depth});
        }
        refine(map_, views, intr_, cfg_.refine, cfg_.raster);
    }
}

void Mapper::apply_correction(std::span<const PoseUpdate> updates) {
    std::map<int, Sim3Transform> deltas;
    for (const auto &u : updates) {
        if (map_.keyframe_poses().contains(u.frame_id)) {
            // Relative to the pose the map currently holds for the keyframe.
            deltas[u.frame_id] = u.new_pose * map_.keyframe_poses().at(u.frame_id).inverse();
        }
    }
    loop_correct(map_, deltas);
    ++stats_.corrections;
}

} // namespace surfelslam
