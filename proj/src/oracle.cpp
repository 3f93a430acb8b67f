// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "surfelslam/oracle.hpp"

#include "surfelslam/errors.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numbers>
#include <random>
#include <string>

namespace surfelslam {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x51ed27a1c0ffee00ULL;
    for (const auto p : parts) {
        h = splitmix(h ^ p);
    }
    return h;
}

// Stream tags keep the independent noise sources apart.
enum Stream : std::uint64_t {
    kBias = 1,
    kPoseWalk,
    kPoints,
    kRelocPose,
    kRelocPoints,
    kSceneLayout,
};

double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

Vec3 to_float(const Vec3 &v) { return Vec3(to_float(v.x()), to_float(v.y()), to_float(v.z())); }

struct Patch {
    Vec3   origin;
    Vec3   u;
    Vec3   v;
    Vec3   normal;
    Vec3   base_color;
    double area() const { return u.norm() * v.norm(); }
};

void add_box(std::vector<Patch> &patches, const Vec3 &lo, const Vec3 &hi) {
    const Vec3 d = hi - lo;
    const Vec3 ex(d.x(), 0, 0);
    const Vec3 ey(0, d.y(), 0);
    const Vec3 ez(0, 0, d.z());
    patches.push_back({lo, ex, ey, -Vec3::UnitZ(), {}});
    patches.push_back({lo + ez, ex, ey, Vec3::UnitZ(), {}});
    patches.push_back({lo, ez, ey, -Vec3::UnitX(), {}});
    patches.push_back({lo + ex, ez, ey, Vec3::UnitX(), {}});
    // Top face; y points down so the top is at lo.y().
    patches.push_back({lo, ex, ez, -Vec3::UnitY(), {}});
}

SE3Pose look_pose(const Vec3 &position, const Vec3 &forward) {
    const Vec3 down(0.0, 1.0, 0.0);
    const Vec3 z = forward.normalized();
    const Vec3 x = down.cross(z).normalized();
    const Vec3 y = z.cross(x);
    Mat3       r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = z;
    return {UnitQuaternion::from_matrix(r), position};
}

Eigen::VectorXd make_feature(const Vec3 &direction, const Vec3 &position, const OracleConfig &cfg) {
    Eigen::VectorXd f(6);
    const Vec3      d = direction.normalized();
    for (int k = 0; k < 3; ++k) {
        f[k]     = std::round(d[k] * cfg.direction_quantization);
        f[k + 3] = std::floor(position[k] / cfg.position_cell);
    }
    return f;
}

SE3Pose scaled_relative(const SE3Pose &origin, const SE3Pose &frame, double scale) {
    if (&origin == &frame) {
        return SE3Pose::identity();
    }
    SE3Pose rel = origin.inverse() * frame;
    rel.translation *= scale;
    return rel;
}

} // namespace

void SceneConfig::validate() const {
    if (surfel_count < 100) {
        throw ConfigError("scene needs at least 100 surfels");
    }
    if (frame_count < 2) {
        throw ConfigError("scene needs at least 2 frames");
    }
    if (!(revolutions > 0.0) || !(frame_rate > 0.0) || !(path_radius >= 0.0)) {
        throw ConfigError("trajectory parameters must be positive");
    }
    const double margin = 1.0;
    if (room_half_extent.x() < path_radius + margin || room_half_extent.z() < path_radius + margin ||
        room_half_extent.y() < 0.5) {
        throw ConfigError("room extent too small for the camera path");
    }
    intrinsics.validate();
}

SyntheticScene generate_scene(const SceneConfig &cfg) {
    cfg.validate();
    std::mt19937_64                        rng(mix({cfg.seed, kSceneLayout}));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double>       gauss(0.0, 1.0);

    const Vec3 &h = cfg.room_half_extent;
    std::vector<Patch> patches;
    const Vec3 lo = -h;
    patches.push_back({Vec3(-h.x(), -h.y(), h.z()), Vec3(2 * h.x(), 0, 0), Vec3(0, 2 * h.y(), 0), -Vec3::UnitZ(), {}});
    patches.push_back({lo, Vec3(2 * h.x(), 0, 0), Vec3(0, 2 * h.y(), 0), Vec3::UnitZ(), {}});
    patches.push_back({Vec3(h.x(), -h.y(), -h.z()), Vec3(0, 0, 2 * h.z()), Vec3(0, 2 * h.y(), 0), -Vec3::UnitX(), {}});
    patches.push_back({lo, Vec3(0, 0, 2 * h.z()), Vec3(0, 2 * h.y(), 0), Vec3::UnitX(), {}});
    patches.push_back({Vec3(-h.x(), h.y(), -h.z()), Vec3(2 * h.x(), 0, 0), Vec3(0, 0, 2 * h.z()), -Vec3::UnitY(), {}});
    patches.push_back({lo, Vec3(2 * h.x(), 0, 0), Vec3(0, 0, 2 * h.z()), Vec3::UnitY(), {}});

    // A few boxes standing on the floor between the camera path and the walls.
    const double box_half   = 0.35;
    const double box_height = std::min(0.8, h.y());
    for (const double angle : {0.6, 2.7, 4.5}) {
        const Vec3   dir(std::cos(angle), 0.0, std::sin(angle));
        const double reach = std::min(h.x() / std::max(std::abs(dir.x()), 1e-9),
                                      h.z() / std::max(std::abs(dir.z()), 1e-9));
        const double r     = 0.5 * (cfg.path_radius + 0.6 + reach - box_half);
        if (r - box_half < cfg.path_radius + 0.5) {
            continue;
        }
        const Vec3 c = dir * r;
        add_box(patches, Vec3(c.x() - box_half, h.y() - box_height, c.z() - box_half),
                Vec3(c.x() + box_half, h.y(), c.z() + box_half));
    }

    double total_area = 0.0;
    for (auto &p : patches) {
        p.base_color = Vec3(0.2 + 0.7 * uni(rng), 0.2 + 0.7 * uni(rng), 0.2 + 0.7 * uni(rng));
        total_area += p.area();
    }

    SyntheticScene scene;
    scene.intrinsics = cfg.intrinsics;
    scene.surfels.reserve(static_cast<std::size_t>(cfg.surfel_count));
    int remaining = cfg.surfel_count;
    for (std::size_t pi = 0; pi < patches.size(); ++pi) {
        const Patch &p = patches[pi];
        const int    n = pi + 1 == patches.size()
                             ? remaining
                             : std::min(remaining, static_cast<int>(std::lround(cfg.surfel_count * p.area() / total_area)));
        remaining -= n;
        if (n == 0) {
            continue;
        }
        const double spacing = std::sqrt(p.area() / n);
        const double cell    = 0.5;
        const Vec3   un      = p.u.normalized();
        for (int k = 0; k < n; ++k) {
            const double a    = uni(rng);
            const double b    = uni(rng);
            const double spin = 2.0 * std::numbers::pi * uni(rng);
            const Vec3   x0   = std::cos(spin) * un + std::sin(spin) * p.normal.cross(un);
            Mat3         rot;
            rot.col(0) = x0;
            rot.col(1) = p.normal.cross(x0);
            rot.col(2) = p.normal;

            const long checker = static_cast<long>(std::floor(a * p.u.norm() / cell)) +
                                 static_cast<long>(std::floor(b * p.v.norm() / cell));
            Vec3 color = p.base_color * ((checker & 1) != 0 ? 0.6 : 1.0);
            for (int c = 0; c < 3; ++c) {
                color[c] = std::clamp(color[c] + 0.03 * gauss(rng), 0.0, 1.0);
            }

            Surfel s;
            s.mean     = to_float(p.origin + a * p.u + b * p.v);
            const auto q = UnitQuaternion::from_matrix(rot).eigen();
            s.rotation = UnitQuaternion(Eigen::Quaterniond(to_float(q.w()), to_float(q.x()), to_float(q.y()),
                                                            to_float(q.z())))
                             .canonical();
            s.scale    = Vec2(to_float(0.6 * spacing * (0.8 + 0.4 * uni(rng))),
                              to_float(0.6 * spacing * (0.8 + 0.4 * uni(rng))));
            s.opacity  = to_float(0.85 + 0.13 * uni(rng));
            s.color    = to_float(color);
            scene.surfels.push_back(s);
        }
    }

    const int    n_frames = cfg.frame_count;
    const double sweep    = 2.0 * std::numbers::pi * cfg.revolutions;
    for (int f = 0; f < n_frames; ++f) {
        const double theta = sweep * f / (n_frames - 1);
        const Vec3   pos(cfg.path_radius * std::cos(theta), 0.1 * std::sin(3.0 * theta),
                         cfg.path_radius * std::sin(theta));
        const double yaw = theta + 0.15 * std::sin(2.0 * theta);
        const Vec3   fwd(std::cos(yaw), 0.08 * std::sin(5.0 * theta), std::sin(yaw));
        scene.trajectory.push_back(look_pose(pos, fwd));
        scene.timestamps.push_back(f / cfg.frame_rate);
    }

    for (int f = 0; f < n_frames; ++f) {
        const bool sees_any = std::any_of(scene.surfels.begin(), scene.surfels.end(), [&](const Surfel &s) {
            return project_surfel(s, scene.trajectory[f], scene.intrinsics).status == Footprint::Status::visible;
        });
        if (!sees_any) {
            throw DegenerateConfigurationError("frame " + std::to_string(f) + " sees no surfel");
        }
    }
    return scene;
}

NoiseModel NoiseModel::noiseless() {
    NoiseModel n;
    n.pose_rot_std           = 0.0;
    n.pose_trans_std         = 0.0;
    n.pose_rot_bias_std      = 0.0;
    n.pose_trans_bias_std    = 0.0;
    n.per_submap_scale_drift = 1.0;
    n.point_noise_std        = 0.0;
    return n;
}

void NoiseModel::validate() const {
    for (const double v : {pose_rot_std, pose_trans_std, pose_rot_bias_std, pose_trans_bias_std,
                           point_noise_std, context_warmup}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ConfigError("noise standard deviations must be finite and non-negative");
        }
    }
    if (!(per_submap_scale_drift > 0.0) || !std::isfinite(per_submap_scale_drift)) {
        throw ConfigError("per-submap scale drift must be positive");
    }
    if (!(context_horizon > 0.0)) {
        throw ConfigError("context horizon must be positive");
    }
}

double NoiseModel::profile(int m) const {
    const double r = m / context_horizon;
    return 1.0 + context_warmup / m + r * r;
}

Oracle::Oracle(SyntheticScene scene, NoiseModel noise, OracleConfig cfg)
    : scene_(std::move(scene)), noise_(noise), cfg_(cfg) {
    noise_.validate();
    scene_.intrinsics.validate();
    const int n = scene_.frame_count();
    gt_.resize(static_cast<std::size_t>(n));
    dominant_.resize(static_cast<std::size_t>(n));
    visible_.resize(static_cast<std::size_t>(n));
    for (int f = 0; f < n; ++f) {
        const Sim3Transform pose(scene_.trajectory[f]);
        gt_[f]           = render(scene_.surfels, pose, scene_.intrinsics);
        dominant_[f]     = dominant_surfel(scene_.surfels, pose, scene_.intrinsics);
        const auto contr = max_contribution(scene_.surfels, pose, scene_.intrinsics, {});
        for (std::size_t i = 0; i < contr.size(); ++i) {
            if (contr[i] >= cfg_.visibility_floor) {
                visible_[f].push_back(static_cast<int>(i));
            }
        }
    }

    std::mt19937_64                  rng(mix({noise_.rng_seed, kBias}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int k = 0; k < 3; ++k) {
        bias_rot_[k] = noise_.pose_rot_bias_std * gauss(rng);
    }
    for (int k = 0; k < 3; ++k) {
        bias_trans_[k] = noise_.pose_trans_bias_std * gauss(rng);
    }
}

const RenderBuffers &Oracle::ground_truth(int frame_id) const { return gt_.at(static_cast<std::size_t>(frame_id)); }

double Oracle::scale_state(int submap_id) const { return std::pow(noise_.per_submap_scale_drift, submap_id); }

SubmapState Oracle::submap_state(int submap_id, int origin_frame) const {
    return {submap_id, origin_frame, scale_state(submap_id)};
}

FramePrediction Oracle::observe(int frame_id, double scale, std::uint64_t stream) const {
    const CameraIntrinsics &intr = scene_.intrinsics;
    const RenderBuffers    &gt   = gt_[frame_id];
    const auto             &dom  = dominant_[frame_id];
    const UnitQuaternion    world_to_cam = scene_.trajectory[frame_id].rotation.inverse();

    std::mt19937_64                  rng(mix({noise_.rng_seed, stream, static_cast<std::uint64_t>(frame_id)}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double                     sigma = noise_.point_noise_std * scale;

    FramePrediction out;
    out.frame_id = frame_id;
    for (int y = 0; y < intr.height; ++y) {
        for (int x = 0; x < intr.width; ++x) {
            const int    pix = y * intr.width + x;
            const double acc = gt.accumulation.at(x, y);
            if (!(acc > 0.5) || dom[pix] < 0) {
                continue;
            }
            const double z = gt.depth.at(x, y) / acc;
            Vec3 p(scale * (x - intr.cx) / intr.fx * z, scale * (y - intr.cy) / intr.fy * z, scale * z);
            if (sigma > 0.0) {
                p += sigma * Vec3(gauss(rng), gauss(rng), gauss(rng));
            }
            if (!(p.z() > 0.0)) {
                continue;
            }
            SurfelAttributes a;
            a.rotation = world_to_cam * scene_.surfels[dom[pix]].rotation;
            a.scale    = Vec2::Constant(cfg_.predicted_footprint_px * p.z() / intr.fx);
            a.opacity  = cfg_.predicted_opacity;
            for (int c = 0; c < 3; ++c) {
                a.color[c] = std::clamp(gt.color.at(x, y, c) / acc, 0.0, 1.0);
            }
            out.points_cam.push_back(p);
            out.attrs.push_back(a);
            out.pixels.push_back(pix);
        }
    }
    return out;
}

FramePrediction Oracle::predict_frame(int frame_id, const SubmapState &state) const {
    if (frame_id < 0 || frame_id >= frame_count() || state.origin_frame < 0 || state.origin_frame > frame_id) {
        throw ConfigError("frame " + std::to_string(frame_id) + " outside trajectory or before its submap origin");
    }
    const double scale = state.scale_state;
    const auto   o     = static_cast<std::uint64_t>(state.origin_frame);

    // Replay the random walk from the origin so the call stays pure.
    Sim3Transform walk;
    bool          noisy = false;
    for (int m = 1; m <= frame_id - state.origin_frame; ++m) {
        std::mt19937_64                  rng(mix({noise_.rng_seed, kPoseWalk, o, o + m}));
        std::normal_distribution<double> gauss(0.0, 1.0);
        const double                     g = noise_.profile(m);
        Sim3Tangent                      xi = Sim3Tangent::Zero();
        for (int k = 0; k < 3; ++k) {
            xi[k] = scale * (bias_trans_[k] + g * noise_.pose_trans_std * gauss(rng));
        }
        for (int k = 0; k < 3; ++k) {
            xi[3 + k] = bias_rot_[k] + g * noise_.pose_rot_std * gauss(rng);
        }
        if (!xi.isZero(0.0)) {
            walk  = sim3_exp(xi) * walk;
            noisy = true;
        }
    }

    const SE3Pose rel = scaled_relative(scene_.trajectory[state.origin_frame], scene_.trajectory[frame_id], scale);
    FramePrediction out = observe(frame_id, scale, mix({kPoints, o}));
    out.pose_in_submap  = noisy ? walk.se3() * rel : rel;
    return out;
}

FramePrediction Oracle::reinterpret_frame(int frame_id, const SubmapDescriptor &descriptor) const {
    if (frame_id < 0 || frame_id >= frame_count()) {
        throw ConfigError("frame " + std::to_string(frame_id) + " outside trajectory");
    }
    const int best = most_covisible(frame_id, descriptor.first_frame, descriptor.last_frame);
    if (covisibility(frame_id, best) < cfg_.covisibility_threshold) {
        throw InsufficientOverlapError("frame " + std::to_string(frame_id) + " does not overlap submap " +
                                       std::to_string(descriptor.submap_id));
    }
    const double scale = descriptor.scale_state;
    const auto   sid   = static_cast<std::uint64_t>(descriptor.submap_id);

    std::mt19937_64                  rng(mix({noise_.rng_seed, kRelocPose, sid, static_cast<std::uint64_t>(frame_id)}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Sim3Tangent                      xi = Sim3Tangent::Zero();
    for (int k = 0; k < 3; ++k) {
        xi[k] = scale * noise_.pose_trans_std * gauss(rng);
    }
    for (int k = 0; k < 3; ++k) {
        xi[3 + k] = noise_.pose_rot_std * gauss(rng);
    }

    const SE3Pose   rel = scaled_relative(descriptor.anchor_pose_world, scene_.trajectory[frame_id], scale);
    FramePrediction out = observe(frame_id, scale, mix({kRelocPoints, sid}));
    out.pose_in_submap  = xi.isZero(0.0) ? rel : sim3_exp(xi).se3() * rel;
    return out;
}

Eigen::VectorXd Oracle::frame_feature(int frame_id) const {
    const SE3Pose &p = scene_.trajectory.at(static_cast<std::size_t>(frame_id));
    return make_feature(p.rotation.rotate(Vec3::UnitZ()), p.translation, cfg_);
}

SubmapDescriptor Oracle::describe(const SubmapState &state, int last_frame) const {
    if (state.origin_frame < 0 || last_frame < state.origin_frame || last_frame >= frame_count()) {
        throw ConfigError("descriptor frame range outside trajectory");
    }
    Vec3 dir = Vec3::Zero();
    Vec3 pos = Vec3::Zero();
    for (int f = state.origin_frame; f <= last_frame; ++f) {
        dir += scene_.trajectory[f].rotation.rotate(Vec3::UnitZ());
        pos += scene_.trajectory[f].translation;
    }
    pos /= (last_frame - state.origin_frame + 1);

    SubmapDescriptor d;
    d.submap_id         = state.submap_id;
    d.first_frame       = state.origin_frame;
    d.last_frame        = last_frame;
    d.anchor_pose_world = scene_.trajectory[state.origin_frame];
    d.scale_state       = state.scale_state;
    d.feature           = make_feature(dir, pos, cfg_);
    return d;
}

double Oracle::covisibility(int a, int b) const {
    const auto &va = visible_.at(static_cast<std::size_t>(a));
    const auto &vb = visible_.at(static_cast<std::size_t>(b));
    std::size_t common = 0;
    auto        ia     = va.begin();
    auto        ib     = vb.begin();
    while (ia != va.end() && ib != vb.end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            ++common;
            ++ia;
            ++ib;
        }
    }
    const std::size_t uni = va.size() + vb.size() - common;
    return uni == 0 ? 0.0 : static_cast<double>(common) / static_cast<double>(uni);
}

int Oracle::most_covisible(int frame_id, int first, int last) const {
    int    best   = first;
    double best_c = -1.0;
    for (int f = first; f <= last; ++f) {
        const double c = covisibility(frame_id, f);
        if (c > best_c) {
            best_c = c;
            best   = f;
        }
    }
    return best;
}

} // namespace surfelslam
