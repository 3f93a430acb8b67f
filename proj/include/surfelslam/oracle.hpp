// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scenes and a simulated feed-forward frontend. The oracle renders
// ground truth, then hands out per-frame predictions whose poses drift inside
// a submap and whose scale changes from one submap to the next.
//
#pragma once

#include "surfelslam/lie.hpp"
#include "surfelslam/raster.hpp"

#include <cstdint>
#include <vector>

namespace surfelslam {

struct SceneConfig {
    /// Half extents of the box-shaped room; y points down.
    Vec3             room_half_extent{4.0, 1.6, 3.5};
    int              surfel_count{5000};
    int              frame_count{200};
    /// Radius of the circular camera path around the room center.
    double           path_radius{1.0};
    double           revolutions{1.05};
    double           frame_rate{30.0};
    std::uint64_t    seed{1};
    CameraIntrinsics intrinsics{50.0, 50.0, 32.0, 24.0, 64, 48};

    void validate() const;
};

struct SyntheticScene {
    std::vector<Surfel>  surfels;
    std::vector<double>  timestamps;
    std::vector<SE3Pose> trajectory; // camera -> world
    CameraIntrinsics     intrinsics;

    int frame_count() const { return static_cast<int>(trajectory.size()); }
};

/// Throws ConfigError for infeasible configurations and
/// DegenerateConfigurationError when a generated view sees no surfel.
SyntheticScene generate_scene(const SceneConfig &cfg);

/// Error model of the simulated frontend.
///
/// Within a submap the pose error is a left-composed random walk. The step at
/// the m-th frame after the origin is
///
///   xi_m = bias + profile(m) * N(0, diag(trans_std^2, rot_std^2))
///   profile(m) = 1 + warmup / m + (m / horizon)^2
///
/// so the first frames after a context reset and very long contexts are both
/// less accurate. `bias` is drawn once per seed.
struct NoiseModel {
    double        pose_rot_std{0.002};
    double        pose_trans_std{0.002};
    double        pose_rot_bias_std{0.003};
    double        pose_trans_bias_std{0.002};
    double        per_submap_scale_drift{1.02};
    double        point_noise_std{0.002};
    double        context_warmup{2.0};
    double        context_horizon{12.0};
    std::uint64_t rng_seed{0};

    static NoiseModel noiseless();
    /// Throws ConfigError.
    void   validate() const;
    double profile(int m) const;
};

struct SurfelAttributes {
    UnitQuaternion rotation; // camera frame
    Vec2           scale{Vec2::Ones()};
    double         opacity{1.0};
    Vec3           color{Vec3::Zero()};
    double         confidence{1.0};
};

struct FramePrediction {
    int                           frame_id{0};
    SE3Pose                       pose_in_submap; // camera -> submap origin
    std::vector<Vec3>             points_cam;
    std::vector<SurfelAttributes> attrs;
    /// Row-major pixel index each point was predicted for.
    std::vector<int>              pixels;
};

struct SubmapState {
    int    submap_id{0};
    int    origin_frame{0};
    double scale_state{1.0};
};

struct SubmapDescriptor {
    int     submap_id{0};
    int     first_frame{0};
    int     last_frame{0};
    SE3Pose anchor_pose_world; // ground truth, only the oracle reads it
    double  scale_state{1.0};
    Eigen::VectorXd feature;
};

struct OracleConfig {
    /// Isotropic predicted surfel std, in pixels at the predicted depth.
    double predicted_footprint_px{1.0};
    double predicted_opacity{0.95};
    /// Surfels whose blending weight reaches this in a view count as visible.
    double visibility_floor{0.05};
    /// Jaccard overlap of visible sets required for relocalization.
    double covisibility_threshold{0.3};
    /// Viewing-direction quantization steps per unit and position cell size.
    double direction_quantization{4.0};
    double position_cell{1.0};
};

class Oracle {
public:
    /// Renders every ground-truth view up front.
    Oracle(SyntheticScene scene, NoiseModel noise, OracleConfig cfg = {});

    const SyntheticScene &scene() const { return scene_; }
    const NoiseModel     &noise() const { return noise_; }
    const OracleConfig   &config() const { return cfg_; }
    int                   frame_count() const { return scene_.frame_count(); }

    /// Ground-truth render at the frame's true pose.
    const RenderBuffers &ground_truth(int frame_id) const;

    /// The scale the frontend works at inside submap `submap_id`.
    double      scale_state(int submap_id) const;
    SubmapState submap_state(int submap_id, int origin_frame) const;

    FramePrediction predict_frame(int frame_id, const SubmapState &state) const;

    /// Re-predicts `frame_id` in the coordinate frame and scale of a past submap.
    /// Throws InsufficientOverlapError when no frame of that submap is covisible enough.
    FramePrediction reinterpret_frame(int frame_id, const SubmapDescriptor &descriptor) const;

    SubmapDescriptor describe(const SubmapState &state, int last_frame) const;
    Eigen::VectorXd  frame_feature(int frame_id) const;

    /// Jaccard overlap of the ground-truth visible surfel sets of two frames.
    double covisibility(int a, int b) const;
    /// Frame of [first, last] with the largest covisibility with `frame_id`.
    int    most_covisible(int frame_id, int first, int last) const;

private:
    FramePrediction observe(int frame_id, double scale, std::uint64_t stream) const;

    SyntheticScene                    scene_;
    NoiseModel                        noise_;
    OracleConfig                      cfg_;
    std::vector<RenderBuffers>        gt_;
    std::vector<std::vector<int>>     dominant_;
    std::vector<std::vector<int>>     visible_;
    Vec3                              bias_rot_{Vec3::Zero()};
    Vec3                              bias_trans_{Vec3::Zero()};
};

} // namespace surfelslam
