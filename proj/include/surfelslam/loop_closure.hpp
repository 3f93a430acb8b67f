// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Loop candidates, relative scale between two interpretations of one frame,
// and the resulting Sim(3) loop constraints.
//
#pragma once

#include "surfelslam/oracle.hpp"
#include "surfelslam/pose_graph.hpp"

#include <span>
#include <vector>

namespace surfelslam {

struct LoopCandidate {
    int current_frame{0};
    int historical_frame{0};
    int historical_submap{0};
    int current_submap{0};
};

struct LoopConfig {
    /// Candidates must be at least this many submaps older than the current one.
    int    submap_gap{2};
    double feature_threshold{1.5};
    double min_covisibility{0.3};
    double information{0.5};
    /// One pass of 3-MAD outlier rejection before the final scale fit.
    bool   mad_rejection{false};
    /// Multiply the relative translation by the scale as well, so the
    /// measurement is S(s) T_j->i. When false the translation is left in the
    /// historical submap's units.
    bool   scale_translation{true};
};

/// Least-squares s minimizing sum |b_k - s a_k|^2.
/// Throws DegenerateConfigurationError for fewer than 10 pairs, mismatched
/// lengths, or a vanishing denominator, and RelocalizationInconsistencyError
/// when s is not positive.
double estimate_scale(std::span<const Vec3> points_b, std::span<const Vec3> points_a, bool mad_rejection = false);

/// Point pairs of two predictions of the same frame, matched by pixel.
void match_points(const FramePrediction &b, const FramePrediction &a, std::vector<Vec3> &points_b,
                  std::vector<Vec3> &points_a);

/// At most one candidate for `frame_id` against descriptors old enough,
/// gated on feature distance and ground-truth covisibility.
std::vector<LoopCandidate> detect(const Oracle &oracle, std::span<const SubmapDescriptor> bag,
                                  const SubmapDescriptor &current, int frame_id, const LoopConfig &cfg = {});

/// Loop edge from the current frame j to the historical frame i. The
/// relative pose is (T_j^a)^-1 T_i^a.
Sim3Constraint build_constraint(int current_frame, int historical_frame, const SE3Pose &reloc_pose,
                                const SE3Pose &hist_pose, double scale, const LoopConfig &cfg = {});

} // namespace surfelslam
