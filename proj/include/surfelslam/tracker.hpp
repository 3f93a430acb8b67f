// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Submap partitioning and chaining. Consecutive submaps share one frame: the
// last frame of submap k is predicted again as the origin of submap k + 1,
// and from then on belongs to k + 1.
//
#pragma once

#include "surfelslam/oracle.hpp"
#include "surfelslam/pose_graph.hpp"

#include <span>
#include <vector>

namespace surfelslam {

struct Submap {
    int                  submap_id{0};
    std::vector<int>     frame_ids;
    std::vector<SE3Pose> local_poses; // frame -> submap origin
    SubmapDescriptor     descriptor;
    int                  overlap_frame_id{0};

    /// Frames whose graph node this submap owns: all but the overlap frame,
    /// unless this is the final submap.
    std::span<const int> owned_frames(bool is_last) const;
    const SE3Pose       &local_pose(int frame_id) const;
};

/// ceil((frame_count - 1) / (clip_length - 1)) frame ranges with one frame of
/// overlap. Throws ConfigError for clip_length < 2 or fewer than 2 frames.
std::vector<std::vector<int>> partition_frames(int frame_count, int clip_length);

/// A submap together with every prediction made for it.
struct TrackedSubmap {
    Submap                       submap;
    std::vector<FramePrediction> predictions;
};

TrackedSubmap track_submap(const Oracle &oracle, int submap_id, std::span<const int> frame_ids);

/// Runs partition_frames + track_submap over the whole stream.
std::vector<TrackedSubmap> partition(const Oracle &oracle, int clip_length);

/// Transform taking submap a's origin coordinates into submap b's, from the two
/// predictions of their shared frame: L_b * S(s) * L_a^-1 with s the relative
/// scale of b's points over a's.
Sim3Transform inter_submap_constraint(const FramePrediction &pred_a, const FramePrediction &pred_b,
                                      bool mad_rejection = false);

/// World poses of every owned frame. constraints[k] links submap k to k + 1.
/// Throws ConfigError when a constraint is missing.
ChainedTrajectory chain(std::span<const Submap> submaps, std::span<const Sim3Transform> constraints);

} // namespace surfelslam
