// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "surfelslam/tracker.hpp"

#include "surfelslam/errors.hpp"
#include "surfelslam/loop_closure.hpp"

#include <algorithm>
#include <string>

namespace surfelslam {

std::span<const int> Submap::owned_frames(bool is_last) const {
    std::span<const int> all(frame_ids);
    return is_last ? all : all.first(all.size() - 1);
}

const SE3Pose &Submap::local_pose(int frame_id) const {
    const auto it = std::find(frame_ids.begin(), frame_ids.end(), frame_id);
    if (it == frame_ids.end()) {
        throw ConfigError("frame " + std::to_string(frame_id) + " not in submap " + std::to_string(submap_id));
    }
    return local_poses[static_cast<std::size_t>(it - frame_ids.begin())];
}

std::vector<std::vector<int>> partition_frames(int frame_count, int clip_length) {
    if (clip_length < 2) {
        throw ConfigError("clip length must be at least 2");
    }
    if (frame_count < 2) {
        throw ConfigError("stream needs at least 2 frames");
    }
    std::vector<std::vector<int>> out;
    for (int start = 0; start < frame_count - 1; start += clip_length - 1) {
        const int        end = std::min(start + clip_length - 1, frame_count - 1);
        std::vector<int> ids;
        for (int f = start; f <= end; ++f) {
            ids.push_back(f);
        }
        out.push_back(std::move(ids));
    }
    return out;
}

TrackedSubmap track_submap(const Oracle &oracle, int submap_id, std::span<const int> frame_ids) {
    if (frame_ids.empty()) {
        throw ConfigError("submap without frames");
    }
    const SubmapState state = oracle.submap_state(submap_id, frame_ids.front());
    TrackedSubmap     out;
    out.submap.submap_id = submap_id;
    out.submap.frame_ids.assign(frame_ids.begin(), frame_ids.end());
    for (const int f : frame_ids) {
        out.predictions.push_back(oracle.predict_frame(f, state));
        out.submap.local_poses.push_back(out.predictions.back().pose_in_submap);
    }
    out.submap.overlap_frame_id = frame_ids.back();
    out.submap.descriptor       = oracle.describe(state, frame_ids.back());
    return out;
}

std::vector<TrackedSubmap> partition(const Oracle &oracle, int clip_length) {
    std::vector<TrackedSubmap> out;
    const auto                 ranges = partition_frames(oracle.frame_count(), clip_length);
    for (std::size_t k = 0; k < ranges.size(); ++k) {
        out.push_back(track_submap(oracle, static_cast<int>(k), ranges[k]));
    }
    return out;
}

Sim3Transform inter_submap_constraint(const FramePrediction &pred_a, const FramePrediction &pred_b,
                                      bool mad_rejection) {
    if (pred_a.frame_id != pred_b.frame_id) {
        throw ConfigError("inter-submap constraint needs two predictions of the same frame");
    }
    std::vector<Vec3> pb;
    std::vector<Vec3> pa;
    match_points(pred_b, pred_a, pb, pa);
    const double s = estimate_scale(pb, pa, mad_rejection);
    return Sim3Transform(pred_b.pose_in_submap) * Sim3Transform(s, UnitQuaternion(), Vec3::Zero()) *
           Sim3Transform(pred_a.pose_in_submap).inverse();
}

ChainedTrajectory chain(std::span<const Submap> submaps, std::span<const Sim3Transform> constraints) {
    if (constraints.size() + 1 < submaps.size()) {
        throw ConfigError("missing inter-submap constraint");
    }
    ChainedTrajectory out;
    Sim3Transform     origin;
    for (std::size_t k = 0; k < submaps.size(); ++k) {
        const Submap &s = submaps[k];
        if (k > 0) {
            origin = origin * constraints[k - 1].inverse();
        }
        const bool is_last = k + 1 == submaps.size();
        for (const int f : s.owned_frames(is_last)) {
            out.frame_ids.push_back(f);
            out.submap_ids.push_back(s.submap_id);
            out.poses.push_back(origin * Sim3Transform(s.local_pose(f)));
        }
    }
    return out;
}

} // namespace surfelslam
