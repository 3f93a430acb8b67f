// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Orchestration: tracking with loop closure and pose-graph optimization on one
// thread, incremental mapping on another.
//
#pragma once

#include "surfelslam/loop_closure.hpp"
#include "surfelslam/mapper.hpp"
#include "surfelslam/oracle.hpp"
#include "surfelslam/pose_graph.hpp"
#include "surfelslam/tracker.hpp"

#include <functional>
#include <vector>

namespace surfelslam {

struct TrackingConfig {
    int          clip_length{8};
    double       sequential_information{1.0};
    double       inter_submap_information{1.0};
    bool         loop_closure{true};
    bool         mad_rejection{false};
    LoopConfig   loop;
    SolverConfig solver;
};

struct LoopRecord {
    LoopCandidate candidate;
    double        scale{1.0};
};

struct TrackingResult {
    ChainedTrajectory           pre_pgo;  // plain chaining, never optimized
    ChainedTrajectory           post_pgo; // final graph estimate
    std::vector<Sim3Constraint> edges;
    std::vector<LoopRecord>     loops;
    std::vector<double>         inter_submap_scales;
    int                         pgo_runs{0};
    std::size_t                 relocalization_failures{0};
};

/// Receives keyframes as their owning submap is sealed, and the pose updates of
/// every pose-graph solve. Either callback may be empty.
struct TrackingSink {
    std::function<void(int frame_id, const Sim3Transform &pose, const FramePrediction &prediction)> keyframe;
    std::function<void(const std::vector<PoseUpdate> &updates)>                                    correction;
};

/// Streams the oracle's frames through submap tracking, loop detection and
/// pose-graph optimization (run after every submap that adds a loop edge).
TrackingResult run_tracking(const Oracle &oracle, const TrackingConfig &cfg, const TrackingSink &sink = {});

/// Converts keyframe poses to timestamped poses using the scene's timestamps.
std::vector<std::pair<double, Sim3Transform>> timed_poses(const ChainedTrajectory &trajectory,
                                                          const SyntheticScene &scene);

/// Sim(3)-aligned ATE of a chained trajectory against the scene's ground truth.
double trajectory_ate(const ChainedTrajectory &trajectory, const SyntheticScene &scene);

struct PipelineResult {
    TrackingResult  tracking;
    GlobalSurfelMap map;
    MapperStats     mapper_stats;
    double          ate_pre_pgo{0.0};
    double          ate_post_pgo{0.0};
};

/// Runs tracking and mapping as two threads joined by a bounded queue.
PipelineResult run_pipeline(const Oracle &oracle, const TrackingConfig &tracking, const MapperConfig &mapping,
                            std::size_t queue_capacity = 8);

} // namespace surfelslam
