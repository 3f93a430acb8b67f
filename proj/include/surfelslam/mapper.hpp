// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Global surfel map built from per-frame predictions. Every surfel stays
// bound to the keyframe it came from so pose corrections can move it rigidly.
//
#pragma once

#include "surfelslam/oracle.hpp"
#include "surfelslam/pose_graph.hpp"
#include "surfelslam/raster.hpp"

#include <map>
#include <span>
#include <vector>

namespace surfelslam {

class GlobalSurfelMap {
public:
    const std::vector<Surfel>                    &surfels() const { return surfels_; }
    const std::map<int, std::vector<int>>        &keyframe_index() const { return index_; }
    const std::map<int, Sim3Transform>           &keyframe_poses() const { return poses_; }
    std::size_t                                   size() const { return surfels_.size(); }

    void set_keyframe_pose(int keyframe_id, const Sim3Transform &pose);
    /// Appends surfels and binds them to `keyframe_id`, which must have a pose.
    void insert(std::span<const Surfel> surfels, int keyframe_id);
    /// Removes the listed surfel indices and rebuilds the keyframe index.
    void remove(std::span<const int> indices);
    /// Direct attribute access; binding fields must not be changed through it.
    Surfel &surfel(std::size_t i) { return surfels_[i]; }

    /// Throws ConfigError when the binding index does not cover every surfel exactly once.
    void check_bindings() const;

private:
    void rebuild_index();

    std::vector<Surfel>             surfels_;
    std::map<int, std::vector<int>> index_;
    std::map<int, Sim3Transform>    poses_;
};

/// Per-pixel surfels of one prediction, in camera coordinates.
struct SurfelGrid {
    int                 width{0};
    int                 height{0};
    std::vector<Surfel> cells;
    std::vector<char>   valid;
};

SurfelGrid make_grid(const FramePrediction &prediction, const CameraIntrinsics &intr);

struct VoxelizationConfig {
    /// Maximum camera-depth range of a mergeable 2x2 block. Non-positive
    /// values select `depth_ratio` times the median block depth.
    double depth_threshold{0.0};
    double depth_ratio{0.05};
};

/// Merges every 2x2 block whose four cells are valid and whose depth range is
/// within the threshold; other valid cells pass through.
std::vector<Surfel> adaptive_voxelize(const SurfelGrid &grid, const VoxelizationConfig &cfg = {});

struct FusionConfig {
    double accumulation_threshold{0.5};
    /// A pixel is erroneous when its mean absolute RGB error or its relative
    /// depth error exceeds these.
    double prune_rgb_error{0.2};
    double prune_depth_error{0.1};
    /// Surfels reaching this blending weight on an erroneous pixel are removed.
    double prune_contribution_floor{0.1};
};

struct FusionStats {
    std::size_t candidates{0};
    std::size_t inserted{0};
};

/// Moves camera-frame surfels into the world with the keyframe pose and inserts
/// those landing on pixels where the current map's accumulation is below the threshold.
FusionStats fuse(GlobalSurfelMap &map, std::span<const Surfel> camera_surfels, int keyframe_id,
                 const Sim3Transform &keyframe_pose, const CameraIntrinsics &intr, const FusionConfig &cfg = {},
                 const RasterConfig &raster = {});

/// Depth image (camera units) of a prediction; zero where nothing was predicted.
Image prediction_depth(const FramePrediction &prediction, const CameraIntrinsics &intr);

/// Removes surfels contributing to pixels with large RGB or depth error at the
/// keyframe's pose. `depth` may be empty to skip the depth test. Returns the removed count.
std::size_t prune(GlobalSurfelMap &map, int keyframe_id, const Image &rgb, const Image &depth,
                  const CameraIntrinsics &intr, const FusionConfig &cfg = {}, const RasterConfig &raster = {});

struct RefineConfig {
    int    iterations{20};
    int    window{4};
    double initial_step{1.0};
    int    max_halvings{12};
    double mse_weight{1.0};
    double depth_weight{0.1};
};

struct RefineView {
    int          keyframe_id{0};
    const Image *rgb{nullptr};
    const Image *depth{nullptr};
};

struct RefineReport {
    std::vector<double> loss; // initial value, then after every accepted step
    double              psnr_before{0.0};
    double              psnr_after{0.0};
    int                 accepted_steps{0};
};

/// Diagonally preconditioned gradient descent with backtracking on the color
/// and opacity of surfels bound to the views' keyframes.
RefineReport refine(GlobalSurfelMap &map, std::span<const RefineView> views, const CameraIntrinsics &intr,
                    const RefineConfig &cfg = {}, const RasterConfig &raster = {});

/// Applies a left correction per keyframe to its surfels and pose. Throws
/// ConfigError when a bound keyframe has no delta.
void loop_correct(GlobalSurfelMap &map, const std::map<int, Sim3Transform> &deltas);

struct MapperConfig {
    VoxelizationConfig voxelization;
    FusionConfig       fusion;
    RefineConfig       refine;
    RasterConfig       raster;
    /// Only every n-th frame is handed to the mapper.
    int                keyframe_stride{1};
    bool               voxelize{true};
    bool               prune{true};
    bool               refine_enabled{true};
};

/// One keyframe's worth of frontend output.
struct KeyframePacket {
    int             keyframe_id{0};
    Sim3Transform   pose;
    FramePrediction prediction;
    Image           rgb;
};

struct MapperStats {
    std::size_t fused{0};
    std::size_t pruned{0};
    std::size_t corrections{0};
};

/// Backend: prune, fuse, and refine per keyframe; rigid correction on demand.
class Mapper {
public:
    Mapper(CameraIntrinsics intr, MapperConfig cfg);

    void process(KeyframePacket packet);
    void apply_correction(std::span<const PoseUpdate> updates);

    const GlobalSurfelMap &map() const { return map_; }
    const MapperStats     &stats() const { return stats_; }

private:
    struct Observation {
        Image rgb;
        Image depth;
    };

    CameraIntrinsics           intr_;
    MapperConfig               cfg_;
    GlobalSurfelMap            map_;
    std::map<int, Observation> observations_;
    std::vector<int>           recent_;
    MapperStats                stats_;
};

} // namespace surfelslam
