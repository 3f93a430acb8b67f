// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Entry points behind the command-line subcommands. Errors propagate as
// exceptions; the CLI maps ConfigError and IoError to exit code 2 and every
// other failure to exit code 3.
//
// Scene directory layout:
//
//   config.txt          options the scene was generated with
//   scene.ply           ground-truth surfels
//   trajectory_gt.txt   TUM trajectory
//   intrinsics.txt      fx fy cx cy width height depth_factor
//   rgb/NNNNNN.png      ground-truth color
//   depth/NNNNNN.png    ground-truth depth (16-bit, 0 = none)
//   pred/NNNNNN.bin     frontend prediction of the frame's owning submap
//
#pragma once

#include "surfelslam/config.hpp"
#include "surfelslam/io.hpp"
#include "surfelslam/metrics.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace surfelslam {

void cmd_simulate(const RunConfig &cfg, const std::filesystem::path &out_dir);

/// Reads the scene's config.txt and applies `overrides` on top. Options that
/// define the scene itself (scene., camera., noise., oracle.) must not change.
RunConfig scene_run_config(const std::filesystem::path &scene_dir,
                           const std::map<std::string, std::string> &overrides);

/// Rebuilds the oracle from the scene directory and checks it against the
/// stored trajectory and intrinsics. Throws IoError on mismatch.
Oracle load_oracle(const std::filesystem::path &scene_dir, const RunConfig &cfg);

struct ViewMetrics {
    int    frame_id{0};
    Psnr   psnr;
    double ssim{0.0};
    double depth_l1{0.0};
};

struct MetricReport {
    std::string              scene;
    std::uint64_t            seed{0};
    double                   ate_rmse{0.0};
    std::vector<ViewMetrics> views;
    Psnr                     mean_psnr; // over non-exact views; exact when all are
    double                   mean_ssim{0.0};
    double                   mean_depth_l1{0.0};
    std::size_t              num_surfels{0};
    std::optional<double>    fps;

    std::string csv_header() const;
    std::string csv_row() const;
};

struct RunOutputs {
    PipelineResult pipeline;
    MetricReport   report;
};

/// Writes trajectory_pre_pgo.txt, trajectory_post_pgo.txt, map.ply,
/// constraints.g2o, renders/{rgb,depth}, report.csv, views.csv and manifest.txt.
RunOutputs cmd_run(const std::filesystem::path &scene_dir, const RunConfig &cfg, const std::filesystem::path &out_dir);

/// Metrics of rendered images (renders_dir/{rgb,depth}) against the scene's
/// ground truth; frames are matched by file name.
MetricReport evaluate(const std::vector<StampedPose> &estimate, const std::vector<StampedPose> &gt,
                      const std::filesystem::path &renders_dir, const std::filesystem::path &scene_dir,
                      DepthAlignment alignment);

MetricReport cmd_evaluate(const std::filesystem::path &trajectory, const std::filesystem::path &gt_trajectory,
                          const std::filesystem::path &renders_dir, const std::filesystem::path &scene_dir,
                          const std::filesystem::path &report_csv, bool sim3_trajectory, DepthAlignment alignment);

/// Renders rgb/, depth/ and accumulation/ PNGs, one per pose, named by pose index.
void cmd_render(const std::filesystem::path &map_ply, const std::filesystem::path &poses,
                const std::filesystem::path &intrinsics, const std::filesystem::path &out_dir, bool sim3_poses,
                const RasterConfig &raster = {});

/// Writes a render's color and depth (zero where accumulation <= 0.5).
void write_render(const std::filesystem::path &out_dir, int index, const RenderBuffers &buffers, double depth_factor);

SolveReport cmd_optimize_graph(const std::filesystem::path &in, const std::filesystem::path &out,
                               const SolverConfig &solver);

} // namespace surfelslam
