// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "surfelslam/commands.hpp"

#include "surfelslam/errors.hpp"
#include "surfelslam/io.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

namespace surfelslam {

namespace fs = std::filesystem;

namespace {

constexpr const char *kSceneKeyPrefixes[] = {"scene.", "camera.", "noise.", "oracle."};

bool defines_scene(const std::string &key) {
    return std::any_of(std::begin(kSceneKeyPrefixes), std::end(kSceneKeyPrefixes),
                       [&](const char *p) { return key.rfind(p, 0) == 0; });
}

void make_dirs(const fs::path &p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) {
        throw IoError("cannot create " + p.string() + ": " + ec.message());
    }
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path);
    if (!out || !(out << text)) {
        throw IoError("cannot write " + path.string());
    }
}

// Expected depth where the render is confident, zero elsewhere.
Image normalized_depth(const RenderBuffers &b) {
    Image d(b.depth.width(), b.depth.height(), 1);
    for (std::size_t k = 0; k < d.data().size(); ++k) {
        const double a = b.accumulation.data()[k];
        d.data()[k]    = a > 0.5 ? b.depth.data()[k] / a : 0.0;
    }
    return d;
}

std::vector<StampedPose> stamped(const std::vector<std::pair<double, Sim3Transform>> &poses) {
    std::vector<StampedPose> out;
    for (const auto &[t, p] : poses) {
        out.push_back({t, p});
    }
    return out;
}

Trajectory to_trajectory(const std::vector<StampedPose> &poses) {
    Trajectory out;
    for (const auto &p : poses) {
        out.push_back({p.timestamp, p.pose});
    }
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

} // namespace

void cmd_simulate(const RunConfig &cfg, const fs::path &out_dir) {
    cfg.validate();
    const Oracle oracle(generate_scene(cfg.scene), cfg.noise, cfg.oracle);
    const auto  &scene = oracle.scene();

    make_dirs(out_dir / "rgb");
    make_dirs(out_dir / "depth");
    make_dirs(out_dir / "pred");
    write_text(out_dir / "config.txt", format_options(cfg));
    write_ply(out_dir / "scene.ply", scene.surfels);
    write_intrinsics(out_dir / "intrinsics.txt", scene.intrinsics, cfg.depth_factor);

    std::vector<StampedPose> gt;
    for (int f = 0; f < scene.frame_count(); ++f) {
        gt.push_back({scene.timestamps[f], Sim3Transform(scene.trajectory[f])});
        const RenderBuffers &b = oracle.ground_truth(f);
        write_png_rgb(out_dir / "rgb" / frame_name(f, ".png"), b.color);
        write_png_depth(out_dir / "depth" / frame_name(f, ".png"), normalized_depth(b), cfg.depth_factor);
    }
    write_tum(out_dir / "trajectory_gt.txt", gt);

    const auto ranges = partition_frames(scene.frame_count(), cfg.tracking.clip_length);
    for (std::size_t k = 0; k < ranges.size(); ++k) {
        const TrackedSubmap ts    = track_submap(oracle, static_cast<int>(k), ranges[k]);
        const auto          owned = ts.submap.owned_frames(k + 1 == ranges.size());
        for (std::size_t t = 0; t < owned.size(); ++t) {
            write_prediction(out_dir / "pred" / frame_name(owned[t], ".bin"), ts.predictions[t]);
        }
    }
}

RunConfig scene_run_config(const fs::path &scene_dir, const std::map<std::string, std::string> &overrides) {
    RunConfig cfg;
    apply_options(cfg, parse_key_values(read_file(scene_dir / "config.txt")));
    const auto before = list_options(cfg);
    apply_options(cfg, overrides);
    const auto after = list_options(cfg);
    for (std::size_t k = 0; k < before.size(); ++k) {
        if (defines_scene(before[k].first) && before[k].second != after[k].second) {
            throw ConfigError("option '" + before[k].first + "' is fixed by the scene directory");
        }
    }
    cfg.validate();
    return cfg;
}

Oracle load_oracle(const fs::path &scene_dir, const RunConfig &cfg) {
    Oracle     oracle(generate_scene(cfg.scene), cfg.noise, cfg.oracle);
    const auto stored = read_tum(scene_dir / "trajectory_gt.txt");
    const auto &scene = oracle.scene();
    bool        same  = static_cast<int>(stored.size()) == scene.frame_count();
    for (std::size_t f = 0; same && f < stored.size(); ++f) {
        const auto &p = stored[f].pose;
        same          = stored[f].timestamp == scene.timestamps[f] && p.scale() == 1.0 &&
               p.translation() == scene.trajectory[f].translation &&
               p.rotation().eigen().coeffs() == scene.trajectory[f].rotation.eigen().coeffs();
    }
    const auto [intr, factor] = read_intrinsics(scene_dir / "intrinsics.txt");
    same = same && intr.fx == scene.intrinsics.fx && intr.fy == scene.intrinsics.fy && intr.cx == scene.intrinsics.cx &&
           intr.cy == scene.intrinsics.cy && intr.width == scene.intrinsics.width &&
           intr.height == scene.intrinsics.height && factor == cfg.depth_factor;
    if (!same) {
        throw IoError(scene_dir.string() + " does not match the scene its config.txt describes");
    }
    return oracle;
}

std::string MetricReport::csv_header() const { return "scene,seed,ate_rmse,psnr,ssim,lpips,depth_l1,num_surfels,fps\n"; }

std::string MetricReport::csv_row() const {
    return scene + "," + std::to_string(seed) + "," + fmt(ate_rmse) + "," + mean_psnr.to_string() + "," +
           fmt(mean_ssim) + ",null," + fmt(mean_depth_l1) + "," + std::to_string(num_surfels) + "," +
           (fps ? fmt(*fps) : std::string("null")) + "\n";
}

void write_render(const fs::path &out_dir, int index, const RenderBuffers &buffers, double depth_factor) {
    write_png_rgb(out_dir / "rgb" / frame_name(index, ".png"), buffers.color);
    write_png_depth(out_dir / "depth" / frame_name(index, ".png"), normalized_depth(buffers), depth_factor);
}

MetricReport evaluate(const std::vector<StampedPose> &estimate, const std::vector<StampedPose> &gt,
                      const fs::path &renders_dir, const fs::path &scene_dir, DepthAlignment alignment) {
    MetricReport report;
    report.ate_rmse     = ate_rmse_sim3(to_trajectory(estimate), to_trajectory(gt));
    const double factor = read_intrinsics(scene_dir / "intrinsics.txt").second;

    std::vector<fs::path> names;
    if (!fs::is_directory(renders_dir / "rgb")) {
        throw IoError(renders_dir.string() + " has no rgb/ directory");
    }
    for (const auto &entry : fs::directory_iterator(renders_dir / "rgb")) {
        if (entry.path().extension() == ".png") {
            names.push_back(entry.path().filename());
        }
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) {
        throw IoError(renders_dir.string() + "/rgb holds no images");
    }

    double      psnr_sum  = 0.0;
    std::size_t psnr_n    = 0;
    double      ssim_sum  = 0.0;
    double      depth_sum = 0.0;
    std::size_t depth_n   = 0;
    for (const auto &name : names) {
        ViewMetrics v;
        v.frame_id           = std::stoi(name.stem().string());
        const Image rgb      = read_png_rgb(renders_dir / "rgb" / name);
        const Image gt_rgb   = read_png_rgb(scene_dir / "rgb" / name);
        v.psnr               = psnr(rgb, gt_rgb);
        v.ssim               = ssim(rgb, gt_rgb);
        const Image depth    = read_png_depth(renders_dir / "depth" / name, factor);
        const Image gt_depth = read_png_depth(scene_dir / "depth" / name, factor);
        Image       valid(depth.width(), depth.height(), 1);
        for (std::size_t k = 0; k < valid.data().size(); ++k) {
            valid.data()[k] = depth.data()[k] > 0.0 ? 1.0 : 0.0;
        }
        try {
            v.depth_l1 = depth_l1_scale_aligned(depth, gt_depth, valid, alignment);
            depth_sum += v.depth_l1;
            ++depth_n;
        } catch (const ConfigError &) {
            v.depth_l1 = 0.0; // nothing rendered with confidence in this view
        }
        if (!v.psnr.exact) {
            psnr_sum += v.psnr.db;
            ++psnr_n;
        }
        ssim_sum += v.ssim;
        report.views.push_back(v);
    }
    report.mean_psnr     = psnr_n == 0 ? Psnr{0.0, true} : Psnr{psnr_sum / static_cast<double>(psnr_n), false};
    report.mean_ssim     = ssim_sum / static_cast<double>(names.size());
    report.mean_depth_l1 = depth_n == 0 ? 0.0 : depth_sum / static_cast<double>(depth_n);
    return report;
}

RunOutputs cmd_run(const fs::path &scene_dir, const RunConfig &cfg, const fs::path &out_dir) {
    cfg.validate();
    const Oracle oracle = load_oracle(scene_dir, cfg);
    make_dirs(out_dir / "renders" / "rgb");
    make_dirs(out_dir / "renders" / "depth");
    write_text(out_dir / "manifest.txt", format_options(cfg));

    RunOutputs out;
    const auto start = std::chrono::steady_clock::now();
    out.pipeline     = run_pipeline(oracle, cfg.tracking, cfg.mapping);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const auto &scene = oracle.scene();
    const auto  pre   = stamped(timed_poses(out.pipeline.tracking.pre_pgo, scene));
    const auto  post  = stamped(timed_poses(out.pipeline.tracking.post_pgo, scene));
    write_tum(out_dir / "trajectory_pre_pgo.txt", pre, cfg.sim3_trajectories);
    write_tum(out_dir / "trajectory_post_pgo.txt", post, cfg.sim3_trajectories);
    write_ply(out_dir / "map.ply", out.pipeline.map.surfels());

    // The graph as first assembled: plain chaining plus every constraint.
    PoseGraph graph = PoseGraph::from_trajectory(out.pipeline.tracking.pre_pgo);
    for (const auto &e : out.pipeline.tracking.edges) {
        graph.add_edge(e);
    }
    {
        std::ofstream g(out_dir / "constraints.g2o");
        write_graph(g, graph);
        if (!g) {
            throw IoError("cannot write constraints.g2o");
        }
    }

    const auto &post_traj = out.pipeline.tracking.post_pgo;
    for (std::size_t k = 0; k < post_traj.size(); ++k) {
        const RenderBuffers b = render(out.pipeline.map.surfels(), post_traj.poses[k], scene.intrinsics,
                                       cfg.mapping.raster);
        write_render(out_dir / "renders", post_traj.frame_ids[k], b, cfg.depth_factor);
    }

    std::vector<StampedPose> gt;
    for (int f = 0; f < scene.frame_count(); ++f) {
        gt.push_back({scene.timestamps[f], Sim3Transform(scene.trajectory[f])});
    }
    const auto alignment =
        cfg.depth_alignment == "median" ? DepthAlignment::median_ratio : DepthAlignment::least_squares;
    out.report             = evaluate(post, gt, out_dir / "renders", scene_dir, alignment);
    out.report.scene       = scene_dir.filename().empty() ? scene_dir.parent_path().filename().string()
                                                          : scene_dir.filename().string();
    out.report.seed        = cfg.noise.rng_seed;
    out.report.num_surfels = out.pipeline.map.size();
    if (cfg.report_fps) {
        out.report.fps = static_cast<double>(scene.frame_count()) / elapsed;
    }
    write_text(out_dir / "report.csv", out.report.csv_header() + out.report.csv_row());

    std::string views = "frame,psnr,ssim,depth_l1\n";
    for (const auto &v : out.report.views) {
        views += std::to_string(v.frame_id) + "," + v.psnr.to_string() + "," + fmt(v.ssim) + "," + fmt(v.depth_l1) + "\n";
    }
    write_text(out_dir / "views.csv", views);
    return out;
}

MetricReport cmd_evaluate(const fs::path &trajectory, const fs::path &gt_trajectory, const fs::path &renders_dir,
                          const fs::path &scene_dir, const fs::path &report_csv, bool sim3_trajectory,
                          DepthAlignment alignment) {
    MetricReport r =
        evaluate(read_tum(trajectory, sim3_trajectory), read_tum(gt_trajectory), renders_dir, scene_dir, alignment);
    r.scene = scene_dir.filename().string();
    if (fs::exists(scene_dir / "config.txt")) {
        RunConfig cfg;
        apply_options(cfg, parse_key_values(read_file(scene_dir / "config.txt")));
        r.seed = cfg.noise.rng_seed;
    }
    if (fs::exists(renders_dir.parent_path() / "map.ply")) {
        r.num_surfels = read_ply(renders_dir.parent_path() / "map.ply").size();
    }
    write_text(report_csv, r.csv_header() + r.csv_row());
    return r;
}

void cmd_render(const fs::path &map_ply, const fs::path &poses, const fs::path &intrinsics, const fs::path &out_dir,
                bool sim3_poses, const RasterConfig &raster) {
    const auto surfels        = read_ply(map_ply);
    const auto trajectory     = read_tum(poses, sim3_poses);
    const auto [intr, factor] = read_intrinsics(intrinsics);
    make_dirs(out_dir / "rgb");
    make_dirs(out_dir / "depth");
    make_dirs(out_dir / "accumulation");
    for (std::size_t k = 0; k < trajectory.size(); ++k) {
        const RenderBuffers b = render(surfels, trajectory[k].pose, intr, raster);
        write_render(out_dir, static_cast<int>(k), b, factor);
        write_png_depth(out_dir / "accumulation" / frame_name(static_cast<int>(k), ".png"), b.accumulation, 65535.0);
    }
}

SolveReport cmd_optimize_graph(const fs::path &in, const fs::path &out, const SolverConfig &solver) {
    std::ifstream is(in);
    if (!is) {
        throw IoError("cannot open " + in.string());
    }
    PoseGraph         graph  = read_graph(is);
    const SolveReport report = optimize(graph, solver);
    std::ofstream     os(out);
    write_graph(os, graph);
    if (!os) {
        throw IoError("cannot write " + out.string());
    }
    return report;
}

} // namespace surfelslam
