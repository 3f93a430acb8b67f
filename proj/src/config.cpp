// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "surfelslam/config.hpp"

#include "surfelslam/errors.hpp"
#include "surfelslam/io.hpp"

#include <charconv>
#include <functional>
#include <sstream>

namespace surfelslam {

namespace {

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string to_text(double v) {
    char       buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string to_text(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string to_text(T v) requires std::is_integral_v<T> {
    return std::to_string(v);
}

template <typename T>
T parse(const std::string &key, const std::string &text) {
    if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1") {
            return true;
        }
        if (text == "false" || text == "0") {
            return false;
        }
        throw ConfigError(key + ": expected true or false, got '" + text + "'");
    } else {
        T          v{};
        const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
        if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
            throw ConfigError(key + ": cannot parse '" + text + "'");
        }
        return v;
    }
}

struct Option {
    std::string                              key;
    std::function<std::string()>             get;
    std::function<void(const std::string &)> set;
};

template <typename T>
Option bind(std::string key, T &field) {
    return {key, [&field] { return to_text(field); },
            [&field, key](const std::string &v) { field = parse<T>(key, v); }};
}

std::vector<Option> options(RunConfig &c) {
    std::vector<Option> o;
    auto               &sc = c.scene;
    o.push_back(bind("scene.seed", sc.seed));
    o.push_back(bind("scene.surfel_count", sc.surfel_count));
    o.push_back(bind("scene.frame_count", sc.frame_count));
    o.push_back(bind("scene.room_half_extent_x", sc.room_half_extent.x()));
    o.push_back(bind("scene.room_half_extent_y", sc.room_half_extent.y()));
    o.push_back(bind("scene.room_half_extent_z", sc.room_half_extent.z()));
    o.push_back(bind("scene.path_radius", sc.path_radius));
    o.push_back(bind("scene.revolutions", sc.revolutions));
    o.push_back(bind("scene.frame_rate", sc.frame_rate));
    o.push_back(bind("camera.fx", sc.intrinsics.fx));
    o.push_back(bind("camera.fy", sc.intrinsics.fy));
    o.push_back(bind("camera.cx", sc.intrinsics.cx));
    o.push_back(bind("camera.cy", sc.intrinsics.cy));
    o.push_back(bind("camera.width", sc.intrinsics.width));
    o.push_back(bind("camera.height", sc.intrinsics.height));
    o.push_back(bind("camera.depth_factor", c.depth_factor));

    auto &n = c.noise;
    o.push_back(bind("noise.rng_seed", n.rng_seed));
    o.push_back(bind("noise.pose_rot_std", n.pose_rot_std));
    o.push_back(bind("noise.pose_trans_std", n.pose_trans_std));
    o.push_back(bind("noise.pose_rot_bias_std", n.pose_rot_bias_std));
    o.push_back(bind("noise.pose_trans_bias_std", n.pose_trans_bias_std));
    o.push_back(bind("noise.per_submap_scale_drift", n.per_submap_scale_drift));
    o.push_back(bind("noise.point_noise_std", n.point_noise_std));
    o.push_back(bind("noise.context_warmup", n.context_warmup));
    o.push_back(bind("noise.context_horizon", n.context_horizon));

    auto &oc = c.oracle;
    o.push_back(bind("oracle.predicted_footprint_px", oc.predicted_footprint_px));
    o.push_back(bind("oracle.predicted_opacity", oc.predicted_opacity));
    o.push_back(bind("oracle.visibility_floor", oc.visibility_floor));
    o.push_back(bind("oracle.covisibility_threshold", oc.covisibility_threshold));
    o.push_back(bind("oracle.direction_quantization", oc.direction_quantization));
    o.push_back(bind("oracle.position_cell", oc.position_cell));

    auto &t = c.tracking;
    o.push_back(bind("tracking.clip_length", t.clip_length));
    o.push_back(bind("tracking.mad_rejection", t.mad_rejection));
    o.push_back(bind("graph.sequential_information", t.sequential_information));
    o.push_back(bind("graph.inter_submap_information", t.inter_submap_information));
    o.push_back(bind("loop.enabled", t.loop_closure));
    o.push_back(bind("loop.submap_gap", t.loop.submap_gap));
    o.push_back(bind("loop.feature_threshold", t.loop.feature_threshold));
    o.push_back(bind("loop.min_covisibility", t.loop.min_covisibility));
    o.push_back(bind("loop.information", t.loop.information));
    o.push_back(bind("loop.scale_translation", t.loop.scale_translation));

    auto &s = t.solver;
    o.push_back(bind("solver.max_iters", s.max_iters));
    o.push_back(bind("solver.lm_lambda0", s.lm_lambda0));
    o.push_back(bind("solver.lambda_factor", s.lambda_factor));
    o.push_back(bind("solver.chi2_rel_tol", s.chi2_rel_tol));
    o.push_back(bind("solver.gradient_tol", s.gradient_tol));
    o.push_back(bind("solver.fd_step", s.fd_step));
    o.push_back(bind("solver.huber", s.huber));
    o.push_back(bind("solver.huber_delta", s.huber_delta));
    o.push_back(bind("solver.dense_below", s.dense_below));

    auto &m = c.mapping;
    o.push_back(bind("mapping.keyframe_stride", m.keyframe_stride));
    o.push_back(bind("voxel.enabled", m.voxelize));
    o.push_back(bind("voxel.depth_threshold", m.voxelization.depth_threshold));
    o.push_back(bind("voxel.depth_ratio", m.voxelization.depth_ratio));
    o.push_back(bind("fusion.accumulation_threshold", m.fusion.accumulation_threshold));
    o.push_back(bind("prune.enabled", m.prune));
    o.push_back(bind("prune.rgb_error", m.fusion.prune_rgb_error));
    o.push_back(bind("prune.depth_error", m.fusion.prune_depth_error));
    o.push_back(bind("prune.contribution_floor", m.fusion.prune_contribution_floor));
    o.push_back(bind("refine.enabled", m.refine_enabled));
    o.push_back(bind("refine.iterations", m.refine.iterations));
    o.push_back(bind("refine.window", m.refine.window));
    o.push_back(bind("refine.initial_step", m.refine.initial_step));
    o.push_back(bind("refine.max_halvings", m.refine.max_halvings));
    o.push_back(bind("refine.mse_weight", m.refine.mse_weight));
    o.push_back(bind("refine.depth_weight", m.refine.depth_weight));
    o.push_back(bind("raster.near_plane", m.raster.near_plane));
    o.push_back(bind("raster.guard_band", m.raster.guard_band));
    o.push_back(bind("raster.transmittance_cutoff", m.raster.transmittance_cutoff));
    o.push_back(bind("raster.weight_clamp", m.raster.weight_clamp));
    o.push_back(bind("raster.footprint_sigmas", m.raster.footprint_sigmas));
    o.push_back(bind("raster.max_condition", m.raster.max_condition));

    o.push_back({"eval.depth_alignment", [&c] { return c.depth_alignment; },
                 [&c](const std::string &v) { c.depth_alignment = v; }});
    o.push_back(bind("eval.report_fps", c.report_fps));
    o.push_back(bind("output.sim3_trajectories", c.sim3_trajectories));
    return o;
}

} // namespace

void RunConfig::validate() const {
    scene.validate();
    noise.validate();
    if (tracking.clip_length < 2) {
        throw ConfigError("tracking.clip_length must be at least 2");
    }
    if (tracking.loop.submap_gap < 1) {
        throw ConfigError("loop.submap_gap must be at least 1");
    }
    for (const double w : {tracking.sequential_information, tracking.inter_submap_information, tracking.loop.information}) {
        if (!(w > 0.0)) {
            throw ConfigError("edge information weights must be positive");
        }
    }
    if (tracking.solver.max_iters < 0 || !(tracking.solver.lm_lambda0 > 0.0) || !(tracking.solver.lambda_factor > 1.0) ||
        !(tracking.solver.fd_step > 0.0)) {
        throw ConfigError("invalid solver settings");
    }
    const auto &f = mapping.fusion;
    if (!(f.accumulation_threshold > 0.0 && f.accumulation_threshold < 1.0)) {
        throw ConfigError("fusion.accumulation_threshold must lie in (0, 1)");
    }
    if (!(f.prune_rgb_error > 0.0) || !(f.prune_depth_error > 0.0) || !(f.prune_contribution_floor > 0.0)) {
        throw ConfigError("prune thresholds must be positive");
    }
    if (!(mapping.voxelization.depth_ratio > 0.0)) {
        throw ConfigError("voxel.depth_ratio must be positive");
    }
    if (mapping.refine.iterations < 0 || mapping.refine.window < 1 || !(mapping.refine.initial_step > 0.0) ||
        mapping.refine.max_halvings < 0) {
        throw ConfigError("invalid refinement settings");
    }
    if (mapping.keyframe_stride < 1) {
        throw ConfigError("mapping.keyframe_stride must be at least 1");
    }
    if (!(mapping.raster.weight_clamp > 0.0 && mapping.raster.weight_clamp <= 1.0)) {
        throw ConfigError("raster.weight_clamp must lie in (0, 1]");
    }
    if (!(depth_factor > 0.0)) {
        throw ConfigError("camera.depth_factor must be positive");
    }
    if (depth_alignment != "median" && depth_alignment != "least_squares") {
        throw ConfigError("eval.depth_alignment must be 'median' or 'least_squares'");
    }
}

std::map<std::string, std::string> parse_key_values(const std::string &text) {
    std::map<std::string, std::string> out;
    std::istringstream                 in(text);
    std::string                        line;
    int                                lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key   = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        }
        if (!out.emplace(key, value).second) {
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
    }
    return out;
}

void set_option(RunConfig &cfg, const std::string &key, const std::string &value) {
    for (auto &o : options(cfg)) {
        if (o.key == key) {
            o.set(value);
            return;
        }
    }
    throw ConfigError("unknown option '" + key + "'");
}

void apply_options(RunConfig &cfg, const std::map<std::string, std::string> &opts) {
    for (const auto &[k, v] : opts) {
        set_option(cfg, k, v);
    }
}

std::vector<std::pair<std::string, std::string>> list_options(const RunConfig &cfg) {
    RunConfig                                        copy = cfg;
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto &o : options(copy)) {
        out.emplace_back(o.key, o.get());
    }
    return out;
}

std::string format_options(const RunConfig &cfg) {
    std::string out;
    for (const auto &[k, v] : list_options(cfg)) {
        out += k + " = " + v + "\n";
    }
    return out;
}

RunConfig load_config(const std::filesystem::path &path) {
    RunConfig cfg;
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError &e) {
        throw ConfigError(e.what());
    }
    apply_options(cfg, parse_key_values(text));
    cfg.validate();
    return cfg;
}

} // namespace surfelslam
