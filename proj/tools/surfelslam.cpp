// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "surfelslam/commands.hpp"
#include "surfelslam/errors.hpp"
#include "surfelslam/io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace surfelslam;

namespace {

constexpr int kConfigExit   = 2;
constexpr int kPipelineExit = 3;

std::map<std::string, std::string> collect_options(const std::string &config_file,
                                                   const std::vector<std::string> &sets) {
    std::map<std::string, std::string> opts;
    if (!config_file.empty()) {
        std::string text;
        try {
            text = read_file(config_file);
        } catch (const IoError &e) {
            throw ConfigError(e.what());
        }
        opts = parse_key_values(text);
    }
    for (const auto &s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + s + "'");
        }
        opts[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return opts;
}

DepthAlignment parse_alignment(const std::string &s) {
    if (s == "median") {
        return DepthAlignment::median_ratio;
    }
    if (s == "least_squares") {
        return DepthAlignment::least_squares;
    }
    throw ConfigError("unknown depth alignment '" + s + "'");
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Gaussian-surfel SLAM backend driven by a simulated frontend"};
    app.require_subcommand(1);

    std::string              config_file;
    std::vector<std::string> sets;
    auto add_config = [&](CLI::App *cmd) {
        cmd->add_option("-c,--config", config_file, "key = value configuration file");
        cmd->add_option("-s,--set", sets, "override one option, key=value")->take_all();
    };

    auto       *simulate = app.add_subcommand("simulate", "generate a synthetic scene directory");
    std::string sim_out;
    simulate->add_option("-o,--output", sim_out, "scene directory to write")->required();
    add_config(simulate);

    auto       *run = app.add_subcommand("run", "track, close loops and map a scene directory");
    std::string run_scene;
    std::string run_out;
    bool        no_loop  = false;
    bool        no_voxel = false;
    bool        no_refine = false;
    bool        run_sim3 = false;
    run->add_option("scene", run_scene, "scene directory")->required();
    run->add_option("-o,--output", run_out, "output directory")->required();
    run->add_flag("--disable_loop_closure", no_loop);
    run->add_flag("--disable_voxelization", no_voxel);
    run->add_flag("--disable_refine", no_refine);
    run->add_flag("--sim3", run_sim3, "write trajectories with a scale column");
    add_config(run);

    auto       *eval = app.add_subcommand("evaluate", "compute report.csv from a trajectory and renders");
    std::string eval_traj;
    std::string eval_gt;
    std::string eval_renders;
    std::string eval_scene;
    std::string eval_out = "report.csv";
    std::string eval_align = "median";
    bool        eval_sim3 = false;
    eval->add_option("--trajectory", eval_traj)->required();
    eval->add_option("--gt", eval_gt, "ground-truth TUM trajectory")->required();
    eval->add_option("--renders", eval_renders, "directory with rgb/ and depth/")->required();
    eval->add_option("--scene", eval_scene, "scene directory with ground-truth images")->required();
    eval->add_option("-o,--output", eval_out);
    eval->add_option("--depth-alignment", eval_align, "median or least_squares");
    eval->add_flag("--sim3", eval_sim3, "trajectory has a scale column");

    auto       *rend = app.add_subcommand("render", "render a surfel map at a list of poses");
    std::string rend_map;
    std::string rend_poses;
    std::string rend_intr;
    std::string rend_out;
    bool        rend_sim3 = false;
    rend->add_option("--map", rend_map)->required();
    rend->add_option("--poses", rend_poses, "TUM trajectory")->required();
    rend->add_option("--intrinsics", rend_intr)->required();
    rend->add_option("-o,--output", rend_out)->required();
    rend->add_flag("--sim3", rend_sim3, "poses have a scale column");
    add_config(rend);

    auto       *opt = app.add_subcommand("optimize-graph", "solve a VERTEX_SIM3/EDGE_SIM3 graph file");
    std::string opt_in;
    std::string opt_out;
    opt->add_option("input", opt_in)->required();
    opt->add_option("-o,--output", opt_out)->required();
    add_config(opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigExit;
    }

    try {
        if (simulate->parsed()) {
            RunConfig cfg;
            apply_options(cfg, collect_options(config_file, sets));
            cmd_simulate(cfg, sim_out);
            std::cout << "wrote " << sim_out << "\n";
        } else if (run->parsed()) {
            auto opts = collect_options(config_file, sets);
            if (no_loop) {
                opts["loop.enabled"] = "false";
            }
            if (no_voxel) {
                opts["voxel.enabled"] = "false";
            }
            if (no_refine) {
                opts["refine.enabled"] = "false";
            }
            if (run_sim3) {
                opts["output.sim3_trajectories"] = "true";
            }
            const RunConfig cfg = scene_run_config(run_scene, opts);
            try {
                const RunOutputs out = cmd_run(run_scene, cfg, run_out);
                std::cout << out.report.csv_header() << out.report.csv_row();
            } catch (const ConfigError &) {
                throw;
            } catch (const IoError &) {
                throw;
            } catch (const std::exception &e) {
                std::ofstream(std::filesystem::path(run_out) / "failure.txt") << e.what() << "\n";
                throw;
            }
        } else if (eval->parsed()) {
            const MetricReport r = cmd_evaluate(eval_traj, eval_gt, eval_renders, eval_scene, eval_out, eval_sim3,
                                                parse_alignment(eval_align));
            std::cout << r.csv_header() << r.csv_row();
        } else if (rend->parsed()) {
            RunConfig cfg;
            apply_options(cfg, collect_options(config_file, sets));
            cfg.validate();
            cmd_render(rend_map, rend_poses, rend_intr, rend_out, rend_sim3, cfg.mapping.raster);
        } else if (opt->parsed()) {
            RunConfig cfg;
            apply_options(cfg, collect_options(config_file, sets));
            cfg.validate();
            const SolveReport r = cmd_optimize_graph(opt_in, opt_out, cfg.tracking.solver);
            std::printf("initial_chi2 %.17g\nfinal_chi2 %.17g\niterations %d\nconverged %s\n", r.initial_chi2,
                        r.final_chi2, r.iterations, r.converged ? "true" : "false");
        }
    } catch (const ConfigError &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigExit;
    } catch (const IoError &e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kConfigExit;
    } catch (const std::exception &e) {
        std::cerr << "pipeline failure: " << e.what() << "\n";
        return kPipelineExit;
    }
    return 0;
}
