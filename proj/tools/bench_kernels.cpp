// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Times the OpenMP kernels against their single-threaded reference versions.
//
#include "surfelslam/oracle.hpp"
#include "surfelslam/pose_graph.hpp"
#include "surfelslam/raster.hpp"

#include <CLI11.hpp>

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

using namespace surfelslam;

namespace {

double time_ms(const std::function<void()> &fn, int reps) {
    fn(); // warm caches
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) {
        fn();
    }
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char *name, double serial_ms, double parallel_ms) {
    std::printf("%-22s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms);
}

PoseGraph random_graph(int nodes, std::uint64_t seed) {
    std::mt19937_64                  rng(seed);
    std::normal_distribution<double> n(0.0, 0.05);
    PoseGraph                        g;
    Sim3Transform                    pose;
    for (int i = 0; i < nodes; ++i) {
        Sim3Tangent step;
        step << 0.3 + n(rng), n(rng), n(rng), n(rng), 0.1 + n(rng), n(rng), 0.2 * n(rng);
        if (i > 0) {
            pose = pose * sim3_exp(step);
        }
        g.add_node(i, pose);
    }
    g.fix(0);
    for (int i = 0; i + 1 < nodes; ++i) {
        g.add_edge({i, i + 1, g.pose(i).inverse() * g.pose(i + 1), 1.0, EdgeKind::sequential});
    }
    std::uniform_int_distribution<int> pick(0, nodes - 1);
    for (int k = 0; k < nodes / 4; ++k) {
        const int a = pick(rng);
        const int b = pick(rng);
        if (a != b) {
            g.add_edge({a, b, g.pose(a).inverse() * g.pose(b), 0.5, EdgeKind::loop});
        }
    }
    return g;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"serial vs OpenMP kernel timings"};
    int      surfels = 5000;
    int      reps    = 5;
    int      nodes   = 400;
    app.add_option("--surfels", surfels);
    app.add_option("--reps", reps);
    app.add_option("--nodes", nodes);
    CLI11_PARSE(app, argc, argv);

    std::printf("threads: %d\n", omp_get_max_threads());

    SceneConfig sc;
    sc.surfel_count = surfels;
    sc.frame_count  = 10;
    const SyntheticScene scene = generate_scene(sc);
    const Sim3Transform  cam(scene.trajectory[3]);
    const auto          &intr = scene.intrinsics;

    report("render", time_ms([&] { reference::render_serial(scene.surfels, cam, intr); }, reps),
           time_ms([&] { render(scene.surfels, cam, intr); }, reps));

    const RenderBuffers target = render(scene.surfels, cam, intr);
    std::vector<Surfel> perturbed = scene.surfels;
    for (auto &s : perturbed) {
        s.color = (s.color * 0.8).array() + 0.1;
    }
    const RenderTargets t{&target.color, &target.depth};
    const LossWeights   w;
    report("grad_color_opacity",
           time_ms([&] { reference::grad_color_opacity_serial(perturbed, cam, intr, t, w); }, reps),
           time_ms([&] { grad_color_opacity(perturbed, cam, intr, t, w); }, reps));

    const PoseGraph g = random_graph(nodes, 7);
    report("pose_graph_linearize", time_ms([&] { reference::linearize_serial(g); }, reps),
           time_ms([&] { linearize(g); }, reps));
    return 0;
}
