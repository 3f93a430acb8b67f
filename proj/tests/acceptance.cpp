// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
#include "surfelslam/commands.hpp"
#include "surfelslam/errors.hpp"
#include "surfelslam/loop_closure.hpp"
#include "surfelslam/mapper.hpp"
#include "surfelslam/metrics.hpp"
#include "surfelslam/pipeline.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

using namespace surfelslam;
using namespace surfelslam::testing;

namespace {

struct Outcome {
    bool        pass{false};
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 == 1 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

double max_diff(const Image &a, const Image &b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.data().size(); ++k) {
        m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
    }
    return m;
}

Surfel facing(const Vec3 &mean, double size, double opacity, const Vec3 &color) {
    Surfel s;
    s.mean    = mean;
    s.scale   = Vec2(size, size);
    s.opacity = opacity;
    s.color   = color;
    return s;
}

std::string fmt(const char *f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), f, a, b, c);
    return buf;
}

// 1. exp/log round trip, group axioms and Umeyama recovery.
Outcome lie_suite() {
    const auto      t0 = Clock::now();
    std::mt19937_64 rng(1001);
    double          roundtrip = 0.0;
    double          axioms    = 0.0;
    double          umeyama   = 0.0;
    const int       cases     = 1000;
    for (int k = 0; k < cases; ++k) {
        const Sim3Tangent v = random_tangent(rng, 3.0);
        roundtrip           = std::max(roundtrip, (sim3_log(sim3_exp(v)) - v).cwiseAbs().maxCoeff());
        const auto a = random_sim3(rng);
        const auto b = random_sim3(rng);
        const auto c = random_sim3(rng);
        axioms       = std::max(axioms, max_abs_diff((a * b) * c, a * (b * c)));
        axioms       = std::max(axioms, max_abs_diff(a * a.inverse(), Sim3Transform::identity()));
        axioms       = std::max(axioms, max_abs_diff(a.inverse() * a, Sim3Transform::identity()));
        axioms       = std::max(axioms, max_abs_diff(a * Sim3Transform::identity(), a));
        std::vector<Vec3> src;
        std::vector<Vec3> dst;
        for (int i = 0; i < 12; ++i) {
            src.push_back(random_vec3(rng, -3.0, 3.0));
            dst.push_back(a.act(src.back()));
        }
        umeyama = std::max(umeyama, max_abs_diff(umeyama_sim3(src, dst), a));
    }
    const double secs = seconds_since(t0);
    return {roundtrip < 1e-9 && axioms < 1e-9 && umeyama < 1e-9 && secs < 5.0,
            fmt("%.0f cases, worst roundtrip %.1e, axioms %.1e, ", cases, roundtrip, axioms) +
                fmt("umeyama %.1e, %.2f s", umeyama, secs)};
}

// 2. Compositing examples, accumulation bounds, order independence, occlusion, gradients.
Outcome raster_suite() {
    const auto t0   = Clock::now();
    const auto intr = small_camera();
    bool       ok   = true;

    const Vec3 c1(0.2, 0.6, 1.0);
    const Vec3 c2(1.0, 0.4, 0.0);
    const std::vector<Surfel> pair{facing(Vec3(0, 0, 2), 0.2, 0.5, c2), facing(Vec3(0, 0, 1), 0.1, 0.5, c1)};
    const auto two = render(pair, SE3Pose::identity(), intr);
    const Vec3 expect = 0.5 * c1 + 0.25 * c2;
    for (int c = 0; c < 3; ++c) {
        ok = ok && std::abs(two.color.at(32, 24, c) - expect[c]) < 1e-12;
    }
    ok = ok && std::abs(two.accumulation.at(32, 24) - 0.75) < 1e-12;

    std::mt19937_64 rng(2002);
    double          order_diff = 0.0;
    double          acc_lo     = 1.0;
    double          acc_hi     = 0.0;
    for (int scene = 0; scene < 10; ++scene) {
        std::vector<Surfel> s;
        for (int k = 0; k < 80; ++k) {
            s.push_back(random_surfel(rng, intr));
        }
        const auto base = render(s, SE3Pose::identity(), intr);
        for (const double a : base.accumulation.data()) {
            acc_lo = std::min(acc_lo, a);
            acc_hi = std::max(acc_hi, a);
        }
        std::shuffle(s.begin(), s.end(), rng);
        const auto again = render(s, SE3Pose::identity(), intr);
        order_diff       = std::max({order_diff, max_diff(base.color, again.color),
                                     max_diff(base.accumulation, again.accumulation)});

        const Surfel front = facing(Vec3(0, 0, 0.5), 0.05, 1.0, Vec3(0.3, 0.3, 0.9));
        s.push_back(front);
        const auto hidden = render(s, SE3Pose::identity(), intr);
        const auto alone  = render(std::vector<Surfel>{front}, SE3Pose::identity(), intr);
        for (int c = 0; c < 3; ++c) {
            ok = ok && hidden.color.at(32, 24, c) == alone.color.at(32, 24, c);
        }
        ok = ok && hidden.accumulation.at(32, 24) == 1.0;
    }
    ok = ok && acc_lo >= 0.0 && acc_hi <= 1.0 && order_diff < 1e-14;

    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64     srng(5000 + seed);
        std::vector<Surfel> scene;
        std::vector<Surfel> other;
        for (int k = 0; k < 20; ++k) {
            scene.push_back(random_surfel(srng, intr));
            other.push_back(random_surfel(srng, intr));
        }
        const auto target = render(other, SE3Pose::identity(), intr);
        const auto res = fd_check(scene, Sim3Transform::identity(), intr, target.color, target.depth, {1.0, 0.1});
        worst          = std::max(worst, res.worst_rel);
        ok             = ok && res.checked > 20;
    }
    const double secs = seconds_since(t0);
    ok                = ok && worst < 1e-4 && secs < 60.0;
    return {ok, fmt("order diff %.1e, accumulation in [%.3f, %.3f], ", order_diff, acc_lo, acc_hi) +
                    fmt("worst gradient rel err %.1e on 20 scenes, %.1f s", worst, secs)};
}

// 3. Closed-form scale versus grid search, and equivariance.
Outcome scale_estimator() {
    std::mt19937_64                  rng(3003);
    std::normal_distribution<double> n(0.0, 1.0);
    double                           worst = 0.0;
    bool                             equi  = true;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Vec3> a;
        std::vector<Vec3> b;
        const double      s = std::uniform_real_distribution<double>(0.3, 3.0)(rng);
        for (int k = 0; k < 150; ++k) {
            a.push_back(random_vec3(rng, -2.0, 2.0) + Vec3(0, 0, 3));
            b.push_back(s * a.back() + 0.02 * s * a.back().norm() * Vec3(n(rng), n(rng), n(rng)));
        }
        const double est  = estimate_scale(b, a);
        const double grid = grid_search_scale(b, a);
        worst             = std::max(worst, std::abs(est - grid) / grid);
        for (const double l : {0.125, 0.5, 4.0}) {
            std::vector<Vec3> lb;
            for (const auto &p : b) {
                lb.push_back(l * p);
            }
            equi = equi && estimate_scale(lb, a) == l * est;
        }
    }
    return {worst <= 1e-3 && equi,
            fmt("worst rel diff vs grid search %.1e over 100 cases, equivariance ", worst) + (equi ? "exact" : "broken")};
}

// 4. Solver against random-restart brute force on small graphs.
Outcome pose_graph_oracle() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const int    nodes = 4 + static_cast<int>(seed % 3);
        PoseGraph    g     = drifted_loop_graph(nodes, 1 + static_cast<int>(seed % 2), 4000 + seed);
        const double brute = brute_force_min_chi2(g, 3, 9000 + seed);
        const auto   rep   = optimize(g);
        worst              = std::max(worst, std::abs(rep.final_chi2 - brute) / brute);
    }
    return {worst <= 1e-6, fmt("worst relative chi2 gap %.1e over 20 seeds (4 to 6 nodes)", worst)};
}

// 5. Noiseless scene through cmd_run.
Outcome zero_noise_contract() {
    RunConfig cfg;
    cfg.scene.frame_count = 64;
    cfg.noise             = NoiseModel::noiseless();
    const TempDir scene("accept_scene");
    const TempDir out("accept_run");
    cmd_simulate(cfg, scene.path());
    const RunConfig loaded = scene_run_config(scene.path(), {});
    const auto      run    = cmd_run(scene.path(), loaded, out.path());

    // Re-render the ground-truth surfels at the aligned post-PGO poses.
    const auto post = read_tum(out / "trajectory_post_pgo.txt", loaded.sim3_trajectories);
    const auto gt   = read_tum(scene / "trajectory_gt.txt");
    std::vector<Vec3> src;
    std::vector<Vec3> dst;
    for (std::size_t k = 0; k < post.size(); ++k) {
        src.push_back(post[k].pose.translation());
        dst.push_back(gt[k].pose.translation());
    }
    const Sim3Transform align   = umeyama_sim3(src, dst);
    const auto          surfels = read_ply(scene / "scene.ply");
    const auto [intr, factor]   = read_intrinsics(scene / "intrinsics.txt");
    bool exact                  = true;
    for (std::size_t k = 0; k < post.size(); ++k) {
        const auto  view = render(surfels, align * post[k].pose, intr);
        const Image ref  = read_png_rgb(scene / "rgb" / frame_name(static_cast<int>(k), ".png"));
        exact            = exact && psnr(quantize_rgb(view.color), ref).exact;
    }
    return {run.report.ate_rmse < 1e-6 && exact,
            fmt("post-PGO ATE %.2e over %.0f frames, re-rendered PSNR ", run.report.ate_rmse,
                static_cast<double>(post.size())) +
                (exact ? "exact" : "not exact")};
}

// 6. Loop closure against no loop closure on drifted scenes.
Outcome drift_correction() {
    const auto          t0 = Clock::now();
    std::vector<double> ratios;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        NoiseModel n;
        n.rng_seed = seed;
        const Oracle   oracle(generate_scene(SceneConfig{}), n);
        TrackingConfig with;
        TrackingConfig without;
        without.loop_closure = false;
        const double a       = trajectory_ate(run_tracking(oracle, with).post_pgo, oracle.scene());
        const double b       = trajectory_ate(run_tracking(oracle, without).post_pgo, oracle.scene());
        ratios.push_back(a / b);
    }
    const double m    = median(ratios);
    const double secs = seconds_since(t0);
    return {m <= 0.2 && secs < 300.0, fmt("median ATE ratio %.3f over 10 seeds, %.1f s", m, secs)};
}

// 7. Refinement from color-perturbed ground-truth maps.
Outcome refinement() {
    double gain_sum  = 0.0;
    bool   monotone  = true;
    int    runs      = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        SceneConfig sc;
        sc.seed = seed;
        const Oracle oracle(generate_scene(sc), NoiseModel::noiseless());
        const auto  &scene = oracle.scene();
        const std::vector<int> frames{0, 5, 10, 15};
        GlobalSurfelMap        map;
        for (int k = 0; k < 4; ++k) {
            map.set_keyframe_pose(k, Sim3Transform(scene.trajectory[frames[k]]));
        }
        std::mt19937_64                  rng(7000 + seed);
        std::normal_distribution<double> n(0.0, 0.15);
        for (std::size_t i = 0; i < scene.surfels.size(); ++i) {
            Surfel s = scene.surfels[i];
            for (int c = 0; c < 3; ++c) {
                s.color[c] = std::clamp(s.color[c] + n(rng), 0.0, 1.0);
            }
            map.insert(std::span(&s, 1), static_cast<int>(i % 4));
        }
        std::vector<RefineView> views;
        for (int k = 0; k < 4; ++k) {
            views.push_back({k, &oracle.ground_truth(frames[k]).color, nullptr});
        }
        RefineConfig cfg;
        cfg.iterations = 10;
        const auto rep = refine(map, views, scene.intrinsics, cfg);
        gain_sum += rep.psnr_after - rep.psnr_before;
        for (std::size_t k = 1; k < rep.loss.size(); ++k) {
            monotone = monotone && rep.loss[k] <= rep.loss[k - 1];
        }
        ++runs;
    }
    const double gain = gain_sum / runs;
    return {gain >= 1.0 && monotone,
            fmt("mean PSNR gain %.2f dB over %.0f scenes, loss ", gain, runs) + (monotone ? "monotone" : "increased")};
}

// Mean PSNR of a map rendered at the post-PGO poses against the ground-truth images.
double map_psnr(const GlobalSurfelMap &map, const ChainedTrajectory &traj, const Oracle &oracle) {
    double sum = 0.0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const auto view = render(map.surfels(), traj.poses[k], oracle.scene().intrinsics);
        sum += psnr(quantize_rgb(view.color), quantize_rgb(oracle.ground_truth(traj.frame_ids[k]).color)).db;
    }
    return sum / static_cast<double>(traj.size());
}

// 8. Voxelized versus per-pixel maps built from the same tracking run.
Outcome voxelization() {
    const Oracle oracle(generate_scene(SceneConfig{}), NoiseModel{});
    MapperConfig dense_cfg;
    dense_cfg.voxelize = false;
    Mapper       voxel(oracle.scene().intrinsics, MapperConfig{});
    Mapper       dense(oracle.scene().intrinsics, dense_cfg);
    TrackingSink sink;
    sink.keyframe = [&](int f, const Sim3Transform &pose, const FramePrediction &p) {
        voxel.process({f, pose, p, oracle.ground_truth(f).color});
        dense.process({f, pose, p, oracle.ground_truth(f).color});
    };
    sink.correction = [&](const std::vector<PoseUpdate> &u) {
        voxel.apply_correction(u);
        dense.apply_correction(u);
    };
    const auto   result = run_tracking(oracle, TrackingConfig{}, sink);
    const double nv     = static_cast<double>(voxel.map().size());
    const double nd     = static_cast<double>(dense.map().size());
    const double pv     = map_psnr(voxel.map(), result.post_pgo, oracle);
    const double pd     = map_psnr(dense.map(), result.post_pgo, oracle);
    const double reduction = 1.0 - nv / nd;
    return {reduction >= 0.5 && pd - pv <= 1.0,
            fmt("%.0f -> %.0f surfels (%.1f%% fewer), ", nd, nv, 100.0 * reduction) +
                fmt("PSNR %.2f -> %.2f dB", pd, pv)};
}

// 9. Clip-length sweep.
Outcome clip_sweep() {
    const std::vector<int> clips{2, 4, 8, 16, 32};
    std::vector<double>    medians;
    for (const int clip : clips) {
        std::vector<double> ates;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            NoiseModel n;
            n.rng_seed = seed;
            const Oracle   oracle(generate_scene(SceneConfig{}), n);
            TrackingConfig cfg;
            cfg.clip_length = clip;
            ates.push_back(trajectory_ate(run_tracking(oracle, cfg).post_pgo, oracle.scene()));
        }
        medians.push_back(median(ates));
    }
    const auto best = static_cast<std::size_t>(std::min_element(medians.begin(), medians.end()) - medians.begin());
    std::ostringstream os;
    os << "median ATE";
    for (std::size_t k = 0; k < clips.size(); ++k) {
        os << ' ' << clips[k] << ':' << fmt("%.4f", medians[k]);
    }
    os << ", minimum at " << clips[best];
    return {best > 0 && best + 1 < clips.size(), os.str()};
}

// 10. Rigid loop correction leaves renders unchanged.
Outcome loop_rigidity() {
    const Oracle oracle(generate_scene(SceneConfig{}), NoiseModel::noiseless());
    const auto  &scene = oracle.scene();
    std::vector<Sim3Transform> poses;
    GlobalSurfelMap            base;
    for (int k = 0; k < 4; ++k) {
        poses.push_back(Sim3Transform(scene.trajectory[k * 17]));
        base.set_keyframe_pose(k, poses.back());
    }
    for (std::size_t i = 0; i < scene.surfels.size(); ++i) {
        base.insert(std::span(&scene.surfels[i], 1), static_cast<int>(i % 4));
    }
    std::mt19937_64 rng(10010);
    double          worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const Sim3Transform d     = random_sim3(rng);
        GlobalSurfelMap     moved = base;
        loop_correct(moved, {{0, d}, {1, d}, {2, d}, {3, d}});
        for (const auto &p : poses) {
            const auto before = render(base.surfels(), p, scene.intrinsics);
            const auto after  = render(moved.surfels(), d * p, scene.intrinsics);
            worst = std::max({worst, max_diff(before.color, after.color), max_diff(before.depth, after.depth),
                              max_diff(before.accumulation, after.accumulation)});
        }
    }
    return {worst <= 1e-6, fmt("worst channel difference %.1e over 10 deltas and 4 views", worst)};
}

// 11. Metric self-tests.
Outcome metrics() {
    std::mt19937_64 rng(11011);
    Trajectory      gt;
    Trajectory      est;
    Vec3            p = Vec3::Zero();
    for (int k = 0; k < 100; ++k) {
        p += random_vec3(rng, -0.3, 0.3);
        gt.push_back({0.1 * k, Sim3Transform(1.0, random_rotation(rng), p)});
        est.push_back({0.1 * k, Sim3Transform(1.0, gt.back().pose.rotation(), p + random_vec3(rng, -0.05, 0.05))});
    }
    const double base    = ate_rmse_sim3(est, gt);
    double       ate_gap = 0.0;
    for (int k = 0; k < 10; ++k) {
        const Sim3Transform g     = random_sim3(rng);
        Trajectory          moved = est;
        for (auto &s : moved) {
            s.pose = g * s.pose;
        }
        ate_gap = std::max(ate_gap, std::abs(ate_rmse_sim3(moved, gt) - base));
    }

    const double db = psnr(Image(16, 12, 3, 0.5), Image(16, 12, 3, 0.4)).db;

    Image depth(20, 15, 1);
    Image acc(20, 15, 1, 1.0);
    Image pred(20, 15, 1);
    for (std::size_t k = 0; k < depth.data().size(); ++k) {
        depth.data()[k] = 1.0 + 0.01 * static_cast<double>(k);
        pred.data()[k]  = 0.7 * depth.data()[k] * (1.0 + 0.05 * std::sin(static_cast<double>(k)));
    }
    const double l1    = depth_l1_scale_aligned(pred, depth, acc);
    double       l1gap = 0.0;
    for (const double lam : {0.1, 3.0, 17.0}) {
        Image scaled = pred;
        for (auto &v : scaled.data()) {
            v *= lam;
        }
        l1gap = std::max(l1gap, std::abs(depth_l1_scale_aligned(scaled, depth, acc) - l1));
    }
    return {ate_gap < 1e-9 && std::abs(db - 20.0) < 1e-12 && l1gap < 1e-12,
            fmt("ATE invariance gap %.1e, PSNR %.12f dB, ", ate_gap, db) + fmt("depth L1 scale gap %.1e", l1gap)};
}

} // namespace

int main() {
    const std::vector<std::pair<const char *, std::function<Outcome()>>> criteria{
        {"lie-group suite", lie_suite},
        {"rasterizer suite", raster_suite},
        {"scale estimator", scale_estimator},
        {"pose-graph oracle", pose_graph_oracle},
        {"zero-noise contract", zero_noise_contract},
        {"drift correction", drift_correction},
        {"refinement", refinement},
        {"voxelization", voxelization},
        {"clip-length sweep", clip_sweep},
        {"loop-correct rigidity", loop_rigidity},
        {"metric self-tests", metrics},
    };
    int failures = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception &e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("%-5s %2zu %-22s %s\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
