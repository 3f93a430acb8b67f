// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "surfelslam/errors.hpp"
#include "surfelslam/pose_graph.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <sstream>

using namespace surfelslam;
using namespace surfelslam::testing;

namespace {

ChainedTrajectory random_trajectory(std::mt19937_64 &rng, int n, int clip) {
    ChainedTrajectory t;
    Sim3Transform     pose;
    for (int k = 0; k < n; ++k) {
        if (k > 0) {
            pose = pose * sim3_exp(0.2 * random_tangent(rng, 0.3));
        }
        t.frame_ids.push_back(k);
        // Frame k is owned by submap floor(k / (clip - 1)), except that the final frame stays in the last submap.
        const int last_submap = std::max(0, (n - 2) / (clip - 1));
        t.submap_ids.push_back(std::min(k / (clip - 1), last_submap));
        t.poses.push_back(pose);
    }
    return t;
}

} // namespace

TEST_CASE("residual: satisfied edge, pure scale, matrix-log oracle") {
    std::mt19937_64 rng(11);
    const auto      a = random_sim3(rng);
    const auto      b = random_sim3(rng);
    CHECK(residual({0, 1, a.inverse() * b}, a, b).norm() < 1e-12);

    const Sim3Tangent r =
        residual({0, 1, Sim3Transform::identity()}, Sim3Transform::identity(),
                 Sim3Transform(2.0, UnitQuaternion::identity(), Vec3::Zero()));
    Sim3Tangent expected = Sim3Tangent::Zero();
    expected[6]          = std::log(2.0);
    CHECK((r - expected).norm() < 1e-15);

    for (int k = 0; k < 100; ++k) {
        const Sim3Transform ta  = random_sim3(rng);
        const Sim3Transform tb  = ta * sim3_exp(random_tangent(rng, 2.0));
        const Sim3Tangent   v   = random_tangent(rng, 2.5);
        const Sim3Constraint edge{0, 1, ta.inverse() * tb * sim3_exp(v).inverse(), 1.0};
        const Mat4 composed = edge.measurement.matrix().inverse() * ta.matrix().inverse() * tb.matrix();
        CHECK((residual(edge, ta, tb) - tangent_from_matrix(composed.log())).norm() < 1e-8);
    }
}

TEST_CASE("sequential_edges: identity measurement, counting oracle, zero chi2") {
    ChainedTrajectory two;
    two.frame_ids  = {0, 1};
    two.submap_ids = {0, 0};
    two.poses      = {Sim3Transform::identity(), Sim3Transform::identity()};
    const auto e2  = sequential_edges(two);
    REQUIRE(e2.size() == 1);
    CHECK(max_abs_diff(e2[0].measurement, Sim3Transform::identity()) == 0.0);

    std::mt19937_64 rng(12);
    for (const int n : {15, 50, 100}) {
        const auto traj  = random_trajectory(rng, n, 8);
        const auto edges = sequential_edges(traj);
        int        expected = 0;
        for (int k = 0; k + 1 < n; ++k) {
            expected += traj.submap_ids[k] == traj.submap_ids[k + 1] ? 1 : 0;
        }
        CHECK(static_cast<int>(edges.size()) == expected);
        auto g = PoseGraph::from_trajectory(traj);
        for (const auto &e : edges) {
            CHECK(e.kind == EdgeKind::sequential);
            CHECK(traj.submap_ids[e.from_node] == traj.submap_ids[e.to_node]);
            g.add_edge(e);
        }
        CHECK(chi2(g) < 1e-20);
    }
}

TEST_CASE("optimize: stationary input does not move") {
    std::mt19937_64 rng(13);
    auto            traj = random_trajectory(rng, 10, 100);
    auto            g    = PoseGraph::from_trajectory(traj);
    for (const auto &e : sequential_edges(traj)) {
        g.add_edge(e);
    }
    const auto before = g.nodes();
    const auto rep    = optimize(g);
    CHECK(rep.converged);
    CHECK(rep.final_chi2 == rep.initial_chi2);
    for (const auto &[id, pose] : before) {
        CHECK(max_abs_diff(pose, g.pose(id)) < 1e-12);
    }
    const auto updates = apply_solution(g, traj);
    for (const auto &u : updates) {
        CHECK(max_abs_diff(u.delta(), Sim3Transform::identity()) < 1e-12);
    }
}

TEST_CASE("optimize: three-node chain with one perturbed node recovers exact poses") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        const Sim3Transform t0 = Sim3Transform::identity();
        const Sim3Transform t1 = random_sim3(rng);
        const Sim3Transform t2 = t1 * sim3_exp(random_tangent(rng, 1.0));
        PoseGraph           g;
        g.add_node(0, t0);
        g.add_node(1, t1 * sim3_exp(0.1 * random_tangent(rng, 1.0)));
        g.add_node(2, t2);
        g.fix(0);
        g.add_edge({0, 1, t0.inverse() * t1});
        g.add_edge({1, 2, t1.inverse() * t2});
        g.add_edge({0, 2, t0.inverse() * t2, 0.5, EdgeKind::loop});
        g.fix(2);
        const auto rep = optimize(g);
        CHECK(rep.final_chi2 < 1e-16);
        CHECK(max_abs_diff(g.pose(1), t1) < 1e-8);
        CHECK(max_abs_diff(g.pose(2), t2) == 0.0);
    }
}

TEST_CASE("optimize: matches the brute-force tangent-space minimum on small graphs") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        PoseGraph g     = drifted_loop_graph(5, 1, 100 + seed);
        const double bf = brute_force_min_chi2(g, 3, seed);
        const auto   rep = optimize(g);
        CHECK(rep.converged);
        CHECK(std::abs(rep.final_chi2 - bf) <= 1e-6 * bf);
    }
}

TEST_CASE("optimize: chi2 trace is monotone and fixed nodes stay put") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        PoseGraph  g      = drifted_loop_graph(30, 3, 200 + seed);
        const auto fixed0 = g.pose(0);
        const auto rep    = optimize(g);
        REQUIRE(rep.chi2_trace.size() >= 1);
        CHECK(rep.chi2_trace.front() == rep.initial_chi2);
        for (std::size_t k = 1; k < rep.chi2_trace.size(); ++k) {
            CHECK(rep.chi2_trace[k] <= rep.chi2_trace[k - 1]);
        }
        CHECK(rep.final_chi2 <= rep.initial_chi2);
        CHECK(max_abs_diff(g.pose(0), fixed0) == 0.0);
    }
}

TEST_CASE("optimize: sparse and dense paths agree") {
    PoseGraph a = drifted_loop_graph(60, 4, 300);
    PoseGraph b = a;
    SolverConfig dense;
    dense.dense_below = 1000;
    SolverConfig sparse;
    sparse.dense_below = 0;
    const auto ra = optimize(a, dense);
    const auto rb = optimize(b, sparse);
    CHECK(ra.final_chi2 == doctest::Approx(rb.final_chi2).epsilon(1e-9));
    for (const auto &[id, pose] : a.nodes()) {
        CHECK(max_abs_diff(pose, b.pose(id)) < 1e-6);
    }
}

TEST_CASE("optimize: gauge invariance under a common left transform") {
    std::mt19937_64 rng(15);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        PoseGraph           g = drifted_loop_graph(12, 2, 400 + seed);
        const Sim3Transform d = random_sim3(rng);
        PoseGraph           moved;
        for (const auto &[id, pose] : g.nodes()) {
            moved.add_node(id, d * pose);
        }
        for (const auto &e : g.edges()) {
            moved.add_edge(e);
        }
        moved.fix(0);
        CHECK(chi2(moved) == doctest::Approx(chi2(g)).epsilon(1e-9));
        const auto r1 = optimize(g);
        const auto r2 = optimize(moved);
        CHECK(std::abs(r1.final_chi2 - r2.final_chi2) < 1e-9 * std::max(1.0, r1.final_chi2));
    }
}

TEST_CASE("optimize: gauge-consistent constraints give ground-truth poses") {
    std::mt19937_64            rng(16);
    std::vector<Sim3Transform> truth{Sim3Transform::identity()};
    for (int k = 1; k < 20; ++k) {
        truth.push_back(truth.back() * sim3_exp(0.3 * random_tangent(rng, 0.5)));
    }
    PoseGraph g;
    for (int k = 0; k < 20; ++k) {
        g.add_node(k, k == 0 ? truth[0] : truth[k] * sim3_exp(0.05 * random_tangent(rng, 0.5)));
    }
    g.fix(0);
    for (int k = 0; k + 1 < 20; ++k) {
        g.add_edge({k, k + 1, truth[k].inverse() * truth[k + 1]});
    }
    g.add_edge({19, 2, truth[19].inverse() * truth[2], 0.5, EdgeKind::loop});
    optimize(g);
    for (int k = 0; k < 20; ++k) {
        CHECK((g.pose(k).translation() - truth[k].translation()).norm() < 1e-9);
    }
}

TEST_CASE("linearize: Jacobians match an independent finite difference; serial == parallel") {
    std::mt19937_64 rng(17);
    PoseGraph       g;
    for (int k = 0; k < 8; ++k) {
        g.add_node(k, random_sim3(rng));
    }
    g.fix(0);
    for (int k = 0; k < 12; ++k) {
        const int a = k % 8;
        const int b = (k * 3 + 1) % 8;
        if (a == b) {
            continue;
        }
        g.add_edge({a, b, g.pose(a).inverse() * g.pose(b) * sim3_exp(0.2 * random_tangent(rng, 1.0))});
    }
    const auto lin    = linearize(g);
    const auto serial = reference::linearize_serial(g);
    REQUIRE(lin.size() == g.edges().size());
    for (std::size_t e = 0; e < lin.size(); ++e) {
        CHECK((lin[e].jacobian - serial[e].jacobian).norm() == 0.0);
        const auto &edge = g.edges()[e];
        const double h  = 1e-5;
        Eigen::Matrix<double, 7, 14> fd;
        for (int c = 0; c < 14; ++c) {
            Sim3Tangent d = Sim3Tangent::Zero();
            d[c % 7]      = h;
            Sim3Transform fp = g.pose(edge.from_node), fm = fp, tp = g.pose(edge.to_node), tm = tp;
            if (c < 7) {
                fp = fp * sim3_exp(d);
                fm = fm * sim3_exp(-d);
            } else {
                tp = tp * sim3_exp(d);
                tm = tm * sim3_exp(-d);
            }
            fd.col(c) = (residual(edge, fp, tp) - residual(edge, fm, tm)) / (2 * h);
        }
        CHECK((lin[e].jacobian - fd).norm() / fd.norm() < 1e-5);
        CHECK((lin[e].r - residual(edge, g.pose(edge.from_node), g.pose(edge.to_node))).norm() == 0.0);
    }
}

TEST_CASE("optimize: under-constrained graphs are rejected") {
    PoseGraph g;
    g.add_node(0, Sim3Transform::identity());
    g.add_node(1, Sim3Transform::identity());
    g.add_edge({0, 1, Sim3Transform::identity()});
    CHECK_THROWS_AS(optimize(g), SingularSystemError);

    g.fix(0);
    g.add_node(2, Sim3Transform::identity());
    g.add_node(3, Sim3Transform::identity());
    g.add_edge({2, 3, Sim3Transform::identity()});
    CHECK_THROWS_AS(optimize(g), SingularSystemError);

    CHECK_THROWS_AS(g.add_edge({0, 9, Sim3Transform::identity()}), ConfigError);
    CHECK_THROWS_AS(g.add_edge({0, 1, Sim3Transform::identity(), 0.0}), ConfigError);
}

TEST_CASE("apply_solution: uniform left correction shows up as equal deltas") {
    std::mt19937_64     rng(18);
    auto                traj = random_trajectory(rng, 12, 5);
    const Sim3Transform d    = random_sim3(rng);
    PoseGraph           g    = PoseGraph::from_trajectory(traj);
    for (std::size_t k = 0; k < traj.size(); ++k) {
        g.set_pose(traj.frame_ids[k], d * traj.poses[k]);
    }
    const auto updates = apply_solution(g, traj);
    REQUIRE(updates.size() == 12);
    for (const auto &u : updates) {
        CHECK(max_abs_diff(u.delta(), d) < 1e-9);
        CHECK(max_abs_diff(traj.poses[traj.index_of(u.frame_id)], u.new_pose) == 0.0);
    }
}

TEST_CASE("huber: large residuals cost less than the squared norm") {
    PoseGraph g = drifted_loop_graph(10, 1, 500);
    g.add_edge({0, 9, sim3_exp(Sim3Tangent::Constant(2.0)), 1.0, EdgeKind::loop});
    SolverConfig h;
    h.huber = true;
    CHECK(chi2(g, h) < chi2(g));
    CHECK(optimize(g, h).converged);
}

TEST_CASE("graph text format round trips and rejects malformed lines") {
    PoseGraph g = drifted_loop_graph(6, 1, 600);
    std::stringstream ss;
    write_graph(ss, g);
    const PoseGraph back = read_graph(ss);
    REQUIRE(back.nodes().size() == g.nodes().size());
    REQUIRE(back.edges().size() == g.edges().size());
    CHECK(back.fixed() == g.fixed());
    for (const auto &[id, pose] : g.nodes()) {
        CHECK(max_abs_diff(back.pose(id), pose) < 1e-15);
    }
    for (std::size_t e = 0; e < g.edges().size(); ++e) {
        CHECK(back.edges()[e].kind == g.edges()[e].kind);
        CHECK(back.edges()[e].information == g.edges()[e].information);
    }
    std::istringstream bad("VERTEX_SIM3 0 1 0 0\n");
    CHECK_THROWS_AS(read_graph(bad), IoError);
}
