// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Slow, independent reference computations the tests compare against.
//
#pragma once

#include "surfelslam/lie.hpp"
#include "surfelslam/pose_graph.hpp"
#include "surfelslam/raster.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace surfelslam::testing {

/// Sum of |b_k - s a_k|^2.
inline double scale_objective(std::span<const Vec3> b, std::span<const Vec3> a, double s) {
    double f = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        f += (b[k] - s * a[k]).squaredNorm();
    }
    return f;
}

/// Minimizer of scale_objective over a uniform grid on [lo, hi], refined by a
/// second grid around the best coarse cell.
inline double grid_search_scale(std::span<const Vec3> b, std::span<const Vec3> a, double lo = 0.01,
                                double hi = 10.0) {
    double best = lo;
    for (int pass = 0; pass < 2; ++pass) {
        const int    n    = 20000;
        const double step = (hi - lo) / n;
        double       fmin = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= n; ++k) {
            const double s = lo + k * step;
            const double f = scale_objective(b, a, s);
            if (f < fmin) {
                fmin = f;
                best = s;
            }
        }
        lo = best - step;
        hi = best + step;
    }
    return best;
}

/// Chi2 of the graph with the free nodes moved by x (7 entries per free node, in id order).
inline double perturbed_chi2(const PoseGraph &base, const std::vector<int> &free_ids, const Eigen::VectorXd &x) {
    PoseGraph g = base;
    for (std::size_t k = 0; k < free_ids.size(); ++k) {
        g.set_pose(free_ids[k], base.pose(free_ids[k]) * sim3_exp(x.segment<7>(7 * k)));
    }
    return chi2(g);
}

/// Smallest chi2 found by gradient descent (central-difference gradients,
/// Barzilai-Borwein steps with backtracking) from several random starts in
/// the tangent space of the free nodes.
inline double brute_force_min_chi2(const PoseGraph &graph, int restarts, std::uint64_t seed,
                                   int max_iters = 4000) {
    std::vector<int> free_ids;
    for (const auto &[id, pose] : graph.nodes()) {
        if (!graph.fixed().contains(id)) {
            free_ids.push_back(id);
        }
    }
    const int                        dim = 7 * static_cast<int>(free_ids.size());
    std::mt19937_64                  rng(seed);
    std::normal_distribution<double> n(0.0, 0.05);
    auto                             f = [&](const Eigen::VectorXd &x) { return perturbed_chi2(graph, free_ids, x); };
    auto                             grad = [&](const Eigen::VectorXd &x) {
        Eigen::VectorXd g(dim);
        const double    h = 1e-7;
        for (int i = 0; i < dim; ++i) {
            Eigen::VectorXd xp = x;
            Eigen::VectorXd xm = x;
            xp[i] += h;
            xm[i] -= h;
            g[i] = (f(xp) - f(xm)) / (2 * h);
        }
        return g;
    };

    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        Eigen::VectorXd x(dim);
        for (int i = 0; i < dim; ++i) {
            x[i] = r == 0 ? 0.0 : n(rng);
        }
        double          fx   = f(x);
        Eigen::VectorXd g    = grad(x);
        double          step = 1e-3;
        for (int it = 0; it < max_iters && g.norm() > 1e-11; ++it) {
            double          t  = step;
            Eigen::VectorXd xn = x - t * g;
            double          fn = f(xn);
            while (fn > fx && t > 1e-16) {
                t *= 0.5;
                xn = x - t * g;
                fn = f(xn);
            }
            if (fn > fx) {
                break;
            }
            const Eigen::VectorXd gn = grad(xn);
            const Eigen::VectorXd s  = xn - x;
            const Eigen::VectorXd y  = gn - g;
            const double          sy = s.dot(y);
            step                     = sy > 0.0 ? s.squaredNorm() / sy : 1e-3;
            x                        = xn;
            fx                       = fn;
            g                        = gn;
        }
        best = std::min(best, fx);
    }
    return best;
}

/// Graph of `nodes` poses along a noisy path: sequential edges consistent with
/// the drifted poses plus loop edges measured from the undrifted ones, so the
/// optimum has non-zero chi2.
inline PoseGraph drifted_loop_graph(int nodes, int loops, std::uint64_t seed) {
    std::mt19937_64                  rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<Sim3Transform>       truth(nodes);
    std::vector<Sim3Transform>       drifted(nodes);
    for (int k = 1; k < nodes; ++k) {
        Sim3Tangent step;
        step << 0.5 + 0.1 * n(rng), 0.1 * n(rng), 0.1 * n(rng), 0.05 * n(rng), 0.3 + 0.05 * n(rng), 0.05 * n(rng), 0.0;
        Sim3Tangent drift;
        for (int i = 0; i < 7; ++i) {
            drift[i] = 0.03 * n(rng);
        }
        truth[k]   = truth[k - 1] * sim3_exp(step);
        drifted[k] = drifted[k - 1] * sim3_exp(step) * sim3_exp(drift);
    }
    PoseGraph g;
    for (int k = 0; k < nodes; ++k) {
        g.add_node(k, drifted[k]);
    }
    g.fix(0);
    for (int k = 0; k + 1 < nodes; ++k) {
        g.add_edge({k, k + 1, drifted[k].inverse() * drifted[k + 1], 1.0, EdgeKind::sequential});
    }
    for (int l = 0; l < loops; ++l) {
        const int from = nodes - 1 - l;
        const int to   = l;
        g.add_edge({from, to, truth[from].inverse() * truth[to], 0.5, EdgeKind::loop});
    }
    return g;
}

struct FdResult {
    double worst_rel{0.0};
    int    checked{0};
};

/// Worst relative error between analytic color/opacity gradients and central
/// differences of render_loss, skipping entries where both are ~0.
inline FdResult fd_check(std::vector<Surfel> scene, const Sim3Transform &pose, const CameraIntrinsics &intr,
                  const Image &rgb, const Image &dep, const LossWeights &lw) {
    const RenderTargets targets{&rgb, &dep};
    const auto          grad = grad_color_opacity(scene, pose, intr, targets, lw);
    const double        h    = 1e-4;
    auto loss_of             = [&](const std::vector<Surfel> &s) {
        return render_loss(render(s, pose, intr), rgb, dep, lw);
    };
    FdResult r;
    auto     compare = [&](double analytic, double fd) {
        if (std::abs(analytic) <= 1e-8 && std::abs(fd) <= 1e-8) {
            return;
        }
        r.worst_rel = std::max(r.worst_rel, std::abs(analytic - fd) / std::max(std::abs(analytic), std::abs(fd)));
        ++r.checked;
    };
    for (std::size_t i = 0; i < scene.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            auto plus  = scene;
            auto minus = scene;
            plus[i].color[c] += h;
            minus[i].color[c] -= h;
            compare(grad.d_color[i][c], (loss_of(plus) - loss_of(minus)) / (2 * h));
        }
        auto plus  = scene;
        auto minus = scene;
        plus[i].opacity += h;
        minus[i].opacity -= h;
        compare(grad.d_opacity[i], (loss_of(plus) - loss_of(minus)) / (2 * h));
    }
    return r;
}

} // namespace surfelslam::testing
