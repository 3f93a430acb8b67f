// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Sim(3) pose graph over keyframes.
//
// An edge from node a to node b carries a measurement M of T_a^-1 T_b, the
// transform taking b's coordinates into a's. Its residual is
//
//   r = log(M^-1 T_a^-1 T_b)
//
// and the cost is sum_e omega_e |r_e|^2. Nodes are updated by right
// multiplication, T <- T exp(delta).
//
#pragma once

#include "surfelslam/lie.hpp"

#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace surfelslam {

enum class EdgeKind { sequential, inter_submap, loop };

std::string edge_kind_name(EdgeKind kind);

struct Sim3Constraint {
    int           from_node{0};
    int           to_node{0};
    Sim3Transform measurement;
    double        information{1.0};
    EdgeKind      kind{EdgeKind::sequential};
};

/// Keyframe world poses in stream order, with the submap that owns each frame.
struct ChainedTrajectory {
    std::vector<int>           frame_ids;
    std::vector<int>           submap_ids;
    std::vector<Sim3Transform> poses; // keyframe -> world

    std::size_t size() const { return frame_ids.size(); }
    /// Index of a frame id, or -1.
    int index_of(int frame_id) const;
};

class PoseGraph {
public:
    void add_node(int id, const Sim3Transform &pose);
    /// Throws ConfigError when either endpoint is missing or the information is not positive.
    void add_edge(const Sim3Constraint &edge);
    void fix(int id);

    const std::map<int, Sim3Transform> &nodes() const { return nodes_; }
    const std::vector<Sim3Constraint>   &edges() const { return edges_; }
    const std::set<int>                 &fixed() const { return fixed_; }
    const Sim3Transform                 &pose(int id) const;
    void                                 set_pose(int id, const Sim3Transform &pose);

    /// Node 0 (or the smallest id) fixed, poses from the trajectory.
    static PoseGraph from_trajectory(const ChainedTrajectory &trajectory);

private:
    std::map<int, Sim3Transform> nodes_;
    std::vector<Sim3Constraint>  edges_;
    std::set<int>                fixed_;
};

struct SolverConfig {
    int    max_iters{100};
    double lm_lambda0{1e-4};
    double lambda_factor{10.0};
    double chi2_rel_tol{1e-12};
    double gradient_tol{1e-12};
    double fd_step{1e-6};
    bool   huber{false};
    double huber_delta{1.0};
    /// Graphs with fewer nodes are solved densely.
    int    dense_below{50};
};

struct SolveReport {
    double              initial_chi2{0.0};
    double              final_chi2{0.0};
    int                 iterations{0};
    bool                converged{false};
    std::vector<double> chi2_trace; // after every accepted step, starting with the initial value
};

Sim3Tangent residual(const Sim3Constraint &edge, const Sim3Transform &from_pose, const Sim3Transform &to_pose);

/// One edge per consecutive pair of frames owned by the same submap, with
/// measurement T_k^-1 T_k+1 taken from the trajectory.
std::vector<Sim3Constraint> sequential_edges(const ChainedTrajectory &trajectory, double information = 1.0);

/// Total (robustified) cost at the graph's current poses.
double chi2(const PoseGraph &graph, const SolverConfig &cfg = {});

/// Levenberg-Marquardt on the Sim(3) manifold. Throws SingularSystemError when
/// the graph has no fixed node, is disconnected, or the normal equations are singular.
SolveReport optimize(PoseGraph &graph, const SolverConfig &cfg = {});

struct PoseUpdate {
    int           frame_id{0};
    Sim3Transform old_pose;
    Sim3Transform new_pose;

    /// The left correction taking the old pose to the new one.
    Sim3Transform delta() const { return new_pose * old_pose.inverse(); }
};

/// Copies solved poses into the trajectory, returning old/new pairs for every keyframe.
std::vector<PoseUpdate> apply_solution(const PoseGraph &graph, ChainedTrajectory &trajectory);

/// Residual and finite-difference Jacobian of one edge with respect to the
/// right perturbations of its two endpoints (columns 0-6 from, 7-13 to).
struct EdgeLinearization {
    Sim3Tangent                  r{Sim3Tangent::Zero()};
    Eigen::Matrix<double, 7, 14> jacobian{Eigen::Matrix<double, 7, 14>::Zero()};
};

std::vector<EdgeLinearization> linearize(const PoseGraph &graph, const SolverConfig &cfg = {});

/// Text graph format: "VERTEX_SIM3 id s tx ty tz qx qy qz qw" and
/// "EDGE_SIM3 from to s tx ty tz qx qy qz qw omega" (optionally followed by a kind).
/// A "FIX id" line pins a node; without one the smallest id is fixed.
PoseGraph   read_graph(std::istream &in);
void        write_graph(std::ostream &out, const PoseGraph &graph);
std::string edge_line(const Sim3Constraint &edge);

namespace reference {

std::vector<EdgeLinearization> linearize_serial(const PoseGraph &graph, const SolverConfig &cfg = {});

} // namespace reference

} // namespace surfelslam
