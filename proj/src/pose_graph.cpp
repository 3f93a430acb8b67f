// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "pose_graph_internal.hpp"

#include "surfelslam/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace surfelslam {

std::string edge_kind_name(EdgeKind kind) {
    switch (kind) {
    case EdgeKind::sequential:
        return "sequential";
    case EdgeKind::inter_submap:
        return "inter_submap";
    case EdgeKind::loop:
        return "loop";
    }
    return "unknown";
}

int ChainedTrajectory::index_of(int frame_id) const {
    const auto it = std::find(frame_ids.begin(), frame_ids.end(), frame_id);
    return it == frame_ids.end() ? -1 : static_cast<int>(it - frame_ids.begin());
}

void PoseGraph::add_node(int id, const Sim3Transform &pose) { nodes_[id] = pose; }

void PoseGraph::add_edge(const Sim3Constraint &edge) {
    if (!nodes_.contains(edge.from_node) || !nodes_.contains(edge.to_node)) {
        throw ConfigError("edge " + std::to_string(edge.from_node) + " -> " + std::to_string(edge.to_node) +
                          " references a missing node");
    }
    if (!(edge.information > 0.0) || !std::isfinite(edge.information)) {
        throw ConfigError("edge information must be positive");
    }
    edges_.push_back(edge);
}

void PoseGraph::fix(int id) {
    if (!nodes_.contains(id)) {
        throw ConfigError("cannot fix missing node " + std::to_string(id));
    }
    fixed_.insert(id);
}

const Sim3Transform &PoseGraph::pose(int id) const {
    const auto it = nodes_.find(id);
    if (it == nodes_.end()) {
        throw ConfigError("missing node " + std::to_string(id));
    }
    return it->second;
}

void PoseGraph::set_pose(int id, const Sim3Transform &pose) {
    const auto it = nodes_.find(id);
    if (it == nodes_.end()) {
        throw ConfigError("missing node " + std::to_string(id));
    }
    it->second = pose;
}

PoseGraph PoseGraph::from_trajectory(const ChainedTrajectory &trajectory) {
    PoseGraph g;
    for (std::size_t k = 0; k < trajectory.size(); ++k) {
        g.add_node(trajectory.frame_ids[k], trajectory.poses[k]);
    }
    if (!g.nodes_.empty()) {
        g.fix(g.nodes_.begin()->first);
    }
    return g;
}

Sim3Tangent residual(const Sim3Constraint &edge, const Sim3Transform &from_pose, const Sim3Transform &to_pose) {
    return sim3_log(edge.measurement.inverse() * (from_pose.inverse() * to_pose));
}

namespace detail {

EdgeLinearization linearize_edge(const Sim3Constraint &edge, const Sim3Transform &from_pose,
                                 const Sim3Transform &to_pose, double step) {
    EdgeLinearization lin;
    lin.r = residual(edge, from_pose, to_pose);
    for (int k = 0; k < 7; ++k) {
        Sim3Tangent d = Sim3Tangent::Zero();
        d[k]          = step;
        const Sim3Transform plus  = sim3_exp(d);
        const Sim3Transform minus = sim3_exp(-d);
        lin.jacobian.col(k) =
            (residual(edge, from_pose * plus, to_pose) - residual(edge, from_pose * minus, to_pose)) / (2 * step);
        lin.jacobian.col(7 + k) =
            (residual(edge, from_pose, to_pose * plus) - residual(edge, from_pose, to_pose * minus)) / (2 * step);
    }
    return lin;
}

} // namespace detail

std::vector<Sim3Constraint> sequential_edges(const ChainedTrajectory &trajectory, double information) {
    std::vector<Sim3Constraint> out;
    for (std::size_t k = 0; k + 1 < trajectory.size(); ++k) {
        if (trajectory.submap_ids[k] != trajectory.submap_ids[k + 1]) {
            continue;
        }
        Sim3Constraint e;
        e.from_node   = trajectory.frame_ids[k];
        e.to_node     = trajectory.frame_ids[k + 1];
        e.measurement = trajectory.poses[k].inverse() * trajectory.poses[k + 1];
        e.information = information;
        e.kind        = EdgeKind::sequential;
        out.push_back(e);
    }
    return out;
}

namespace {

// Robust cost of one edge and the IRLS weight multiplying its information.
struct EdgeCost {
    double cost;
    double weight;
};

EdgeCost edge_cost(const Sim3Tangent &r, double information, const SolverConfig &cfg) {
    const double sq = information * r.squaredNorm();
    if (!cfg.huber) {
        return {sq, 1.0};
    }
    const double e = std::sqrt(sq);
    if (e <= cfg.huber_delta) {
        return {sq, 1.0};
    }
    return {2.0 * cfg.huber_delta * e - cfg.huber_delta * cfg.huber_delta, cfg.huber_delta / e};
}

double total_cost(const PoseGraph &graph, const std::map<int, Sim3Transform> &poses, const SolverConfig &cfg) {
    double sum = 0.0;
    for (const auto &e : graph.edges()) {
        sum += edge_cost(residual(e, poses.at(e.from_node), poses.at(e.to_node)), e.information, cfg).cost;
    }
    return sum;
}

// Connected components over edges; throws for components without a fixed node.
void check_gauge(const PoseGraph &graph) {
    if (graph.fixed().empty()) {
        throw SingularSystemError("pose graph has no fixed node; the gauge is free");
    }
    std::map<int, int> parent;
    for (const auto &[id, pose] : graph.nodes()) {
        parent[id] = id;
    }
    auto find = [&](int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x         = parent[x];
        }
        return x;
    };
    for (const auto &e : graph.edges()) {
        parent[find(e.from_node)] = find(e.to_node);
    }
    std::set<int> anchored;
    for (const int id : graph.fixed()) {
        anchored.insert(find(id));
    }
    std::map<int, std::vector<int>> loose;
    for (const auto &[id, pose] : graph.nodes()) {
        if (!anchored.contains(find(id))) {
            loose[find(id)].push_back(id);
        }
    }
    if (!loose.empty()) {
        const auto        &component = loose.begin()->second;
        std::ostringstream msg;
        msg << "pose graph component not connected to a fixed node:";
        for (std::size_t k = 0; k < component.size() && k < 20; ++k) {
            msg << ' ' << component[k];
        }
        if (component.size() > 20) {
            msg << " ... (" << component.size() << " nodes)";
        }
        throw SingularSystemError(msg.str());
    }
}

} // namespace

double chi2(const PoseGraph &graph, const SolverConfig &cfg) { return total_cost(graph, graph.nodes(), cfg); }

SolveReport optimize(PoseGraph &graph, const SolverConfig &cfg) {
    check_gauge(graph);

    std::map<int, int> block;
    std::vector<int>   free_ids;
    for (const auto &[id, pose] : graph.nodes()) {
        if (!graph.fixed().contains(id)) {
            block[id] = static_cast<int>(free_ids.size());
            free_ids.push_back(id);
        }
    }
    const int dim = 7 * static_cast<int>(free_ids.size());

    SolveReport report;
    double      cost    = chi2(graph, cfg);
    report.initial_chi2 = cost;
    report.chi2_trace.push_back(cost);
    if (dim == 0 || cost == 0.0) {
        report.final_chi2 = cost;
        report.converged  = true;
        return report;
    }

    const bool dense  = static_cast<int>(graph.nodes().size()) < cfg.dense_below;
    double     lambda = cfg.lm_lambda0;
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        report.iterations = iter + 1;
        const auto lin    = linearize(graph, cfg);

        Eigen::VectorXd                     g = Eigen::VectorXd::Zero(dim);
        Eigen::MatrixXd                     h_dense;
        std::vector<Eigen::Triplet<double>> triplets;
        if (dense) {
            h_dense = Eigen::MatrixXd::Zero(dim, dim);
        }
        for (std::size_t k = 0; k < lin.size(); ++k) {
            const auto  &e   = graph.edges()[k];
            const double w   = e.information * edge_cost(lin[k].r, e.information, cfg).weight;
            const int    ends[2] = {e.from_node, e.to_node};
            for (int a = 0; a < 2; ++a) {
                const auto ia = block.find(ends[a]);
                if (ia == block.end()) {
                    continue;
                }
                const auto ja = lin[k].jacobian.middleCols<7>(7 * a);
                g.segment<7>(7 * ia->second) += w * ja.transpose() * lin[k].r;
                for (int b = 0; b < 2; ++b) {
                    const auto ib = block.find(ends[b]);
                    if (ib == block.end()) {
                        continue;
                    }
                    const Eigen::Matrix<double, 7, 7> hab =
                        w * ja.transpose() * lin[k].jacobian.middleCols<7>(7 * b);
                    if (dense) {
                        h_dense.block<7, 7>(7 * ia->second, 7 * ib->second) += hab;
                    } else {
                        for (int r = 0; r < 7; ++r) {
                            for (int c = 0; c < 7; ++c) {
                                triplets.emplace_back(7 * ia->second + r, 7 * ib->second + c, hab(r, c));
                            }
                        }
                    }
                }
            }
        }
        if (g.lpNorm<Eigen::Infinity>() < cfg.gradient_tol) {
            report.converged = true;
            break;
        }

        Eigen::SparseMatrix<double> h_sparse;
        if (!dense) {
            h_sparse.resize(dim, dim);
            h_sparse.setFromTriplets(triplets.begin(), triplets.end());
        }

        bool accepted = false;
        while (!accepted && lambda < 1e16) {
            Eigen::VectorXd delta;
            if (dense) {
                Eigen::MatrixXd damped = h_dense;
                damped.diagonal().array() += lambda;
                const Eigen::LLT<Eigen::MatrixXd> llt(damped);
                if (llt.info() != Eigen::Success) {
                    throw SingularSystemError("normal equations are not positive definite");
                }
                delta = llt.solve(-g);
            } else {
                Eigen::SparseMatrix<double> damped = h_sparse;
                for (int i = 0; i < dim; ++i) {
                    damped.coeffRef(i, i) += lambda;
                }
                Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(damped);
                if (ldlt.info() != Eigen::Success) {
                    throw SingularSystemError("normal equations are not positive definite");
                }
                delta = ldlt.solve(-g);
            }
            if (!delta.allFinite()) {
                throw SingularSystemError("normal equations produced a non-finite step");
            }

            std::map<int, Sim3Transform> trial = graph.nodes();
            for (const int id : free_ids) {
                trial[id] = trial[id] * sim3_exp(delta.segment<7>(7 * block[id]));
            }
            const double trial_cost = total_cost(graph, trial, cfg);
            if (trial_cost < cost) {
                for (const int id : free_ids) {
                    graph.set_pose(id, trial[id]);
                }
                const double rel = (cost - trial_cost) / cost;
                cost             = trial_cost;
                report.chi2_trace.push_back(cost);
                lambda   = std::max(lambda / cfg.lambda_factor, 1e-12);
                accepted = true;
                if (rel < cfg.chi2_rel_tol) {
                    report.converged = true;
                }
            } else {
                lambda *= cfg.lambda_factor;
            }
        }
        if (!accepted) {
            // No descent even with a tiny step: the current poses are a minimum.
            report.converged = true;
            break;
        }
        if (report.converged) {
            break;
        }
    }
    report.final_chi2 = cost;
    return report;
}

std::vector<PoseUpdate> apply_solution(const PoseGraph &graph, ChainedTrajectory &trajectory) {
    std::vector<PoseUpdate> out;
    out.reserve(trajectory.size());
    for (std::size_t k = 0; k < trajectory.size(); ++k) {
        const int  id = trajectory.frame_ids[k];
        const auto it = graph.nodes().find(id);
        if (it == graph.nodes().end()) {
            continue;
        }
        out.push_back({id, trajectory.poses[k], it->second});
        trajectory.poses[k] = it->second;
    }
    return out;
}

std::string edge_line(const Sim3Constraint &edge) {
    std::ostringstream os;
    os.precision(17);
    os << "EDGE_SIM3 " << edge.from_node << ' ' << edge.to_node << ' ' << to_text(edge.measurement) << ' '
       << edge.information << ' ' << edge_kind_name(edge.kind);
    return os.str();
}

void write_graph(std::ostream &out, const PoseGraph &graph) {
    for (const auto &[id, pose] : graph.nodes()) {
        out << "VERTEX_SIM3 " << id << ' ' << to_text(pose) << '\n';
    }
    for (const int id : graph.fixed()) {
        out << "FIX " << id << '\n';
    }
    for (const auto &e : graph.edges()) {
        out << edge_line(e) << '\n';
    }
}

PoseGraph read_graph(std::istream &in) {
    PoseGraph                   g;
    std::vector<Sim3Constraint> edges;
    std::vector<int>            fixed;
    std::string                 line;
    int                         line_no = 0;
    auto fail = [&](const std::string &why) {
        throw IoError("graph line " + std::to_string(line_no) + ": " + why);
    };
    auto read_sim3 = [&](std::istringstream &ls) {
        std::vector<double> f(8);
        for (auto &v : f) {
            if (!(ls >> v)) {
                fail("expected 8 Sim(3) fields");
            }
        }
        return sim3_from_fields(f);
    };
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string        tag;
        if (!(ls >> tag) || tag.starts_with('#')) {
            continue;
        }
        if (tag == "VERTEX_SIM3") {
            int id = 0;
            if (!(ls >> id)) {
                fail("missing vertex id");
            }
            g.add_node(id, read_sim3(ls));
        } else if (tag == "EDGE_SIM3") {
            Sim3Constraint e;
            if (!(ls >> e.from_node >> e.to_node)) {
                fail("missing edge endpoints");
            }
            e.measurement = read_sim3(ls);
            if (!(ls >> e.information)) {
                fail("missing edge information");
            }
            std::string kind;
            if (ls >> kind) {
                if (kind == "loop") {
                    e.kind = EdgeKind::loop;
                } else if (kind == "inter_submap") {
                    e.kind = EdgeKind::inter_submap;
                } else if (kind == "sequential") {
                    e.kind = EdgeKind::sequential;
                } else {
                    fail("unknown edge kind '" + kind + "'");
                }
            }
            edges.push_back(e);
        } else if (tag == "FIX") {
            int id = 0;
            if (!(ls >> id)) {
                fail("missing fixed id");
            }
            fixed.push_back(id);
        } else {
            fail("unknown record '" + tag + "'");
        }
    }
    try {
        for (const auto &e : edges) {
            g.add_edge(e);
        }
        for (const int id : fixed) {
            g.fix(id);
        }
    } catch (const ConfigError &e) {
        throw IoError(e.what());
    }
    if (fixed.empty() && !g.nodes().empty()) {
        g.fix(g.nodes().begin()->first);
    }
    return g;
}

} // namespace surfelslam
