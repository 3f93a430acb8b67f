// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Edge linearization fans out over edges; every edge writes only its own slot,
// so the assembled normal equations do not depend on the thread count.
//
#include "../pose_graph_internal.hpp"

#include <exception>

namespace surfelslam {

std::vector<EdgeLinearization> linearize(const PoseGraph &graph, const SolverConfig &cfg) {
    const auto                    &edges = graph.edges();
    std::vector<EdgeLinearization> out(edges.size());
    const int                      n = static_cast<int>(edges.size());
    std::exception_ptr             error;
#pragma omp parallel for schedule(static)
    for (int k = 0; k < n; ++k) {
        try {
            const Sim3Constraint &e = edges[k];
            out[k] = detail::linearize_edge(e, graph.pose(e.from_node), graph.pose(e.to_node), cfg.fd_step);
        } catch (...) {
#pragma omp critical(surfelslam_linearize_error)
            if (!error) {
                error = std::current_exception();
            }
        }
    }
    if (error) {
        std::rethrow_exception(error);
    }
    return out;
}

namespace reference {

std::vector<EdgeLinearization> linearize_serial(const PoseGraph &graph, const SolverConfig &cfg) {
    std::vector<EdgeLinearization> out;
    out.reserve(graph.edges().size());
    for (const auto &e : graph.edges()) {
        out.push_back(detail::linearize_edge(e, graph.pose(e.from_node), graph.pose(e.to_node), cfg.fd_step));
    }
    return out;
}

} // namespace reference

} // namespace surfelslam
