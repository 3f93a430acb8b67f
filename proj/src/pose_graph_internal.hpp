// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "surfelslam/pose_graph.hpp"

namespace surfelslam::detail {

/// Central differences of the edge residual under right perturbations of both endpoints.
EdgeLinearization linearize_edge(const Sim3Constraint &edge, const Sim3Transform &from_pose,
                                 const Sim3Transform &to_pose, double step);

} // namespace surfelslam::detail
