// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "surfelslam/loop_closure.hpp"

#include "surfelslam/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

namespace surfelslam {

namespace {

double fit_scale(std::span<const Vec3> b, std::span<const Vec3> a, const std::vector<char> &keep) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (keep[k] != 0) {
            num += b[k].dot(a[k]);
            den += a[k].squaredNorm();
        }
    }
    if (!(den > 1e-12)) {
        throw DegenerateConfigurationError("scale estimation: reference points are all near the origin");
    }
    return num / den;
}

double median(std::vector<double> v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) {
        return *mid;
    }
    return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

} // namespace

double estimate_scale(std::span<const Vec3> points_b, std::span<const Vec3> points_a, bool mad_rejection) {
    if (points_b.size() != points_a.size()) {
        throw DegenerateConfigurationError("scale estimation: point lists differ in length");
    }
    if (points_a.size() < 10) {
        throw DegenerateConfigurationError("scale estimation needs at least 10 point pairs");
    }
    std::vector<char> keep(points_a.size(), 1);
    double            s = fit_scale(points_b, points_a, keep);
    if (mad_rejection) {
        std::vector<double> res(points_a.size());
        for (std::size_t k = 0; k < res.size(); ++k) {
            res[k] = (points_b[k] - s * points_a[k]).norm();
        }
        const double med = median(res);
        std::vector<double> dev(res.size());
        for (std::size_t k = 0; k < res.size(); ++k) {
            dev[k] = std::abs(res[k] - med);
        }
        const double mad = 1.4826 * median(dev);
        std::size_t  kept = 0;
        for (std::size_t k = 0; k < res.size(); ++k) {
            keep[k] = res[k] <= med + 3.0 * mad ? 1 : 0;
            kept += keep[k];
        }
        if (kept >= 10) {
            s = fit_scale(points_b, points_a, keep);
        }
    }
    if (!(s > 0.0)) {
        throw RelocalizationInconsistencyError("relative scale " + std::to_string(s) + " is not positive");
    }
    return s;
}

void match_points(const FramePrediction &b, const FramePrediction &a, std::vector<Vec3> &points_b,
                  std::vector<Vec3> &points_a) {
    points_b.clear();
    points_a.clear();
    std::unordered_map<int, std::size_t> index;
    index.reserve(a.pixels.size());
    for (std::size_t k = 0; k < a.pixels.size(); ++k) {
        index.emplace(a.pixels[k], k);
    }
    for (std::size_t k = 0; k < b.pixels.size(); ++k) {
        const auto it = index.find(b.pixels[k]);
        if (it != index.end()) {
            points_b.push_back(b.points_cam[k]);
            points_a.push_back(a.points_cam[it->second]);
        }
    }
}

std::vector<LoopCandidate> detect(const Oracle &oracle, std::span<const SubmapDescriptor> bag,
                                  const SubmapDescriptor &current, int frame_id, const LoopConfig &cfg) {
    const Eigen::VectorXd feature = oracle.frame_feature(frame_id);
    std::vector<LoopCandidate> out;
    double best_dist  = 0.0;
    double best_covis = 0.0;
    for (const auto &d : bag) {
        if (d.submap_id > current.submap_id - cfg.submap_gap) {
            continue;
        }
        const double dist = (feature - d.feature).norm();
        if (dist > cfg.feature_threshold) {
            continue;
        }
        // The last frame of a submap is owned by its successor.
        const int last  = d.last_frame > d.first_frame ? d.last_frame - 1 : d.last_frame;
        const int hist  = oracle.most_covisible(frame_id, d.first_frame, last);
        const double cv = oracle.covisibility(frame_id, hist);
        if (cv < cfg.min_covisibility) {
            continue;
        }
        if (out.empty() || dist < best_dist || (dist == best_dist && cv > best_covis)) {
            out.assign(1, {frame_id, hist, d.submap_id, current.submap_id});
            best_dist  = dist;
            best_covis = cv;
        }
    }
    return out;
}

Sim3Constraint build_constraint(int current_frame, int historical_frame, const SE3Pose &reloc_pose,
                                const SE3Pose &hist_pose, double scale, const LoopConfig &cfg) {
    if (!(scale > 0.0)) {
        throw RelocalizationInconsistencyError("loop constraint needs a positive scale");
    }
    const SE3Pose  rel = reloc_pose.inverse() * hist_pose;
    Sim3Constraint e;
    e.from_node   = current_frame;
    e.to_node     = historical_frame;
    e.measurement = Sim3Transform(scale, rel.rotation, cfg.scale_translation ? scale * rel.translation : rel.translation);
    e.information = cfg.information;
    e.kind        = EdgeKind::loop;
    return e;
}

} // namespace surfelslam
