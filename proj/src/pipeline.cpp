// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "surfelslam/pipeline.hpp"

#include "surfelslam/errors.hpp"
#include "surfelslam/metrics.hpp"

#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <thread>
#include <variant>

namespace surfelslam {

TrackingResult run_tracking(const Oracle &oracle, const TrackingConfig &cfg, const TrackingSink &sink) {
    const auto ranges = partition_frames(oracle.frame_count(), cfg.clip_length);

    TrackingResult                result;
    PoseGraph                     graph;
    std::vector<Submap>           sealed;
    std::vector<SubmapDescriptor> bag;
    std::vector<Sim3Transform>    links;
    std::vector<int>              emitted;
    TrackedSubmap                 prev;

    for (std::size_t k = 0; k < ranges.size(); ++k) {
        const int     id      = static_cast<int>(k);
        const bool    is_last = k + 1 == ranges.size();
        TrackedSubmap ts      = track_submap(oracle, id, ranges[k]);
        const int     origin_frame = ts.submap.frame_ids.front();

        Sim3Transform origin;
        if (k > 0) {
            const Sim3Transform x = inter_submap_constraint(prev.predictions.back(), ts.predictions.front(),
                                                            cfg.mad_rejection);
            const int a_origin = prev.submap.frame_ids.front();
            links.push_back(x);
            result.inter_submap_scales.push_back(x.scale());
            origin = graph.pose(a_origin) * x.inverse();
            graph.add_node(origin_frame, origin);
            graph.add_edge({origin_frame, a_origin, x, cfg.inter_submap_information, EdgeKind::inter_submap});
        } else {
            graph.add_node(origin_frame, origin);
            graph.fix(origin_frame);
        }

        const auto owned = ts.submap.owned_frames(is_last);
        for (std::size_t t = 1; t < owned.size(); ++t) {
            const Sim3Transform prev_local(ts.submap.local_poses[t - 1]);
            const Sim3Transform local(ts.submap.local_poses[t]);
            graph.add_node(owned[t], origin * local);
            graph.add_edge({owned[t - 1], owned[t], prev_local.inverse() * local, cfg.sequential_information,
                            EdgeKind::sequential});
        }

        bool new_loops = false;
        if (cfg.loop_closure) {
            for (std::size_t t = 0; t < owned.size(); ++t) {
                const int  j          = owned[t];
                const auto candidates = detect(oracle, bag, ts.submap.descriptor, j, cfg.loop);
                for (const auto &c : candidates) {
                    const SubmapDescriptor &desc = bag[static_cast<std::size_t>(c.historical_submap)];
                    try {
                        const FramePrediction reloc = oracle.reinterpret_frame(j, desc);
                        std::vector<Vec3>     pb;
                        std::vector<Vec3>     pa;
                        match_points(ts.predictions[t], reloc, pb, pa);
                        const double s    = estimate_scale(pb, pa, cfg.mad_rejection);
                        const SE3Pose &hist = sealed[static_cast<std::size_t>(c.historical_submap)].local_pose(
                            c.historical_frame);
                        graph.add_edge(build_constraint(j, c.historical_frame, reloc.pose_in_submap, hist, s, cfg.loop));
                        result.loops.push_back({c, s});
                        new_loops = true;
                    } catch (const InsufficientOverlapError &) {
                        ++result.relocalization_failures;
                    } catch (const DegenerateConfigurationError &) {
                        ++result.relocalization_failures;
                    } catch (const RelocalizationInconsistencyError &) {
                        ++result.relocalization_failures;
                    }
                }
            }
        }

        if (new_loops) {
            std::map<int, Sim3Transform> before;
            for (const int f : emitted) {
                before[f] = graph.pose(f);
            }
            optimize(graph, cfg.solver);
            ++result.pgo_runs;
            if (sink.correction && !emitted.empty()) {
                std::vector<PoseUpdate> updates;
                for (const auto &[f, old_pose] : before) {
                    updates.push_back({f, old_pose, graph.pose(f)});
                }
                sink.correction(updates);
            }
        }

        for (std::size_t t = 0; t < owned.size(); ++t) {
            if (sink.keyframe) {
                sink.keyframe(owned[t], graph.pose(owned[t]), ts.predictions[t]);
            }
            emitted.push_back(owned[t]);
        }
        bag.push_back(ts.submap.descriptor);
        sealed.push_back(ts.submap);
        prev = std::move(ts);
    }

    result.pre_pgo  = chain(sealed, links);
    result.post_pgo = result.pre_pgo;
    for (std::size_t k = 0; k < result.post_pgo.size(); ++k) {
        result.post_pgo.poses[k] = graph.pose(result.post_pgo.frame_ids[k]);
    }
    result.edges = graph.edges();
    return result;
}

std::vector<std::pair<double, Sim3Transform>> timed_poses(const ChainedTrajectory &trajectory,
                                                          const SyntheticScene &scene) {
    std::vector<std::pair<double, Sim3Transform>> out;
    for (std::size_t k = 0; k < trajectory.size(); ++k) {
        out.emplace_back(scene.timestamps.at(static_cast<std::size_t>(trajectory.frame_ids[k])), trajectory.poses[k]);
    }
    return out;
}

double trajectory_ate(const ChainedTrajectory &trajectory, const SyntheticScene &scene) {
    Trajectory est;
    Trajectory gt;
    for (const auto &[t, p] : timed_poses(trajectory, scene)) {
        est.push_back({t, p});
    }
    for (int f = 0; f < scene.frame_count(); ++f) {
        gt.push_back({scene.timestamps[f], Sim3Transform(scene.trajectory[f])});
    }
    return ate_rmse_sim3(est, gt);
}

namespace {

struct Stop {};
using Message = std::variant<KeyframePacket, std::vector<PoseUpdate>, Stop>;

/// Single-producer single-consumer queue; push blocks while full, and both
/// sides give up once the queue is closed.
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(std::max<std::size_t>(1, capacity)) {}

    bool push(Message m) {
        std::unique_lock lock(mutex_);
        not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
        if (closed_) {
            return false;
        }
        items_.push_back(std::move(m));
        not_empty_.notify_one();
        return true;
    }

    Message pop() {
        std::unique_lock lock(mutex_);
        not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
        if (items_.empty()) {
            return Stop{};
        }
        Message m = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return m;
    }

    void close() {
        std::lock_guard lock(mutex_);
        closed_ = true;
        not_full_.notify_all();
        not_empty_.notify_all();
    }

private:
    std::size_t             capacity_;
    std::deque<Message>     items_;
    bool                    closed_{false};
    std::mutex              mutex_;
    std::condition_variable not_full_;
    std::condition_variable not_empty_;
};

} // namespace

PipelineResult run_pipeline(const Oracle &oracle, const TrackingConfig &tracking, const MapperConfig &mapping,
                            std::size_t queue_capacity) {
    BoundedQueue       queue(queue_capacity);
    Mapper             mapper(oracle.scene().intrinsics, mapping);
    std::exception_ptr mapper_error;

    std::thread backend([&] {
        try {
            for (;;) {
                Message m = queue.pop();
                if (std::holds_alternative<Stop>(m)) {
                    break;
                }
                if (auto *p = std::get_if<KeyframePacket>(&m)) {
                    mapper.process(std::move(*p));
                } else {
                    mapper.apply_correction(std::get<std::vector<PoseUpdate>>(m));
                }
            }
        } catch (...) {
            mapper_error = std::current_exception();
            queue.close();
        }
    });

    TrackingSink sink;
    const int stride = std::max(1, mapping.keyframe_stride);
    sink.keyframe    = [&](int frame_id, const Sim3Transform &pose, const FramePrediction &prediction) {
        if (frame_id % stride != 0) {
            return;
        }
        queue.push(KeyframePacket{frame_id, pose, prediction, oracle.ground_truth(frame_id).color});
    };
    sink.correction = [&](const std::vector<PoseUpdate> &updates) { queue.push(updates); };

    PipelineResult result;
    try {
        result.tracking = run_tracking(oracle, tracking, sink);
        queue.push(Stop{});
    } catch (...) {
        queue.close();
        backend.join();
        throw;
    }
    backend.join();
    if (mapper_error) {
        std::rethrow_exception(mapper_error);
    }
    result.map          = mapper.map();
    result.mapper_stats = mapper.stats();
    result.ate_pre_pgo  = trajectory_ate(result.tracking.pre_pgo, oracle.scene());
    result.ate_post_pgo = trajectory_ate(result.tracking.post_pgo, oracle.scene());
    return result;
}

} // namespace surfelslam
