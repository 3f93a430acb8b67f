// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "surfelslam/lie.hpp"
#include "surfelslam/raster.hpp"

#include <optional>
#include <string>
#include <vector>

namespace surfelslam {

struct TimedPose {
    double        timestamp{0.0};
    Sim3Transform pose;
};

using Trajectory = std::vector<TimedPose>;

/// Pairs estimate and ground-truth entries whose timestamps differ by at most
/// `max_dt`, each ground-truth entry used once, in estimate order.
std::vector<std::pair<Vec3, Vec3>> associate(const Trajectory &estimate, const Trajectory &gt, double max_dt = 0.01);

/// RMSE of translations after the least-squares Sim(3) alignment of the
/// estimate onto the ground truth. Throws ConfigError with fewer than 3 pairs.
double ate_rmse_sim3(const Trajectory &estimate, const Trajectory &gt, double max_dt = 0.01);

/// PSNR in dB for images in [0, 1]; `exact` is set (and `db` left at 0) when
/// the images are identical.
struct Psnr {
    double db{0.0};
    bool   exact{false};

    std::string to_string() const;
};

Psnr psnr(const Image &rendered, const Image &target);

/// Mean SSIM over all valid 11x11 windows (Gaussian, sigma 1.5), averaged over
/// channels. Throws ConfigError for images smaller than the window.
double ssim(const Image &rendered, const Image &target);

enum class DepthAlignment { median_ratio, least_squares };

/// Mean |s * rendered - gt| over pixels with gt > 0 and accumulation > 0.5,
/// where s aligns the rendered depth to the ground truth. Throws ConfigError
/// for an empty mask.
double depth_l1_scale_aligned(const Image &rendered, const Image &gt, const Image &accumulation,
                              DepthAlignment mode = DepthAlignment::median_ratio);

} // namespace surfelslam
