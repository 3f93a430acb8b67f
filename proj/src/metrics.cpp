// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "surfelslam/metrics.hpp"

#include "surfelslam/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace surfelslam {

std::vector<std::pair<Vec3, Vec3>> associate(const Trajectory &estimate, const Trajectory &gt, double max_dt) {
    std::vector<std::pair<Vec3, Vec3>> out;
    std::vector<char>                  used(gt.size(), 0);
    for (const auto &e : estimate) {
        // Ground truth is expected sorted by time; pick the nearest unused entry.
        const auto it   = std::lower_bound(gt.begin(), gt.end(), e.timestamp,
                                           [](const TimedPose &p, double t) { return p.timestamp < t; });
        std::ptrdiff_t best = -1;
        double         best_dt = max_dt;
        for (auto c = (it == gt.begin() ? it : it - 1); c != gt.end() && c <= it; ++c) {
            const double dt = std::abs(c->timestamp - e.timestamp);
            const auto   k  = c - gt.begin();
            if (dt <= best_dt && used[k] == 0) {
                best    = k;
                best_dt = dt;
            }
        }
        if (best >= 0) {
            used[best] = 1;
            out.emplace_back(e.pose.translation(), gt[best].pose.translation());
        }
    }
    return out;
}

double ate_rmse_sim3(const Trajectory &estimate, const Trajectory &gt, double max_dt) {
    const auto pairs = associate(estimate, gt, max_dt);
    if (pairs.size() < 3) {
        throw ConfigError("ATE needs at least 3 associated poses, got " + std::to_string(pairs.size()));
    }
    std::vector<Vec3> src;
    std::vector<Vec3> dst;
    for (const auto &[e, g] : pairs) {
        src.push_back(e);
        dst.push_back(g);
    }
    const Sim3Transform align = umeyama_sim3(src, dst);
    double              sum   = 0.0;
    for (std::size_t k = 0; k < src.size(); ++k) {
        sum += (align.act(src[k]) - dst[k]).squaredNorm();
    }
    return std::sqrt(sum / static_cast<double>(src.size()));
}

std::string Psnr::to_string() const {
    if (exact) {
        return "exact";
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", db);
    return buf;
}

Psnr psnr(const Image &rendered, const Image &target) {
    if (!rendered.same_shape(target)) {
        throw ConfigError("psnr: dimension mismatch");
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < rendered.data().size(); ++k) {
        const double d = rendered.data()[k] - target.data()[k];
        sum += d * d;
    }
    if (sum == 0.0) {
        return {0.0, true};
    }
    const double mse = sum / static_cast<double>(rendered.data().size());
    return {10.0 * std::log10(1.0 / mse), false};
}

double ssim(const Image &rendered, const Image &target) {
    constexpr int    kWin   = 11;
    constexpr double kSigma = 1.5;
    constexpr double c1     = 0.01 * 0.01;
    constexpr double c2     = 0.03 * 0.03;
    if (!rendered.same_shape(target)) {
        throw ConfigError("ssim: dimension mismatch");
    }
    if (rendered.width() < kWin || rendered.height() < kWin) {
        throw ConfigError("ssim: image smaller than the 11x11 window");
    }
    double w[kWin][kWin];
    double wsum = 0.0;
    for (int y = 0; y < kWin; ++y) {
        for (int x = 0; x < kWin; ++x) {
            const double dx = x - kWin / 2;
            const double dy = y - kWin / 2;
            w[y][x]         = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
            wsum += w[y][x];
        }
    }
    for (auto &row : w) {
        for (double &v : row) {
            v /= wsum;
        }
    }

    const int nx    = rendered.width() - kWin + 1;
    const int ny    = rendered.height() - kWin + 1;
    double    total = 0.0;
    for (int c = 0; c < rendered.channels(); ++c) {
        double channel_sum = 0.0;
        for (int oy = 0; oy < ny; ++oy) {
            for (int ox = 0; ox < nx; ++ox) {
                double mu_a = 0.0, mu_b = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
                for (int y = 0; y < kWin; ++y) {
                    for (int x = 0; x < kWin; ++x) {
                        const double a = rendered.at(ox + x, oy + y, c);
                        const double b = target.at(ox + x, oy + y, c);
                        const double g = w[y][x];
                        mu_a += g * a;
                        mu_b += g * b;
                        aa += g * a * a;
                        bb += g * b * b;
                        ab += g * a * b;
                    }
                }
                const double var_a = aa - mu_a * mu_a;
                const double var_b = bb - mu_b * mu_b;
                const double cov   = ab - mu_a * mu_b;
                channel_sum += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            }
        }
        total += channel_sum / (static_cast<double>(nx) * ny);
    }
    return total / rendered.channels();
}

double depth_l1_scale_aligned(const Image &rendered, const Image &gt, const Image &accumulation,
                              DepthAlignment mode) {
    if (!rendered.same_shape(gt) || !rendered.same_shape(accumulation)) {
        throw ConfigError("depth L1: dimension mismatch");
    }
    std::vector<std::size_t> mask;
    for (std::size_t k = 0; k < gt.data().size(); ++k) {
        if (gt.data()[k] > 0.0 && accumulation.data()[k] > 0.5 && rendered.data()[k] > 0.0) {
            mask.push_back(k);
        }
    }
    if (mask.empty()) {
        throw ConfigError("depth L1: no valid pixels");
    }
    double scale = 1.0;
    if (mode == DepthAlignment::median_ratio) {
        std::vector<double> ratios;
        ratios.reserve(mask.size());
        for (const auto k : mask) {
            ratios.push_back(gt.data()[k] / rendered.data()[k]);
        }
        const auto mid = ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2);
        std::nth_element(ratios.begin(), mid, ratios.end());
        scale = *mid;
        if (ratios.size() % 2 == 0) {
            scale = 0.5 * (scale + *std::max_element(ratios.begin(), mid));
        }
    } else {
        double num = 0.0;
        double den = 0.0;
        for (const auto k : mask) {
            num += rendered.data()[k] * gt.data()[k];
            den += rendered.data()[k] * rendered.data()[k];
        }
        scale = num / den;
    }
    double sum = 0.0;
    for (const auto k : mask) {
        sum += std::abs(scale * rendered.data()[k] - gt.data()[k]);
    }
    return sum / static_cast<double>(mask.size());
}

} // namespace surfelslam
