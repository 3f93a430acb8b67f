// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// CPU splatting of 2D Gaussian surfels.
//
// Pixel (x, y) has its center at image coordinate (x, y). Per pixel, surfels
// are composited front to back in ascending camera depth of their means
// (ties broken by list index):
//
//   w_i   = opacity_i * exp(-0.5 d^T Sigma_i^-1 d),   d = p - center_i
//   color = sum_i c_i w_i T_i,  depth = sum_i z_i w_i T_i,  accum = sum_i w_i T_i
//   T_i   = prod_{j<i} (1 - w_j)
//
#pragma once

#include "surfelslam/lie.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace surfelslam {

struct CameraIntrinsics {
    double fx{0.0};
    double fy{0.0};
    double cx{0.0};
    double cy{0.0};
    int    width{0};
    int    height{0};

    /// Throws ConfigError when any invariant is violated.
    void validate() const;
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

/// A planar Gaussian primitive. The disk spans the rotation's local x/y axes;
/// its normal is the local z axis.
struct Surfel {
    Vec3           mean{Vec3::Zero()};
    UnitQuaternion rotation;
    Vec2           scale{Vec2::Ones()};
    double         opacity{1.0};
    Vec3           color{Vec3::Zero()};
    double         confidence{1.0};
    int            keyframe_id{-1};
    int            submap_id{-1};

    Vec3 normal() const { return rotation.rotate(Vec3::UnitZ()); }
};

/// Dense row-major image of `channels` doubles per pixel.
class Image {
public:
    Image() = default;
    Image(int width, int height, int channels, double fill = 0.0)
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<std::size_t>(width) * height * channels, fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    bool empty() const { return data_.empty(); }

    double &at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
    double  at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

    std::span<double>       data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool same_shape(const Image &o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }
    friend bool operator==(const Image &, const Image &) = default;

private:
    std::size_t index(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int                 width_{0};
    int                 height_{0};
    int                 channels_{0};
    std::vector<double> data_;
};

struct RenderBuffers {
    Image       color;        // 3 channels
    Image       depth;        // 1 channel, camera units
    Image       accumulation; // 1 channel
    std::size_t degenerate_skipped{0};
};

struct RasterConfig {
    double near_plane{1e-2};
    /// Surfels whose projected center lies more than this fraction of the image
    /// size outside the image are culled; the affine footprint is meaningless there.
    double guard_band{0.5};
    /// Compositing stops once transmittance drops below this value.
    double transmittance_cutoff{1e-4};
    /// Upper clamp on w_i. 1.0 disables clamping.
    double weight_clamp{1.0};
    /// Half-width of the per-surfel pixel footprint, in standard deviations.
    double footprint_sigmas{3.0};
    /// Screen covariances with larger condition numbers are skipped.
    double max_condition{1e8};
};

struct Footprint {
    enum class Status { visible, culled, degenerate };
    Status status{Status::culled};
    Vec2   center{Vec2::Zero()};
    Mat2   covariance{Mat2::Zero()};
    Mat2   conic{Mat2::Zero()};
    double depth{0.0};
    /// Inclusive pixel bounding box, clipped to the image; empty when x0 > x1.
    int x0{0}, x1{-1}, y0{0}, y1{-1};
};

/// Projects a surfel seen from a camera with pose `camera_to_world`. For a
/// Sim(3) pose the camera frame is measured in the camera's own units.
Footprint project_surfel(const Surfel &surfel, const Sim3Transform &camera_to_world,
                         const CameraIntrinsics &intr, const RasterConfig &cfg = {});
Footprint project_surfel(const Surfel &surfel, const SE3Pose &camera_to_world,
                         const CameraIntrinsics &intr, const RasterConfig &cfg = {});

/// OpenMP-parallel over image rows; results are independent of thread count.
RenderBuffers render(std::span<const Surfel> surfels, const Sim3Transform &camera_to_world,
                     const CameraIntrinsics &intr, const RasterConfig &cfg = {});
RenderBuffers render(std::span<const Surfel> surfels, const SE3Pose &camera_to_world,
                     const CameraIntrinsics &intr, const RasterConfig &cfg = {});

struct LossWeights {
    double mse{1.0};
    double depth{0.0};
};

/// mse * MSE(rgb) + depth * MSE(depth over pixels with accumulation > 0.5).
/// Throws ConfigError on dimension mismatch.
double render_loss(const RenderBuffers &buffers, const Image &target_rgb, const Image &target_depth,
                   const LossWeights &weights);

struct RenderTargets {
    const Image *rgb{nullptr};
    const Image *depth{nullptr};
};

/// Loss value plus gradient and Gauss-Newton diagonal with respect to per-surfel
/// color and opacity, holding geometry and the depth ordering fixed.
struct AppearanceGradient {
    double              loss{0.0};
    std::vector<Vec3>   d_color;
    std::vector<double> d_opacity;
    std::vector<Vec3>   h_color;
    std::vector<double> h_opacity;
};

AppearanceGradient grad_color_opacity(std::span<const Surfel> surfels,
                                      const Sim3Transform &camera_to_world,
                                      const CameraIntrinsics &intr, const RenderTargets &targets,
                                      const LossWeights &weights, const RasterConfig &cfg = {});

/// Per surfel, the largest blending weight w_i T_i it receives on any pixel where
/// `pixel_mask` is non-zero (an empty mask selects every pixel).
std::vector<double> max_contribution(std::span<const Surfel> surfels,
                                     const Sim3Transform &camera_to_world,
                                     const CameraIntrinsics &intr,
                                     std::span<const unsigned char> pixel_mask,
                                     const RasterConfig &cfg = {});

/// Per pixel, the index of the surfel with the largest blending weight w_i T_i,
/// or -1 where nothing is drawn.
std::vector<int> dominant_surfel(std::span<const Surfel> surfels, const Sim3Transform &camera_to_world,
                                 const CameraIntrinsics &intr, const RasterConfig &cfg = {});

namespace reference {

/// Single-threaded per-pixel loop over every surfel; kept as the ground truth
/// for the parallel kernels.
RenderBuffers render_serial(std::span<const Surfel> surfels, const Sim3Transform &camera_to_world,
                            const CameraIntrinsics &intr, const RasterConfig &cfg = {});

/// Single-threaded gradient using the explicit O(n^2) per-pixel expansion.
AppearanceGradient grad_color_opacity_serial(std::span<const Surfel> surfels,
                                             const Sim3Transform &camera_to_world,
                                             const CameraIntrinsics &intr,
                                             const RenderTargets &targets,
                                             const LossWeights &weights,
                                             const RasterConfig &cfg = {});

} // namespace reference

} // namespace surfelslam
