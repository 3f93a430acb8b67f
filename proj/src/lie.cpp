// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#include "surfelslam/lie.hpp"

#include "surfelslam/errors.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

namespace surfelslam {

namespace {

constexpr double kBranchTolerance = 1e-9;

// I_n(sigma) = integral_0^1 u^n exp(sigma u) du, for n = 0..4.
std::array<double, 5> exp_moments(double sigma) {
    std::array<double, 5> m{};
    if (std::abs(sigma) <= 1.0) {
        // sum_k sigma^k / (k! (n + k + 1)); 30 terms is far below double eps for |sigma| <= 1.
        for (int n = 0; n < 5; ++n) {
            double term = 1.0;
            double sum  = 0.0;
            for (int k = 0; k < 30; ++k) {
                sum += term / (n + k + 1);
                term *= sigma / (k + 1);
            }
            m[n] = sum;
        }
        return m;
    }
    const double es = std::exp(sigma);
    m[0]            = (es - 1.0) / sigma;
    for (int n = 1; n < 5; ++n) {
        m[n] = (es - n * m[n - 1]) / sigma;
    }
    return m;
}

} // namespace

// ---------------------------------------------------------------------------
// UnitQuaternion

UnitQuaternion::UnitQuaternion(double w, double x, double y, double z) : q_(w, x, y, z) {
    const double n = q_.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw DegenerateConfigurationError("quaternion has zero or non-finite norm");
    }
    q_.coeffs() /= n;
}

UnitQuaternion::UnitQuaternion(const Eigen::Quaterniond &q)
    : UnitQuaternion(q.w(), q.x(), q.y(), q.z()) {}

UnitQuaternion UnitQuaternion::from_normalized(double w, double x, double y, double z) {
    const Eigen::Quaterniond q(w, x, y, z);
    if (!(std::abs(q.norm() - 1.0) <= 1e-9)) {
        throw DegenerateConfigurationError("quaternion is not normalized");
    }
    UnitQuaternion out;
    out.q_ = q;
    return out;
}

UnitQuaternion UnitQuaternion::from_matrix(const Mat3 &rotation) {
    return UnitQuaternion(Eigen::Quaterniond(rotation));
}

UnitQuaternion UnitQuaternion::from_angle_axis(double angle, const Vec3 &axis) {
    return UnitQuaternion(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized())));
}

UnitQuaternion UnitQuaternion::operator-() const {
    UnitQuaternion r;
    r.q_.coeffs() = -q_.coeffs();
    return r;
}

UnitQuaternion UnitQuaternion::inverse() const {
    UnitQuaternion r;
    r.q_ = q_.conjugate();
    return r;
}

UnitQuaternion UnitQuaternion::canonical() const {
    bool flip = false;
    if (q_.w() != 0.0) {
        flip = q_.w() < 0.0;
    } else if (q_.x() != 0.0) {
        flip = q_.x() < 0.0;
    } else if (q_.y() != 0.0) {
        flip = q_.y() < 0.0;
    } else {
        flip = q_.z() < 0.0;
    }
    UnitQuaternion r = *this;
    if (flip) {
        r.q_.coeffs() = -r.q_.coeffs();
    }
    return r;
}

UnitQuaternion UnitQuaternion::aligned_to(const UnitQuaternion &reference) const {
    UnitQuaternion r = *this;
    if (q_.coeffs().dot(reference.q_.coeffs()) < 0.0) {
        r.q_.coeffs() = -r.q_.coeffs();
    }
    return r;
}

double UnitQuaternion::angle() const {
    const UnitQuaternion c = canonical();
    return 2.0 * std::atan2(c.q_.vec().norm(), c.q_.w());
}

UnitQuaternion operator*(const UnitQuaternion &a, const UnitQuaternion &b) {
    UnitQuaternion r;
    r.q_ = a.q_ * b.q_;
    r.q_.normalize();
    return r;
}

// ---------------------------------------------------------------------------
// SE3Pose

SE3Pose SE3Pose::inverse() const {
    const UnitQuaternion inv = rotation.inverse();
    return {inv, -inv.rotate(translation)};
}

Mat4 SE3Pose::matrix() const {
    Mat4 m                = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation.matrix();
    m.topRightCorner<3, 1>() = translation;
    return m;
}

SE3Pose operator*(const SE3Pose &a, const SE3Pose &b) {
    return {a.rotation * b.rotation, a.rotation.rotate(b.translation) + a.translation};
}

// ---------------------------------------------------------------------------
// Sim3Transform

Sim3Transform::Sim3Transform(double scale, const UnitQuaternion &rotation, const Vec3 &translation)
    : scale_(scale), rotation_(rotation), translation_(translation) {
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw DegenerateConfigurationError("Sim(3) scale must be positive and finite");
    }
}

Sim3Transform::Sim3Transform(const SE3Pose &pose)
    : scale_(1.0), rotation_(pose.rotation), translation_(pose.translation) {}

Sim3Transform Sim3Transform::inverse() const {
    const UnitQuaternion inv = rotation_.inverse();
    const double         s   = 1.0 / scale_;
    return {s, inv, -s * inv.rotate(translation_)};
}

Mat4 Sim3Transform::matrix() const {
    Mat4 m                   = Mat4::Identity();
    m.topLeftCorner<3, 3>()  = scale_ * rotation_.matrix();
    m.topRightCorner<3, 1>() = translation_;
    return m;
}

Sim3Transform operator*(const Sim3Transform &a, const Sim3Transform &b) {
    return {a.scale_ * b.scale_, a.rotation_ * b.rotation_, a.act(b.translation_)};
}

// ---------------------------------------------------------------------------
// Exp / log

Mat3 hat(const Vec3 &w) {
    Mat3 m;
    m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
    return m;
}

UnitQuaternion so3_exp(const Vec3 &omega) {
    const double theta = omega.norm();
    if (theta < kSeriesThreshold) {
        const double t2 = theta * theta;
        const double w  = 1.0 - t2 / 8.0 + t2 * t2 / 384.0;
        const double k  = 0.5 - t2 / 48.0 + t2 * t2 / 3840.0;
        return {w, k * omega.x(), k * omega.y(), k * omega.z()};
    }
    const double k = std::sin(0.5 * theta) / theta;
    return {std::cos(0.5 * theta), k * omega.x(), k * omega.y(), k * omega.z()};
}

Vec3 so3_log(const UnitQuaternion &q) {
    const UnitQuaternion c = q.canonical();
    const Vec3           v(c.x(), c.y(), c.z());
    const double         n = v.norm();
    const double         w = c.w();
    if (n < kSeriesThreshold) {
        // 2 atan(n / w) / n expanded in r = n / w.
        const double r2 = (n / w) * (n / w);
        return (2.0 / w) * (1.0 - r2 / 3.0 + r2 * r2 / 5.0) * v;
    }
    const double theta = 2.0 * std::atan2(n, w);
    if (std::numbers::pi - theta < kBranchTolerance) {
        throw BranchAmbiguityError("rotation angle at pi has no principal logarithm");
    }
    return (theta / n) * v;
}

Mat3 sim3_v_matrix(const Vec3 &omega, double sigma) {
    const double theta = omega.norm();
    double       a     = 0.0;
    if (std::abs(sigma) < kSeriesThreshold) {
        a = 1.0 + sigma / 2.0 + sigma * sigma / 6.0 + sigma * sigma * sigma / 24.0 +
            sigma * sigma * sigma * sigma / 120.0;
    } else {
        a = std::expm1(sigma) / sigma;
    }
    double b = 0.0;
    double c = 0.0;
    if (theta < kSeriesThreshold) {
        const auto   m  = exp_moments(sigma);
        const double t2 = theta * theta;
        b               = m[1] - t2 * m[3] / 6.0;
        c               = m[2] / 2.0 - t2 * m[4] / 24.0;
    } else {
        const double es    = std::exp(sigma);
        const double st    = std::sin(theta);
        const double ct    = std::cos(theta);
        const double denom = sigma * sigma + theta * theta;
        const double s_int = (es * (sigma * st - theta * ct) + theta) / denom;
        const double c_int = (es * (sigma * ct + theta * st) - sigma) / denom;
        b                  = s_int / theta;
        c                  = (a - c_int) / (theta * theta);
    }
    const Mat3 w = hat(omega);
    return a * Mat3::Identity() + b * w + c * w * w;
}

Sim3Transform sim3_compose(const Sim3Transform &a, const Sim3Transform &b) { return a * b; }

Sim3Tangent sim3_log(const Sim3Transform &t) {
    const Vec3   omega = so3_log(t.rotation());
    const double sigma = std::log(t.scale());
    const Mat3   v     = sim3_v_matrix(omega, sigma);
    Sim3Tangent  out;
    out.head<3>()     = v.partialPivLu().solve(t.translation());
    out.segment<3>(3) = omega;
    out[6]            = sigma;
    return out;
}

Sim3Transform sim3_exp(const Sim3Tangent &v) {
    const Vec3   rho   = v.head<3>();
    const Vec3   omega = v.segment<3>(3);
    const double sigma = v[6];
    return {std::exp(sigma), so3_exp(omega), sim3_v_matrix(omega, sigma) * rho};
}

Vec3 sim3_act(const Sim3Transform &t, const Vec3 &p) { return t.act(p); }

// ---------------------------------------------------------------------------
// Umeyama

Sim3Transform umeyama_sim3(std::span<const Vec3> source, std::span<const Vec3> target) {
    if (source.size() != target.size()) {
        throw DegenerateConfigurationError("umeyama: point lists differ in length");
    }
    const std::size_t n = source.size();
    if (n < 3) {
        throw DegenerateConfigurationError("umeyama: at least 3 correspondences required");
    }
    Vec3 mean_s = Vec3::Zero();
    Vec3 mean_t = Vec3::Zero();
    for (std::size_t k = 0; k < n; ++k) {
        mean_s += source[k];
        mean_t += target[k];
    }
    mean_s /= static_cast<double>(n);
    mean_t /= static_cast<double>(n);

    Mat3   cross   = Mat3::Zero();
    Mat3   cov_src = Mat3::Zero();
    double var_s   = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const Vec3 ds = source[k] - mean_s;
        const Vec3 dt = target[k] - mean_t;
        cross += dt * ds.transpose();
        cov_src += ds * ds.transpose();
        var_s += ds.squaredNorm();
    }
    cross /= static_cast<double>(n);
    cov_src /= static_cast<double>(n);
    var_s /= static_cast<double>(n);

    const Eigen::JacobiSVD<Mat3> src_svd(cov_src);
    const Vec3                   src_sv = src_svd.singularValues();
    if (!(src_sv[0] > 1e-24) || src_sv[1] < 1e-12 * src_sv[0]) {
        throw DegenerateConfigurationError("umeyama: source points are coincident or collinear");
    }

    const Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3                         sign = Mat3::Identity();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
        sign(2, 2) = -1.0;
    }
    const Mat3   r     = svd.matrixU() * sign * svd.matrixV().transpose();
    const double scale = (svd.singularValues().asDiagonal() * sign).trace() / var_s;
    if (!(scale > 0.0)) {
        throw DegenerateConfigurationError("umeyama: non-positive scale");
    }
    const Vec3 t = mean_t - scale * r * mean_s;
    return {scale, UnitQuaternion::from_matrix(r), t};
}

// ---------------------------------------------------------------------------
// Text form

std::string to_text(const Sim3Transform &t) {
    const auto &q = t.rotation();
    char        buf[256];
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g", t.scale(),
                  t.translation().x(), t.translation().y(), t.translation().z(), q.x(), q.y(), q.z(),
                  q.w());
    return buf;
}

Sim3Transform sim3_from_fields(std::span<const double> f) {
    if (f.size() != 8) {
        throw IoError("Sim(3) text form needs 8 fields");
    }
    try {
        return {f[0], UnitQuaternion(f[7], f[4], f[5], f[6]), Vec3(f[1], f[2], f[3])};
    } catch (const DegenerateConfigurationError &e) {
        throw IoError(std::string("invalid Sim(3) fields: ") + e.what());
    }
}

std::ostream &operator<<(std::ostream &os, const Sim3Transform &t) { return os << to_text(t); }

} // namespace surfelslam
