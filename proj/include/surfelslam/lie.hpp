// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Rotation, rigid and similarity transforms on R^3.
//
// Conventions used throughout the library:
//  * A transform T maps points expressed in a "child" frame into its "parent"
//    frame. Camera poses therefore map camera coordinates to world (or submap)
//    coordinates.
//  * A similarity acts as p -> s * R * p + t; scale and rotation are applied
//    jointly, so the homogeneous matrix is [[s R, t], [0, 1]].
//  * Tangent vectors of Sim(3) are ordered (translation[3], rotation[3], log-scale).
//
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace surfelslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Sim3Tangent = Eigen::Matrix<double, 7, 1>;

/// Threshold below which exp/log switch to series expansions.
inline constexpr double kSeriesThreshold = 1e-5;

/// Unit quaternion. Always normalized; storage order is (w, x, y, z).
class UnitQuaternion {
public:
    UnitQuaternion() = default;
    /// Normalizes the given components. Throws DegenerateConfigurationError on a zero quaternion.
    UnitQuaternion(double w, double x, double y, double z);
    explicit UnitQuaternion(const Eigen::Quaterniond &q);

    static UnitQuaternion identity() { return {}; }
    /// Stores the components without renormalizing, so serialized quaternions
    /// read back bit for bit. Throws DegenerateConfigurationError when the norm
    /// is off by more than 1e-9.
    static UnitQuaternion from_normalized(double w, double x, double y, double z);
    static UnitQuaternion from_matrix(const Mat3 &rotation);
    static UnitQuaternion from_angle_axis(double angle, const Vec3 &axis);

    double w() const { return q_.w(); }
    double x() const { return q_.x(); }
    double y() const { return q_.y(); }
    double z() const { return q_.z(); }
    const Eigen::Quaterniond &eigen() const { return q_; }

    Mat3 matrix() const { return q_.toRotationMatrix(); }
    Vec3 rotate(const Vec3 &p) const { return q_ * p; }
    // Exact sign flip; represents the same rotation.
    UnitQuaternion operator-() const;
    UnitQuaternion inverse() const;
    /// Representative with w >= 0. Ties at w == 0 are broken by the first
    /// non-zero of (x, y, z) being positive, so q and -q map to the same bits.
    UnitQuaternion canonical() const;
    /// Returns *this or its negation, whichever lies in the same hemisphere as `reference`.
    UnitQuaternion aligned_to(const UnitQuaternion &reference) const;
    /// Rotation angle in [0, pi].
    double angle() const;

    friend UnitQuaternion operator*(const UnitQuaternion &a, const UnitQuaternion &b);

private:
    Eigen::Quaterniond q_{Eigen::Quaterniond::Identity()};
};

/// Rigid-body transform.
struct SE3Pose {
    UnitQuaternion rotation;
    Vec3           translation{Vec3::Zero()};

    static SE3Pose identity() { return {}; }

    SE3Pose inverse() const;
    Vec3    act(const Vec3 &p) const { return rotation.rotate(p) + translation; }
    Mat4    matrix() const;

    friend SE3Pose operator*(const SE3Pose &a, const SE3Pose &b);
};

/// Similarity transform p -> scale * R p + t.
class Sim3Transform {
public:
    Sim3Transform() = default;
    /// Throws DegenerateConfigurationError when scale is not strictly positive and finite.
    Sim3Transform(double scale, const UnitQuaternion &rotation, const Vec3 &translation);
    /// Lifts a rigid transform with unit scale.
    explicit Sim3Transform(const SE3Pose &pose);

    static Sim3Transform identity() { return {}; }

    double                scale() const { return scale_; }
    const UnitQuaternion &rotation() const { return rotation_; }
    const Vec3           &translation() const { return translation_; }
    /// Drops the scale.
    SE3Pose se3() const { return {rotation_, translation_}; }

    Sim3Transform inverse() const;
    Vec3          act(const Vec3 &p) const { return scale_ * rotation_.rotate(p) + translation_; }
    Mat4          matrix() const;

    friend Sim3Transform operator*(const Sim3Transform &a, const Sim3Transform &b);

private:
    double         scale_{1.0};
    UnitQuaternion rotation_;
    Vec3           translation_{Vec3::Zero()};
};

Mat3 hat(const Vec3 &w);

/// SO(3) exponential of a rotation vector.
UnitQuaternion so3_exp(const Vec3 &omega);
/// SO(3) logarithm; principal branch. Throws BranchAmbiguityError at angle pi.
Vec3 so3_log(const UnitQuaternion &q);

/// Left-Jacobian-like coupling matrix of Sim(3): translation = V(omega, sigma) * rho.
Mat3 sim3_v_matrix(const Vec3 &omega, double sigma);

Sim3Transform sim3_compose(const Sim3Transform &a, const Sim3Transform &b);
Sim3Tangent   sim3_log(const Sim3Transform &t);
Sim3Transform sim3_exp(const Sim3Tangent &v);
Vec3          sim3_act(const Sim3Transform &t, const Vec3 &p);

/// Least-squares similarity mapping `source` onto `target` (Umeyama).
/// Throws DegenerateConfigurationError for fewer than 3 points, mismatched
/// lengths, or coincident/collinear sources.
Sim3Transform umeyama_sim3(std::span<const Vec3> source, std::span<const Vec3> target);

/// "s tx ty tz qx qy qz qw" at round-trip precision.
std::string   to_text(const Sim3Transform &t);
/// Parses the 8 fields written by to_text. Throws IoError on malformed input.
Sim3Transform sim3_from_fields(std::span<const double> fields);

std::ostream &operator<<(std::ostream &os, const Sim3Transform &t);

} // namespace surfelslam
