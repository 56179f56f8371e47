#pragma once

// Pinhole projection, rigid transforms and multi-view triangulation.
//
// Conventions: poses map world (object) coordinates into the camera frame,
// x_cam = R * x_world + t. Pixel coordinates put the centre of the top-left
// pixel at (0.5, 0.5); the image covers [0, width) x [0, height).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "semidense/error.hpp"

namespace semidense {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Mat4 = Eigen::Matrix<Scalar, 4, 4>;

using Pixel = Vec2<double>;

template <typename Scalar>
struct CameraIntrinsics {
  Scalar fx = 1;
  Scalar fy = 1;
  Scalar cx = 0;
  Scalar cy = 0;
  int width = 1;
  int height = 1;

  bool is_valid() const {
    return fx > 0 && fy > 0 && width > 0 && height > 0 && cx >= 0 && cx < width && cy >= 0 &&
           cy < height;
  }

  void validate() const {
    if (!is_valid()) throw Error(ErrorCode::kArgument, "invalid camera intrinsics");
  }

  Mat3<Scalar> matrix() const {
    Mat3<Scalar> k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  bool contains(const Vec2<Scalar>& u) const {
    return u.x() >= 0 && u.y() >= 0 && u.x() < width && u.y() < height;
  }

  // Normalized image-plane coordinates (z = 1 ray).
  Vec3<Scalar> ray(const Vec2<Scalar>& u) const {
    return Vec3<Scalar>((u.x() - cx) / fx, (u.y() - cy) / fy, Scalar(1));
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

template <typename Scalar>
class SE3Pose {
 public:
  SE3Pose() : rotation_(Mat3<Scalar>::Identity()), translation_(Vec3<Scalar>::Zero()) {}
  SE3Pose(const Mat3<Scalar>& rotation, const Vec3<Scalar>& translation)
      : rotation_(rotation), translation_(translation) {}

  static SE3Pose Identity() { return SE3Pose(); }

  static SE3Pose FromMatrix(const Mat4<Scalar>& m) {
    return SE3Pose(m.template topLeftCorner<3, 3>(), m.template topRightCorner<3, 1>());
  }

  // Rotation vector (axis * angle) and translation.
  static SE3Pose FromRotationVector(const Vec3<Scalar>& omega, const Vec3<Scalar>& t) {
    return SE3Pose(so3_exp(omega), t);
  }

  static Mat3<Scalar> so3_exp(const Vec3<Scalar>& omega) {
    const Scalar angle = omega.norm();
    if (angle < Scalar(1e-12)) {
      Mat3<Scalar> w;
      w << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(), omega.x(), 0;
      return Mat3<Scalar>::Identity() + w;
    }
    return Eigen::AngleAxis<Scalar>(angle, omega / angle).toRotationMatrix();
  }

  const Mat3<Scalar>& rotation() const { return rotation_; }
  const Vec3<Scalar>& translation() const { return translation_; }

  Mat4<Scalar> matrix() const {
    Mat4<Scalar> m = Mat4<Scalar>::Identity();
    m.template topLeftCorner<3, 3>() = rotation_;
    m.template topRightCorner<3, 1>() = translation_;
    return m;
  }

  Vec3<Scalar> operator*(const Vec3<Scalar>& p) const { return rotation_ * p + translation_; }

  SE3Pose operator*(const SE3Pose& other) const {
    return SE3Pose(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_);
  }

  SE3Pose inverse() const {
    const Mat3<Scalar> rt = rotation_.transpose();
    return SE3Pose(rt, -(rt * translation_));
  }

  // Camera centre in world coordinates.
  Vec3<Scalar> center() const { return -(rotation_.transpose() * translation_); }

  // Optical axis (+z of the camera) expressed in world coordinates.
  Vec3<Scalar> optical_axis() const { return rotation_.row(2).transpose(); }

  bool is_valid(Scalar tol = Scalar(1e-9)) const {
    if (!rotation_.allFinite() || !translation_.allFinite()) return false;
    const Scalar ortho = (rotation_.transpose() * rotation_ - Mat3<Scalar>::Identity()).norm();
    return ortho <= tol && std::abs(rotation_.determinant() - Scalar(1)) <= tol;
  }

  template <typename T>
  SE3Pose<T> cast() const {
    return SE3Pose<T>(rotation_.template cast<T>(), translation_.template cast<T>());
  }

 private:
  Mat3<Scalar> rotation_;
  Vec3<Scalar> translation_;
};

using SE3d = SE3Pose<double>;
using Camerad = CameraIntrinsics<double>;

inline constexpr double kMinDepth = 1e-8;

// Geodesic angle between two rotations, radians in [0, pi].
template <typename Scalar>
Scalar rotation_angle(const Mat3<Scalar>& a, const Mat3<Scalar>& b) {
  const Scalar c = ((a.transpose() * b).trace() - Scalar(1)) / Scalar(2);
  return std::acos(std::clamp(c, Scalar(-1), Scalar(1)));
}

template <typename Scalar>
Vec2<Scalar> project_camera(const CameraIntrinsics<Scalar>& k, const Vec3<Scalar>& p_cam,
                            Scalar min_depth = Scalar(kMinDepth)) {
  if (!(p_cam.z() > min_depth)) throw Error(ErrorCode::kCheirality, "point behind camera");
  return Vec2<Scalar>(k.fx * p_cam.x() / p_cam.z() + k.cx, k.fy * p_cam.y() / p_cam.z() + k.cy);
}

template <typename Scalar>
Vec2<Scalar> project(const SE3Pose<Scalar>& pose, const CameraIntrinsics<Scalar>& k,
                     const Vec3<Scalar>& p_world, Scalar min_depth = Scalar(kMinDepth)) {
  return project_camera(k, Vec3<Scalar>(pose * p_world), min_depth);
}

template <typename Scalar>
Vec3<Scalar> backproject(const Vec2<Scalar>& u, Scalar depth, const CameraIntrinsics<Scalar>& k) {
  if (!(depth > 0)) throw Error(ErrorCode::kDomain, "backproject needs positive depth");
  return Vec3<Scalar>((u.x() - k.cx) * depth / k.fx, (u.y() - k.cy) * depth / k.fy, depth);
}

// Pose taking points from the frame of `from` into the frame of `to`.
template <typename Scalar>
SE3Pose<Scalar> relative_pose(const SE3Pose<Scalar>& from, const SE3Pose<Scalar>& to) {
  return to * from.inverse();
}

// 2x3 derivative of the pinhole projection with respect to the camera-frame point.
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 3> projection_jacobian(const CameraIntrinsics<Scalar>& k,
                                                const Vec3<Scalar>& p_cam) {
  const Scalar iz = Scalar(1) / p_cam.z();
  Eigen::Matrix<Scalar, 2, 3> j;
  j << k.fx * iz, 0, -k.fx * p_cam.x() * iz * iz, 0, k.fy * iz, -k.fy * p_cam.y() * iz * iz;
  return j;
}

template <typename Scalar>
struct Observation {
  SE3Pose<Scalar> pose;
  CameraIntrinsics<Scalar> camera;
  Vec2<Scalar> pixel;
};

struct TriangulationOptions {
  double min_depth = kMinDepth;
  double max_condition = 1e12;
  int max_polish_iterations = 10;
};

// Multi-view DLT followed by a Gauss-Newton polish on reprojection error.
template <typename Scalar>
Vec3<Scalar> triangulate(std::span<const Observation<Scalar>> obs,
                         const TriangulationOptions& options = {}) {
  using Vec4 = Eigen::Matrix<Scalar, 4, 1>;
  if (obs.size() < 2) throw Error(ErrorCode::kArgument, "triangulation needs >= 2 views");

  Scalar baseline = 0;
  const Vec3<Scalar> c0 = obs[0].pose.center();
  for (const auto& o : obs) baseline = std::max(baseline, (o.pose.center() - c0).norm());
  if (!(baseline > Scalar(1e-9) * (Scalar(1) + c0.norm()))) {
    throw Error(ErrorCode::kDegenerate, "triangulation views share one camera centre");
  }

  Eigen::Matrix<Scalar, Eigen::Dynamic, 4> a(2 * obs.size(), 4);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Vec3<Scalar> x = obs[i].camera.ray(obs[i].pixel);
    Eigen::Matrix<Scalar, 3, 4> p;
    p << obs[i].pose.rotation(), obs[i].pose.translation();
    a.row(2 * i) = x.x() * p.row(2) - p.row(0);
    a.row(2 * i + 1) = x.y() * p.row(2) - p.row(1);
    a.row(2 * i).normalize();
    a.row(2 * i + 1).normalize();
  }
  Eigen::JacobiSVD<Eigen::Matrix<Scalar, Eigen::Dynamic, 4>> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // Parallel rays leave a two-dimensional null space, so the third singular
  // value collapses.
  if (!(sv(2) > 0) || sv(0) / sv(2) > Scalar(options.max_condition)) {
    throw Error(ErrorCode::kDegenerate, "triangulation rays are (near) parallel");
  }
  const Vec4 h = svd.matrixV().col(3);
  if (std::abs(h(3)) < std::numeric_limits<Scalar>::epsilon() * h.norm()) {
    throw Error(ErrorCode::kDegenerate, "triangulated point at infinity");
  }
  Vec3<Scalar> point = h.template head<3>() / h(3);

  const auto cost_of = [&](const Vec3<Scalar>& p, Scalar* cost) {
    Scalar c = 0;
    for (const auto& o : obs) {
      const Vec3<Scalar> pc = o.pose * p;
      if (!(pc.z() > Scalar(options.min_depth))) return false;
      c += (project_camera(o.camera, pc, Scalar(0)) - o.pixel).squaredNorm();
    }
    *cost = c;
    return true;
  };

  Scalar cost = 0;
  if (!cost_of(point, &cost)) throw Error(ErrorCode::kCheirality, "triangulated point behind a camera");

  for (int it = 0; it < options.max_polish_iterations; ++it) {
    Mat3<Scalar> jtj = Mat3<Scalar>::Zero();
    Vec3<Scalar> jtr = Vec3<Scalar>::Zero();
    for (const auto& o : obs) {
      const Vec3<Scalar> pc = o.pose * point;
      const Eigen::Matrix<Scalar, 2, 3> j = projection_jacobian(o.camera, pc) * o.pose.rotation();
      const Vec2<Scalar> r = project_camera(o.camera, pc, Scalar(0)) - o.pixel;
      jtj.noalias() += j.transpose() * j;
      jtr.noalias() += j.transpose() * r;
    }
    const Vec3<Scalar> step = jtj.ldlt().solve(-jtr);
    if (!step.allFinite()) break;
    const Vec3<Scalar> candidate = point + step;
    Scalar new_cost = 0;
    if (!cost_of(candidate, &new_cost) || new_cost > cost) break;
    point = candidate;
    const bool done = step.norm() <= Scalar(1e-14) * (Scalar(1) + point.norm()) || cost - new_cost <= Scalar(1e-15) * cost;
    cost = new_cost;
    if (done) break;
  }
  return point;
}

template <typename Scalar>
Vec3<Scalar> triangulate(const std::vector<Observation<Scalar>>& obs,
                         const TriangulationOptions& options = {}) {
  return triangulate(std::span<const Observation<Scalar>>(obs), options);
}

// World-to-camera pose of a camera at `eye` looking towards `target`.
template <typename Scalar>
SE3Pose<Scalar> look_at(const Vec3<Scalar>& eye, const Vec3<Scalar>& target, const Vec3<Scalar>& up) {
  const Vec3<Scalar> z = (target - eye).normalized();
  Vec3<Scalar> x = z.cross(up);
  if (x.norm() < Scalar(1e-9)) x = z.cross(Vec3<Scalar>::UnitX());
  x.normalize();
  const Vec3<Scalar> y = z.cross(x);
  Mat3<Scalar> r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return SE3Pose<Scalar>(r, -(r * eye));
}

}  // namespace semidense
