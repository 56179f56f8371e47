#pragma once

// Perspective-n-point: EPnP for the general case, a homography
// decomposition for planar point sets, Levenberg-Marquardt polishing and a
// RANSAC wrapper with an adaptive iteration count.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "semidense/geometry.hpp"

namespace semidense {

// Closed-form pose from >= 4 correspondences (world points X, pixels u).
// Throws kDegenerate for collinear or coincident points.
SE3d epnp(const Eigen::Matrix3Xd& X, const Eigen::Matrix2Xd& u, const Camerad& camera);

// Pixel reprojection errors; +inf for points behind the camera.
Eigen::VectorXd reprojection_errors(const Eigen::Matrix3Xd& X, const Eigen::Matrix2Xd& u, const Camerad& camera,
                                    const SE3d& pose);

// Minimises the summed squared reprojection error over the subset `indices`
// (all points when empty).
SE3d refine_pose(const Eigen::Matrix3Xd& X, const Eigen::Matrix2Xd& u, const Camerad& camera, const SE3d& initial,
                 const std::vector<int>& indices = {}, int max_iterations = 30);

struct RansacOptions {
  double inlier_px = 3.0;
  double confidence = 0.99;
  int max_iterations = 10000;
  std::uint64_t seed = 0;
};

struct PnPResult {
  bool success = false;
  SE3d pose;
  std::vector<int> inliers;
  double mean_reprojection_px = 0.0;  // over the inliers
  int iterations = 0;
};

// Default inlier threshold for an image of the given width.
inline double default_inlier_px(int width) { return 3.0 * width / 512.0; }

PnPResult ransac_pnp(const Eigen::Matrix3Xd& X, const Eigen::Matrix2Xd& u, const Camerad& camera,
                     const RansacOptions& options = {});

}  // namespace semidense
