#pragma once

// Shared fixtures for the unit tests: random poses, cameras and points.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>

#include "semidense/geometry.hpp"
#include "semidense/random.hpp"

namespace semidense::test {

inline Camerad default_camera() {
  Camerad k;
  k.fx = k.fy = 600.0;
  k.cx = k.cy = 256.0;
  k.width = k.height = 512;
  return k;
}

inline Eigen::Vector3d random_vector(CounterRng& rng, double scale = 1.0) {
  return scale * Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian());
}

inline Eigen::Matrix3d random_rotation(CounterRng& rng, double max_angle = M_PI) {
  const Eigen::Vector3d axis = random_vector(rng).normalized();
  return SE3d::so3_exp(axis * rng.uniform(-max_angle, max_angle));
}

inline SE3d random_pose(CounterRng& rng) {
  return SE3d(random_rotation(rng), random_vector(rng, 2.0));
}

// Camera at distance `radius` from the origin looking at it, with a random
// viewing direction in the upper hemisphere.
inline SE3d orbit_pose(CounterRng& rng, double radius) {
  const double az = rng.uniform(0.0, 2.0 * M_PI);
  const double el = rng.uniform(0.2, 1.3);
  const Eigen::Vector3d eye = radius * Eigen::Vector3d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  return look_at<double>(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ());
}

inline double relative_error(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace semidense::test
