#pragma once

// Pose and reconstruction accuracy metrics.

#include <Eigen/Dense>

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "semidense/geometry.hpp"

namespace semidense {

// Geodesic angle between the two rotations, degrees.
double rotation_error_deg(const SE3d& estimate, const SE3d& truth);
// Distance between the translation vectors, scene units.
double translation_error(const SE3d& estimate, const SE3d& truth);

// Exact nearest-neighbour queries over a fixed 3D point set (sorted sweep
// along x with pruning).
class NearestNeighbors {
 public:
  explicit NearestNeighbors(const std::vector<Eigen::Vector3d>& points);
  // Index of the closest point and its distance; -1 / inf when empty.
  std::pair<int, double> nearest(const Eigen::Vector3d& q) const;

 private:
  std::vector<Eigen::Vector3d> sorted_;
  std::vector<int> order_;
};

// Mean distance between corresponding transformed model points.
double add_error(const std::vector<Eigen::Vector3d>& model, const SE3d& estimate, const SE3d& truth);
// Mean distance from each estimated-pose point to its nearest true-pose point.
double add_s_error(const std::vector<Eigen::Vector3d>& model, const SE3d& estimate, const SE3d& truth);

// Mean pixel distance between projections under the two poses; +inf if any
// point falls behind either camera.
double projection_2d_error(const std::vector<Eigen::Vector3d>& model, const Camerad& camera, const SE3d& estimate,
                           const SE3d& truth);

// Fraction of reconstructed points within `threshold` of some true point.
double point_cloud_accuracy(const std::vector<Eigen::Vector3d>& reconstructed,
                            const std::vector<Eigen::Vector3d>& truth, double threshold);

struct PoseMetrics {
  int view = -1;
  bool ok = false;
  double trans_err_cm = std::numeric_limits<double>::infinity();
  double rot_err_deg = std::numeric_limits<double>::infinity();
  double add_s = std::numeric_limits<double>::infinity();  // scene units
  double proj2d_px = std::numeric_limits<double>::infinity();
};

struct MetricThresholds {
  double diameter = 1.0;
  double cm_per_unit = 10.0;
  double add_fraction = 0.1;
  double proj2d_px = 5.0;
};

PoseMetrics evaluate_pose(int view, bool ok, const SE3d& estimate, const SE3d& truth, const Camerad& camera,
                          const std::vector<Eigen::Vector3d>& model, double cm_per_unit);

// Per-query threshold outcomes in column order:
// 1cm-1deg, 3cm-3deg, 5cm-5deg, add(s)-0.1d, proj2d-5px.
std::vector<bool> threshold_hits(const PoseMetrics& m, const MetricThresholds& t);

struct MetricSummary {
  std::vector<double> rates;  // same order as threshold_hits
  std::size_t queries = 0;
};

MetricSummary summarize(const std::vector<PoseMetrics>& metrics, const MetricThresholds& t);

// One row per query followed by an "all" row with the success rates.
std::string metrics_csv(const std::vector<PoseMetrics>& metrics, const MetricThresholds& t);

}  // namespace semidense
