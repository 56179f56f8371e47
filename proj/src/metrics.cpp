#include "semidense/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace semidense {

double rotation_error_deg(const SE3d& estimate, const SE3d& truth) {
  return rotation_angle(estimate.rotation(), truth.rotation()) * 180.0 / M_PI;
}

double translation_error(const SE3d& estimate, const SE3d& truth) {
  return (estimate.translation() - truth.translation()).norm();
}

NearestNeighbors::NearestNeighbors(const std::vector<Eigen::Vector3d>& points) {
  order_.resize(points.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::stable_sort(order_.begin(), order_.end(), [&](int a, int b) { return points[a].x() < points[b].x(); });
  sorted_.reserve(points.size());
  for (int i : order_) sorted_.push_back(points[i]);
}

std::pair<int, double> NearestNeighbors::nearest(const Eigen::Vector3d& q) const {
  if (sorted_.empty()) return {-1, std::numeric_limits<double>::infinity()};
  const auto start = std::lower_bound(sorted_.begin(), sorted_.end(), q.x(),
                                      [](const Eigen::Vector3d& p, double x) { return p.x() < x; }) -
                     sorted_.begin();
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  const auto n = static_cast<std::ptrdiff_t>(sorted_.size());
  auto visit = [&](std::ptrdiff_t i) {
    const double d = (sorted_[static_cast<std::size_t>(i)] - q).squaredNorm();
    if (d < best || (d == best && order_[static_cast<std::size_t>(i)] < order_[best_i])) {
      best = d;
      best_i = static_cast<std::size_t>(i);
    }
  };
  for (std::ptrdiff_t i = start; i < n; ++i) {
    const double dx = sorted_[static_cast<std::size_t>(i)].x() - q.x();
    if (dx * dx > best) break;
    visit(i);
  }
  for (std::ptrdiff_t i = start - 1; i >= 0; --i) {
    const double dx = q.x() - sorted_[static_cast<std::size_t>(i)].x();
    if (dx * dx > best) break;
    visit(i);
  }
  return {order_[best_i], std::sqrt(best)};
}

double add_error(const std::vector<Eigen::Vector3d>& model, const SE3d& estimate, const SE3d& truth) {
  if (model.empty()) throw Error(ErrorCode::kArgument, "ADD needs a non-empty model");
  double sum = 0.0;
  for (const auto& p : model) sum += (estimate * p - truth * p).norm();
  return sum / static_cast<double>(model.size());
}

double add_s_error(const std::vector<Eigen::Vector3d>& model, const SE3d& estimate, const SE3d& truth) {
  if (model.empty()) throw Error(ErrorCode::kArgument, "ADD-S needs a non-empty model");
  std::vector<Eigen::Vector3d> target;
  target.reserve(model.size());
  for (const auto& p : model) target.push_back(truth * p);
  const NearestNeighbors nn(target);
  double sum = 0.0;
  for (const auto& p : model) sum += nn.nearest(estimate * p).second;
  return sum / static_cast<double>(model.size());
}

double projection_2d_error(const std::vector<Eigen::Vector3d>& model, const Camerad& camera, const SE3d& estimate,
                           const SE3d& truth) {
  if (model.empty()) throw Error(ErrorCode::kArgument, "projection error needs a non-empty model");
  double sum = 0.0;
  for (const auto& p : model) {
    const Eigen::Vector3d a = estimate * p;
    const Eigen::Vector3d b = truth * p;
    if (!(a.z() > kMinDepth) || !(b.z() > kMinDepth)) return std::numeric_limits<double>::infinity();
    sum += (project_camera(camera, a) - project_camera(camera, b)).norm();
  }
  return sum / static_cast<double>(model.size());
}

double point_cloud_accuracy(const std::vector<Eigen::Vector3d>& reconstructed,
                            const std::vector<Eigen::Vector3d>& truth, double threshold) {
  if (reconstructed.empty()) return 0.0;
  const NearestNeighbors nn(truth);
  std::size_t hits = 0;
  for (const auto& p : reconstructed) hits += nn.nearest(p).second <= threshold ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(reconstructed.size());
}

PoseMetrics evaluate_pose(int view, bool ok, const SE3d& estimate, const SE3d& truth, const Camerad& camera,
                          const std::vector<Eigen::Vector3d>& model, double cm_per_unit) {
  PoseMetrics m;
  m.view = view;
  m.ok = ok;
  if (!ok) return m;
  m.trans_err_cm = translation_error(estimate, truth) * cm_per_unit;
  m.rot_err_deg = rotation_error_deg(estimate, truth);
  m.add_s = add_s_error(model, estimate, truth);
  m.proj2d_px = projection_2d_error(model, camera, estimate, truth);
  return m;
}

std::vector<bool> threshold_hits(const PoseMetrics& m, const MetricThresholds& t) {
  auto within = [&](double cm, double deg) { return m.ok && m.trans_err_cm <= cm && m.rot_err_deg <= deg; };
  return {within(1, 1), within(3, 3), within(5, 5), m.ok && m.add_s <= t.add_fraction * t.diameter,
          m.ok && m.proj2d_px <= t.proj2d_px};
}

MetricSummary summarize(const std::vector<PoseMetrics>& metrics, const MetricThresholds& t) {
  MetricSummary s;
  s.queries = metrics.size();
  s.rates.assign(5, 0.0);
  if (metrics.empty()) return s;
  for (const PoseMetrics& m : metrics) {
    const std::vector<bool> hits = threshold_hits(m, t);
    for (std::size_t i = 0; i < hits.size(); ++i) s.rates[i] += hits[i] ? 1.0 : 0.0;
  }
  for (double& r : s.rates) r /= static_cast<double>(metrics.size());
  return s;
}

std::string metrics_csv(const std::vector<PoseMetrics>& metrics, const MetricThresholds& t) {
  std::string out = "query,status,trans_err_cm,rot_err_deg,add_s,proj2d_px,1cm-1deg,3cm-3deg,5cm-5deg,add(s)-0.1d,proj2d-5px\n";
  char buf[256];
  for (const PoseMetrics& m : metrics) {
    const std::vector<bool> h = threshold_hits(m, t);
    std::snprintf(buf, sizeof(buf), "%d,%s,%.9g,%.9g,%.9g,%.9g,%d,%d,%d,%d,%d\n", m.view, m.ok ? "ok" : "failed",
                  m.trans_err_cm, m.rot_err_deg, m.add_s, m.proj2d_px, int(h[0]), int(h[1]), int(h[2]), int(h[3]),
                  int(h[4]));
    out += buf;
  }
  const MetricSummary s = summarize(metrics, t);
  std::snprintf(buf, sizeof(buf), "all,%zu,,,,,%.6f,%.6f,%.6f,%.6f,%.6f\n", s.queries, s.rates[0], s.rates[1],
                s.rates[2], s.rates[3], s.rates[4]);
  out += buf;
  return out;
}

}  // namespace semidense
