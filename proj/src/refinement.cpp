#include "semidense/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>

#include "semidense/parallel.hpp"

namespace semidense {
namespace {

constexpr double kAngleTieTolerance = 1e-9;

void accumulate(RefinementStats& into, const RefinementStats& s) {
  into.dropped_nodes += s.dropped_nodes;
  into.dropped_tracks += s.dropped_tracks;
  into.non_converged += s.non_converged;
  into.dropped_degenerate_features += s.dropped_degenerate_features;
}

}  // namespace

std::size_t select_reference_node(const FeatureTrack& track, const ViewSet& views) {
  if (track.nodes.size() < 2) throw Error(ErrorCode::kArgument, "reference selection needs >= 2 nodes");
  std::vector<Eigen::Vector3d> rays;
  rays.reserve(track.nodes.size());
  for (const TrackNode& n : track.nodes) {
    rays.push_back((track.point_coarse - views.at(n.view_id).pose.center()).normalized());
  }
  std::size_t best = 0;
  double best_angle = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < track.nodes.size(); ++i) {
    const Eigen::Vector3d axis = views.at(track.nodes[i].view_id).pose.optical_axis();
    double sum = 0.0;
    for (std::size_t k = 0; k < rays.size(); ++k) {
      if (k == i) continue;
      sum += std::acos(std::clamp(axis.dot(rays[k]), -1.0, 1.0));
    }
    const double mean = sum / static_cast<double>(rays.size() - 1);
    const bool better = mean < best_angle - kAngleTieTolerance;
    const bool tie = std::abs(mean - best_angle) <= kAngleTieTolerance &&
                     track.nodes[i].view_id < track.nodes[best].view_id;
    if (better || tie) {
      best = i;
      best_angle = std::min(best_angle, mean);
    }
  }
  return best;
}

std::optional<RefinedTrack> refine_track_nodes(const FeatureTrack& track, std::size_t reference_index,
                                               const SemiDenseMatcher& matcher, const RefinementOptions& options,
                                               RefinementStats* stats) {
  if (reference_index >= track.nodes.size()) throw Error(ErrorCode::kArgument, "reference index out of range");
  RefinementStats local;
  RefinedTrack rt;
  rt.track_id = track.track_id;
  rt.point_coarse = track.point_coarse;
  const TrackNode& ref = track.nodes[reference_index];
  rt.reference = {ref.view_id, matcher.reference_location(ref.view_id, ref.pixel)};

  for (std::size_t k = 0; k < track.nodes.size(); ++k) {
    if (k == reference_index) continue;
    const TrackNode& src = track.nodes[k];
    const FineMatchResult r = matcher.fine_refine({ref.view_id, rt.reference.pixel, src.view_id, src.pixel});
    const bool in_window = (r.location - src.pixel).cwiseAbs().maxCoeff() <= options.window_half;
    if (r.confidence < options.min_confidence || !in_window || !r.location.allFinite()) {
      ++local.dropped_nodes;
      continue;
    }
    rt.sources.push_back({src.view_id, r.location});
  }
  const bool keep = !rt.sources.empty();
  if (!keep) ++local.dropped_tracks;
  if (stats) accumulate(*stats, local);
  if (!keep) return std::nullopt;
  return rt;
}

std::vector<Eigen::Vector2d> depth_residuals(const RefinedTrack& track, const ViewSet& views, double depth) {
  const View& ref = views.at(track.reference.view_id);
  const Eigen::Vector3d p_ref = backproject(track.reference.pixel, depth, ref.camera);
  std::vector<Eigen::Vector2d> r;
  r.reserve(track.sources.size());
  for (const TrackNode& s : track.sources) {
    const View& src = views.at(s.view_id);
    const Eigen::Vector3d p = relative_pose(ref.pose, src.pose) * p_ref;
    r.push_back(s.pixel - project_camera(src.camera, p, 0.0));
  }
  return r;
}

std::vector<Eigen::Vector2d> depth_jacobian(const RefinedTrack& track, const ViewSet& views, double depth) {
  if (!(depth > 0)) throw Error(ErrorCode::kDomain, "depth must be positive");
  const View& ref = views.at(track.reference.view_id);
  // pi^-1(u_r, d) = d * m, so its derivative is the normalized ray m.
  const Eigen::Vector3d m = ref.camera.ray(track.reference.pixel);
  std::vector<Eigen::Vector2d> j;
  j.reserve(track.sources.size());
  for (const TrackNode& s : track.sources) {
    const View& src = views.at(s.view_id);
    const SE3d rel = relative_pose(ref.pose, src.pose);
    const Eigen::Vector3d p = rel * (depth * m);
    j.push_back(-projection_jacobian(src.camera, p) * (rel.rotation() * m));
  }
  return j;
}

double depth_cost(const RefinedTrack& track, const ViewSet& views, double depth) {
  if (!(depth > 0)) return std::numeric_limits<double>::infinity();
  const View& ref = views.at(track.reference.view_id);
  const Eigen::Vector3d p_ref = backproject(track.reference.pixel, depth, ref.camera);
  double cost = 0.0;
  for (const TrackNode& s : track.sources) {
    const View& src = views.at(s.view_id);
    const Eigen::Vector3d p = relative_pose(ref.pose, src.pose) * p_ref;
    if (!(p.z() > kMinDepth)) return std::numeric_limits<double>::infinity();
    cost += (s.pixel - project_camera(src.camera, p, 0.0)).squaredNorm();
  }
  return cost;
}

RefinedTrack optimize_depth(RefinedTrack track, const ViewSet& views, const RefinementOptions& options) {
  const View& ref = views.at(track.reference.view_id);
  double depth = (ref.pose * track.point_coarse).z();
  if (!(depth > 0)) throw Error(ErrorCode::kDomain, "initial reference depth must be positive");

  double cost = depth_cost(track, views, depth);
  track.initial_cost = cost;
  double lambda = options.lambda_init;
  bool converged = false;
  bool clamped = false;
  int it = 0;

  for (; it < options.max_iterations && std::isfinite(cost); ++it) {
    if (cost == 0.0) {
      converged = true;
      break;
    }
    const auto r = depth_residuals(track, views, depth);
    const auto j = depth_jacobian(track, views, depth);
    double h = 0.0;
    double g = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) {
      h += j[k].squaredNorm();
      g += j[k].dot(r[k]);
    }
    // Depth is unobservable when a 100% change moves no residual by 1e-6 px.
    if (h * depth * depth < 1e-12) break;

    double step = -g / (h * (1.0 + lambda));
    double candidate = depth + step;
    if (!(candidate > 0)) {
      candidate = options.min_depth;
      clamped = true;
    }
    const double new_cost = depth_cost(track, views, candidate);
    if (new_cost < cost) {
      const double decrease = (cost - new_cost) / cost;
      depth = candidate;
      cost = new_cost;
      lambda = std::max(lambda / 10.0, 1e-12);
      if (decrease < options.relative_tolerance) {
        converged = true;
        ++it;
        break;
      }
    } else {
      lambda *= 10.0;
      if (std::abs(step) <= 1e-15 * depth || lambda > 1e16) {
        // No representable improvement left: at the minimum.
        converged = true;
        ++it;
        break;
      }
    }
  }

  track.depth = depth;
  track.point = ref.pose.inverse() * backproject(track.reference.pixel, depth, ref.camera);
  track.final_cost = cost;
  track.iterations = it;
  track.converged = converged && !clamped;
  double sum = 0.0;
  for (const auto& r : depth_residuals(track, views, depth)) sum += r.norm();
  track.mean_reprojection_px = track.sources.empty() ? 0.0 : sum / static_cast<double>(track.sources.size());
  return track;
}

PointCloudModel aggregate_features(std::span<const RefinedTrack> tracks, const FeatureSource& features,
                                   RefinementStats* stats) {
  PointCloudModel model;
  std::vector<Eigen::VectorXd> coarse_rows;
  std::vector<Eigen::VectorXd> fine_rows;
  for (const RefinedTrack& t : tracks) {
    Eigen::VectorXd coarse;
    Eigen::VectorXd fine;
    bool ok = true;
    const auto add = [&](const TrackNode& n) {
      const auto c = features.coarse_feature(n.view_id, n.pixel);
      const auto f = features.fine_feature(n.view_id, n.pixel);
      if (!c || !f) return;
      if (coarse.size() == 0) {
        coarse = Eigen::VectorXd::Zero(c->size());
        fine = Eigen::VectorXd::Zero(f->size());
      }
      if (c->size() != coarse.size() || f->size() != fine.size()) {
        ok = false;
        return;
      }
      coarse += *c;
      fine += *f;
    };
    add(t.reference);
    for (const TrackNode& s : t.sources) add(s);
    if (!ok) throw Error(ErrorCode::kArgument, "inconsistent descriptor dimensions");
    if (coarse.size() == 0 || coarse.norm() < 1e-6 || fine.norm() < 1e-6) {
      if (stats) ++stats->dropped_degenerate_features;
      continue;
    }
    model.points.push_back(t.point);
    model.track_ids.push_back(t.track_id);
    coarse_rows.push_back(coarse.normalized());
    fine_rows.push_back(fine.normalized());
  }
  if (!coarse_rows.empty()) {
    model.coarse_features.resize(static_cast<Eigen::Index>(coarse_rows.size()), coarse_rows.front().size());
    model.fine_features.resize(static_cast<Eigen::Index>(fine_rows.size()), fine_rows.front().size());
    for (std::size_t i = 0; i < coarse_rows.size(); ++i) {
      model.coarse_features.row(static_cast<Eigen::Index>(i)) = coarse_rows[i].transpose();
      model.fine_features.row(static_cast<Eigen::Index>(i)) = fine_rows[i].transpose();
    }
  }
  return model;
}

RefinementResult refine_reconstruction(const CoarseReconstruction& coarse, const ViewSet& views,
                                       const SemiDenseMatcher& matcher, const RefinementOptions& options) {
  const std::size_t n = coarse.tracks.size();
  std::vector<std::optional<RefinedTrack>> out(n);
  std::vector<RefinementStats> per_track(n);
  parallel_for(n, [&](std::size_t i) {
    const FeatureTrack& t = coarse.tracks[i];
    const std::size_t ref = select_reference_node(t, views);
    auto rt = refine_track_nodes(t, ref, matcher, options, &per_track[i]);
    if (!rt) return;
    try {
      out[i] = optimize_depth(std::move(*rt), views, options);
    } catch (const Error&) {
      ++per_track[i].dropped_tracks;
    }
  });

  RefinementResult result;
  result.stats.input_tracks = n;
  for (std::size_t i = 0; i < n; ++i) {
    accumulate(result.stats, per_track[i]);
    if (!out[i]) continue;
    if (!out[i]->converged) ++result.stats.non_converged;
    result.tracks.push_back(std::move(*out[i]));
  }
  result.stats.refined_tracks = result.tracks.size();
  return result;
}

}  // namespace semidense
