#pragma once

// Track refinement: hold one reference node fixed, refine the remaining nodes
// to sub-pixel accuracy, then solve for the single depth of the reference
// node that best explains the refined observations.

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

#include "semidense/feature_maps.hpp"
#include "semidense/matching.hpp"
#include "semidense/tracks.hpp"
#include "semidense/views.hpp"

namespace semidense {

struct RefinedTrack {
  int track_id = -1;
  TrackNode reference;             // u_r
  std::vector<TrackNode> sources;  // refined source nodes
  Eigen::Vector3d point_coarse = Eigen::Vector3d::Zero();
  double depth = 0.0;  // along the reference ray, reference camera frame
  Eigen::Vector3d point = Eigen::Vector3d::Zero();  // world frame
  double initial_cost = 0.0;  // sum of squared residuals, px^2
  double final_cost = 0.0;
  double mean_reprojection_px = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct PointCloudModel {
  std::vector<Eigen::Vector3d> points;
  RowMatrix coarse_features;  // N x C_c, unit rows
  RowMatrix fine_features;    // N x C_f, unit rows
  std::vector<int> track_ids;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct RefinementOptions {
  double min_confidence = 0.2;
  double window_half = kRefineWindowHalf;
  double lambda_init = 1e-3;
  int max_iterations = 50;
  double relative_tolerance = 1e-8;
  double min_depth = 1e-6;
};

struct RefinementStats {
  std::size_t input_tracks = 0;
  std::size_t refined_tracks = 0;
  std::size_t dropped_nodes = 0;           // low confidence or outside window
  std::size_t dropped_tracks = 0;          // no source node left
  std::size_t non_converged = 0;
  std::size_t dropped_degenerate_features = 0;
};

// Node whose optical axis is, on average, best aligned with the other nodes'
// viewing rays towards the coarse point. Ties go to the lowest view id.
std::size_t select_reference_node(const FeatureTrack& track, const ViewSet& views);

// Fine-matches every source node against the fixed reference node. Returns
// nullopt when no source survives.
std::optional<RefinedTrack> refine_track_nodes(const FeatureTrack& track, std::size_t reference_index,
                                               const SemiDenseMatcher& matcher,
                                               const RefinementOptions& options = {},
                                               RefinementStats* stats = nullptr);

// Residuals u_s - pi(xi_{r->s} * pi^-1(u_r, d)), one 2-vector per source.
std::vector<Eigen::Vector2d> depth_residuals(const RefinedTrack& track, const ViewSet& views, double depth);

// d(residual)/d(depth), one 2-vector per source node.
std::vector<Eigen::Vector2d> depth_jacobian(const RefinedTrack& track, const ViewSet& views, double depth);

// Sum of squared residuals; +inf when a source sees the point behind it.
double depth_cost(const RefinedTrack& track, const ViewSet& views, double depth);

// Levenberg-Marquardt over the scalar reference depth, initialised from the
// coarse point. Fills depth, point, costs and the convergence flag.
RefinedTrack optimize_depth(RefinedTrack track, const ViewSet& views, const RefinementOptions& options = {});

// Renormalised mean of node descriptors per track; tracks whose mean
// vanishes (or that lack features) are dropped.
PointCloudModel aggregate_features(std::span<const RefinedTrack> tracks, const FeatureSource& features,
                                   RefinementStats* stats = nullptr);

struct RefinementResult {
  std::vector<RefinedTrack> tracks;
  RefinementStats stats;
};

// Reference selection, node refinement and depth optimisation for every
// coarse track, in parallel, ordered by track id.
RefinementResult refine_reconstruction(const CoarseReconstruction& coarse, const ViewSet& views,
                                       const SemiDenseMatcher& matcher, const RefinementOptions& options = {});

}  // namespace semidense
