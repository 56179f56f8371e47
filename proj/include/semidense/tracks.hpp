#pragma once

// Coarse reconstruction: union-find fusion of pairwise grid matches into
// multi-view tracks, then known-pose triangulation of each track.

#include <Eigen/Dense>

#include <map>
#include <span>
#include <vector>

#include "semidense/geometry.hpp"
#include "semidense/matching.hpp"
#include "semidense/views.hpp"

namespace semidense {

struct TrackNode {
  int view_id = -1;
  Pixel pixel;

  bool operator==(const TrackNode&) const = default;
};

struct FeatureTrack {
  int track_id = -1;
  std::vector<TrackNode> nodes;  // sorted by view id, one per view
  Eigen::Vector3d point_coarse = Eigen::Vector3d::Zero();
};

struct TrackBuildStats {
  std::size_t components = 0;
  std::size_t conflicts = 0;          // components with two cells in one view
  std::size_t conflicting_nodes = 0;  // nodes dropped by the conflict rule
  std::size_t too_short = 0;          // components below min_track_length
};

std::vector<FeatureTrack> build_tracks(std::span<const CoarseMatch> matches, std::size_t min_track_length = 3,
                                       TrackBuildStats* stats = nullptr);

enum class TrackRejection { kDegenerate, kCheirality, kReprojection };

struct CoarseReconstructionStats {
  std::map<std::size_t, std::size_t> track_length_histogram;  // surviving tracks
  std::size_t rejected_degenerate = 0;
  std::size_t rejected_cheirality = 0;
  std::size_t rejected_reprojection = 0;
};

struct CoarseReconstruction {
  std::vector<FeatureTrack> tracks;
  std::vector<Eigen::Vector3d> points;
  CoarseReconstructionStats stats;
};

struct TriangulateTracksOptions {
  double max_reproj_px = 12.0;  // mean reprojection error
  // Widest angle between two viewing rays of the track; narrower tracks are
  // rejected as degenerate. At 30 degrees a half-cell offset in each view
  // displaces the point by at most one cell diagonal at its depth.
  double min_triangulation_angle_deg = 30.0;
  TriangulationOptions triangulation;
};

CoarseReconstruction triangulate_tracks(std::span<const FeatureTrack> tracks, const ViewSet& views,
                                        const TriangulateTracksOptions& options = {});

// Widest pairwise angle between the track's viewing rays to `point`, degrees.
double max_ray_angle_deg(const FeatureTrack& track, const ViewSet& views, const Eigen::Vector3d& point);

// Mean reprojection error of a world point over the track nodes.
double mean_reprojection_error(const FeatureTrack& track, const ViewSet& views, const Eigen::Vector3d& point);

}  // namespace semidense
