#include "semidense/tracks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <tuple>
#include <unordered_map>

#include "semidense/parallel.hpp"

namespace semidense {
namespace {

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<int> rank_;
};

// Node identity: (view, cell column, cell row), exact for grid-cell centres.
using NodeKey = std::tuple<int, long long, long long>;

struct NodeKeyHash {
  std::size_t operator()(const NodeKey& k) const {
    const auto [v, x, y] = k;
    std::size_t h = std::hash<long long>()(x * 1000003LL + y);
    return h ^ (std::hash<int>()(v) * 0x9e3779b97f4a7c15ULL);
  }
};

NodeKey key_of(int view, const Pixel& cell) {
  return {view, static_cast<long long>(std::floor(cell.x() / kCoarseStride)),
          static_cast<long long>(std::floor(cell.y() / kCoarseStride))};
}

bool node_less(const TrackNode& a, const TrackNode& b) {
  return std::tie(a.view_id, a.pixel.x(), a.pixel.y()) < std::tie(b.view_id, b.pixel.x(), b.pixel.y());
}

}  // namespace

std::vector<FeatureTrack> build_tracks(std::span<const CoarseMatch> matches, std::size_t min_track_length,
                                       TrackBuildStats* stats) {
  TrackBuildStats local;
  std::unordered_map<NodeKey, std::size_t, NodeKeyHash> ids;
  std::vector<TrackNode> nodes;
  const auto id_of = [&](int view, const Pixel& cell) {
    const auto [it, inserted] = ids.emplace(key_of(view, cell), nodes.size());
    if (inserted) nodes.push_back({view, grid_cell(cell)});
    return it->second;
  };
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  edges.reserve(matches.size());
  for (const CoarseMatch& m : matches) edges.emplace_back(id_of(m.view_a, m.cell_a), id_of(m.view_b, m.cell_b));

  UnionFind uf(nodes.size());
  for (const auto& [a, b] : edges) uf.unite(a, b);

  std::unordered_map<std::size_t, std::vector<TrackNode>> components;
  for (std::size_t i = 0; i < nodes.size(); ++i) components[uf.find(i)].push_back(nodes[i]);

  std::vector<FeatureTrack> tracks;
  for (auto& [root, members] : components) {
    ++local.components;
    std::sort(members.begin(), members.end(), node_less);
    // Two different cells in one view cannot observe the same 3D point: drop
    // every node of such a view.
    std::vector<TrackNode> kept;
    bool conflict = false;
    for (std::size_t i = 0; i < members.size();) {
      std::size_t j = i;
      while (j < members.size() && members[j].view_id == members[i].view_id) ++j;
      if (j - i == 1) {
        kept.push_back(members[i]);
      } else {
        conflict = true;
        local.conflicting_nodes += j - i;
      }
      i = j;
    }
    if (conflict) ++local.conflicts;
    if (kept.size() < std::max<std::size_t>(min_track_length, 1)) {
      ++local.too_short;
      continue;
    }
    FeatureTrack t;
    t.nodes = std::move(kept);
    tracks.push_back(std::move(t));
  }

  std::sort(tracks.begin(), tracks.end(), [](const FeatureTrack& a, const FeatureTrack& b) {
    return std::lexicographical_compare(a.nodes.begin(), a.nodes.end(), b.nodes.begin(), b.nodes.end(), node_less);
  });
  for (std::size_t i = 0; i < tracks.size(); ++i) tracks[i].track_id = static_cast<int>(i);
  if (stats) *stats = local;
  return tracks;
}

double mean_reprojection_error(const FeatureTrack& track, const ViewSet& views, const Eigen::Vector3d& point) {
  double sum = 0.0;
  for (const TrackNode& n : track.nodes) {
    const View& v = views.at(n.view_id);
    sum += (project(v.pose, v.camera, point) - n.pixel).norm();
  }
  return sum / static_cast<double>(track.nodes.size());
}

double max_ray_angle_deg(const FeatureTrack& track, const ViewSet& views, const Eigen::Vector3d& point) {
  std::vector<Eigen::Vector3d> rays;
  for (const TrackNode& n : track.nodes) rays.push_back((point - views.at(n.view_id).pose.center()).normalized());
  double widest = 0.0;
  for (std::size_t a = 0; a < rays.size(); ++a) {
    for (std::size_t b = a + 1; b < rays.size(); ++b) {
      widest = std::max(widest, std::acos(std::clamp(rays[a].dot(rays[b]), -1.0, 1.0)));
    }
  }
  return widest * 180.0 / M_PI;
}

CoarseReconstruction triangulate_tracks(std::span<const FeatureTrack> tracks, const ViewSet& views,
                                        const TriangulateTracksOptions& options) {
  std::vector<std::optional<Eigen::Vector3d>> points(tracks.size());
  std::vector<int> reason(tracks.size(), -1);

  parallel_for(tracks.size(), [&](std::size_t i) {
    const FeatureTrack& track = tracks[i];
    std::vector<Observation<double>> obs;
    obs.reserve(track.nodes.size());
    for (const TrackNode& n : track.nodes) {
      const View& v = views.at(n.view_id);
      obs.push_back({v.pose, v.camera, n.pixel});
    }
    try {
      const Eigen::Vector3d p = triangulate<double>(obs, options.triangulation);
      if (max_ray_angle_deg(track, views, p) < options.min_triangulation_angle_deg) {
        reason[i] = static_cast<int>(TrackRejection::kDegenerate);
      } else if (mean_reprojection_error(track, views, p) > options.max_reproj_px) {
        reason[i] = static_cast<int>(TrackRejection::kReprojection);
      } else {
        points[i] = p;
      }
    } catch (const Error& e) {
      reason[i] = static_cast<int>(e.code() == ErrorCode::kCheirality ? TrackRejection::kCheirality
                                                                      : TrackRejection::kDegenerate);
    }
  });

  CoarseReconstruction recon;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    if (points[i]) {
      FeatureTrack t = tracks[i];
      t.point_coarse = *points[i];
      recon.tracks.push_back(std::move(t));
      recon.points.push_back(*points[i]);
      ++recon.stats.track_length_histogram[tracks[i].nodes.size()];
      continue;
    }
    switch (static_cast<TrackRejection>(reason[i])) {
      case TrackRejection::kDegenerate: ++recon.stats.rejected_degenerate; break;
      case TrackRejection::kCheirality: ++recon.stats.rejected_cheirality; break;
      case TrackRejection::kReprojection: ++recon.stats.rejected_reprojection; break;
    }
  }
  return recon;
}

}  // namespace semidense
