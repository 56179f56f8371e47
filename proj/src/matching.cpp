#include "semidense/matching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "semidense/random.hpp"

namespace semidense {

std::vector<CoarseMatch> coarse_match_pair(const ViewObservations& obs_a, const ViewObservations& obs_b,
                                           double outlier_rate, std::uint64_t seed) {
  if (obs_a.view_id == obs_b.view_id) throw Error(ErrorCode::kArgument, "coarse matching needs distinct views");
  if (!(outlier_rate >= 0.0 && outlier_rate < 1.0)) throw Error(ErrorCode::kArgument, "outlier_rate out of range");

  struct Candidate {
    int point;
    int cell_a;
    int cell_b;
    double score;
  };
  std::vector<Candidate> candidates;
  for (const PointObservation& pa : obs_a.points) {
    if (!pa.visible || !pa.cell_owner) continue;
    const PointObservation* pb = obs_b.find(pa.point_id);
    if (pb == nullptr || !pb->visible || !pb->cell_owner) continue;
    const double cosine = pa.coarse.dot(pb->coarse);
    candidates.push_back({pa.point_id, obs_a.cell_index(pa.pixel), obs_b.cell_index(pb->pixel),
                          std::clamp(0.5 * (1.0 + cosine), 0.0, 1.0)});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
    return x.score != y.score ? x.score > y.score : x.point < y.point;
  });

  std::unordered_set<int> used_a;
  std::unordered_set<int> used_b;
  std::vector<Candidate> kept;
  for (const Candidate& c : candidates) {
    if (used_a.count(c.cell_a) || used_b.count(c.cell_b)) continue;
    used_a.insert(c.cell_a);
    used_b.insert(c.cell_b);
    kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end(), [](const Candidate& x, const Candidate& y) { return x.cell_a < y.cell_a; });

  const int n_cells_b = obs_b.grid_rows() * obs_b.grid_cols();
  std::vector<CoarseMatch> matches;
  matches.reserve(kept.size());
  for (const Candidate& c : kept) {
    CoarseMatch m{obs_a.view_id, obs_b.view_id, obs_a.cell_center(c.cell_a), obs_b.cell_center(c.cell_b), c.score};
    if (outlier_rate > 0.0) {
      // Keyed on the unordered pair so (a,b) and (b,a) corrupt consistently.
      const auto lo = static_cast<std::uint64_t>(std::min(obs_a.view_id, obs_b.view_id));
      const auto hi = static_cast<std::uint64_t>(std::max(obs_a.view_id, obs_b.view_id));
      CounterRng rng = make_rng(seed, Stream::kOutlier, lo * 1000003ULL + hi, c.point,
                                obs_a.view_id < obs_b.view_id ? 0 : 1);
      if (rng.uniform() < outlier_rate && n_cells_b > 1) {
        int wrong = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_cells_b - 1)));
        if (wrong >= c.cell_b) ++wrong;
        m.cell_b = obs_b.cell_center(wrong);
      }
    }
    matches.push_back(m);
  }
  return matches;
}

std::vector<std::pair<int, int>> select_view_pairs(const ViewSet& views, std::size_t max_exhaustive,
                                                   std::size_t neighbors) {
  std::vector<std::pair<int, int>> pairs;
  const auto& vs = views.views();
  if (vs.size() <= max_exhaustive) {
    for (std::size_t i = 0; i < vs.size(); ++i) {
      for (std::size_t j = i + 1; j < vs.size(); ++j) {
        pairs.emplace_back(std::min(vs[i].id, vs[j].id), std::max(vs[i].id, vs[j].id));
      }
    }
  } else {
    for (std::size_t i = 0; i < vs.size(); ++i) {
      std::vector<std::size_t> order(vs.size());
      std::iota(order.begin(), order.end(), 0);
      const Eigen::Vector3d ci = vs[i].pose.center();
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double da = (vs[a].pose.center() - ci).squaredNorm();
        const double db = (vs[b].pose.center() - ci).squaredNorm();
        return da != db ? da < db : vs[a].id < vs[b].id;
      });
      std::size_t taken = 0;
      for (std::size_t k : order) {
        if (k == i) continue;
        if (taken++ == neighbors) break;
        pairs.emplace_back(std::min(vs[i].id, vs[k].id), std::max(vs[i].id, vs[k].id));
      }
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  return pairs;
}

OracleMatcher::OracleMatcher(const SyntheticScene& scene) : scene_(scene) {
  observations_.resize(scene.views.size());
  for (std::size_t v = 0; v < scene.views.size(); ++v) {
    observations_[v] = render_observations(scene, static_cast<int>(v));
  }
}

const ViewObservations& OracleMatcher::observations(int view) const {
  if (view < 0 || view >= static_cast<int>(observations_.size())) {
    throw Error(ErrorCode::kArgument, "unknown view id " + std::to_string(view));
  }
  return observations_[view];
}

std::vector<CoarseMatch> OracleMatcher::match_pair(int view_a, int view_b) const {
  return coarse_match_pair(observations(view_a), observations(view_b), scene_.noise.outlier_rate, scene_.seed);
}

Pixel OracleMatcher::reference_location(int view, const Pixel& cell) const {
  const ViewObservations& obs = observations(view);
  const int owner = obs.owner_at(cell);
  return owner < 0 ? cell : obs.find(owner)->pixel;
}

FineMatchResult OracleMatcher::fine_refine(const FineMatchQuery& q) const {
  const ViewObservations& ref = observations(q.reference_view);
  const ViewObservations& src = observations(q.source_view);
  if (!ref.camera.contains(q.reference_pixel) || !src.camera.contains(q.source_cell)) {
    throw Error(ErrorCode::kArgument, "fine query outside the image");
  }
  const int point = ref.owner_at(q.reference_pixel);
  if (point >= 0) {
    const PointObservation* po = src.find(point);
    if (po != nullptr && po->visible && src.cell_index(po->pixel) == src.cell_index(q.source_cell)) {
      return {oracle_fine_location(scene_, src, point), 1.0};
    }
  }
  return {grid_cell(q.source_cell), kOutlierConfidence};
}

std::optional<Eigen::VectorXd> OracleMatcher::coarse_feature(int view, const Pixel& u) const {
  const ViewObservations& obs = observations(view);
  const int owner = obs.owner_at(u);
  if (owner < 0) return std::nullopt;
  return obs.find(owner)->coarse;
}

std::optional<Eigen::VectorXd> OracleMatcher::fine_feature(int view, const Pixel& u) const {
  const ViewObservations& obs = observations(view);
  const int owner = obs.owner_at(u);
  if (owner < 0) return std::nullopt;
  return obs.find(owner)->fine;
}

void write_match_csv(const std::string& path, const std::vector<CoarseMatch>& matches) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << "view_a,view_b,ua,va,ub,vb,score\n";
  out.precision(17);
  for (const CoarseMatch& m : matches) {
    out << m.view_a << ',' << m.view_b << ',' << m.cell_a.x() << ',' << m.cell_a.y() << ',' << m.cell_b.x() << ','
        << m.cell_b.y() << ',' << m.score << '\n';
  }
}

}  // namespace semidense
