#pragma once

// The semi-dense matcher seam. Reconstruction only talks to SemiDenseMatcher
// and FeatureSource; OracleMatcher implements both from a synthetic scene.
// A learned coarse-to-fine backbone would slot in behind the same interfaces.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "semidense/geometry.hpp"
#include "semidense/scene.hpp"
#include "semidense/views.hpp"

namespace semidense {

struct CoarseMatch {
  int view_a = -1;
  int view_b = -1;
  Pixel cell_a;  // stride-8 cell centres
  Pixel cell_b;
  double score = 0.0;  // [0, 1]
};

struct FineMatchQuery {
  int reference_view = -1;
  Pixel reference_pixel;  // u_r, held fixed
  int source_view = -1;
  Pixel source_cell;  // coarse location of the source node
};

struct FineMatchResult {
  Pixel location;  // sub-pixel, within +-4 px of source_cell
  double confidence = 0.0;
};

inline constexpr double kRefineWindowHalf = 4.0;  // 9x9 window

class SemiDenseMatcher {
 public:
  virtual ~SemiDenseMatcher() = default;

  virtual std::vector<CoarseMatch> match_pair(int view_a, int view_b) const = 0;
  virtual FineMatchResult fine_refine(const FineMatchQuery& query) const = 0;

  // Sub-pixel anchor of a fixed reference node. A grid backbone returns the
  // cell centre itself.
  virtual Pixel reference_location(int /*view*/, const Pixel& cell) const { return cell; }
};

// Per-view descriptor sampling used for 3D feature aggregation.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  virtual std::optional<Eigen::VectorXd> coarse_feature(int view, const Pixel& u) const = 0;
  virtual std::optional<Eigen::VectorXd> fine_feature(int view, const Pixel& u) const = 0;
};

// Coarse matches between two rendered views. Candidates are points visible
// and front-most in their cell in both views; a cell is matched at most once
// on either side (highest score wins, ties by lower point id). Afterwards
// outlier_rate of the matches get a uniformly random wrong cell in view b.
std::vector<CoarseMatch> coarse_match_pair(const ViewObservations& obs_a, const ViewObservations& obs_b,
                                           double outlier_rate, std::uint64_t seed);

// View pairs to match: exhaustive up to max_exhaustive views, otherwise each
// view with its `neighbors` nearest views by camera centre. Pairs are (a < b),
// sorted.
std::vector<std::pair<int, int>> select_view_pairs(const ViewSet& views, std::size_t max_exhaustive = 50,
                                                   std::size_t neighbors = 10);

class OracleMatcher final : public SemiDenseMatcher, public FeatureSource {
 public:
  // Renders every reference view of the scene once.
  explicit OracleMatcher(const SyntheticScene& scene);

  std::vector<CoarseMatch> match_pair(int view_a, int view_b) const override;
  FineMatchResult fine_refine(const FineMatchQuery& query) const override;
  Pixel reference_location(int view, const Pixel& cell) const override;

  std::optional<Eigen::VectorXd> coarse_feature(int view, const Pixel& u) const override;
  std::optional<Eigen::VectorXd> fine_feature(int view, const Pixel& u) const override;

  const ViewObservations& observations(int view) const;
  const SyntheticScene& scene() const { return scene_; }

  static constexpr double kOutlierConfidence = 0.1;

 private:
  const SyntheticScene& scene_;
  std::vector<ViewObservations> observations_;
};

void write_match_csv(const std::string& path, const std::vector<CoarseMatch>& matches);

}  // namespace semidense
