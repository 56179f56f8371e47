#pragma once

// Sparse-to-dense 2D-3D matching of a point-cloud model against query
// feature maps: dual-softmax coarse matching with mutual nearest neighbours,
// then windowed expectation for sub-pixel locations. Also the supervision
// losses (focal on the coarse probabilities, l2 on the fine locations) with
// their analytic gradient through the dual softmax.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "semidense/attention.hpp"
#include "semidense/feature_maps.hpp"
#include "semidense/refinement.hpp"

namespace semidense {

struct CoarseCorrespondence {
  int point = -1;
  int cell = -1;
  double confidence = 0.0;

  bool operator==(const CoarseCorrespondence&) const = default;
};

struct FineCorrespondence {
  int point = -1;
  int cell = -1;
  Pixel location;
  double confidence = 0.0;
  bool clamped = false;  // window cropped at the map border
};

struct CorrespondenceSet {
  std::vector<CoarseCorrespondence> coarse;
  std::vector<FineCorrespondence> fine;
};

struct DualSoftmax {
  RowMatrix row;   // softmax over each row (over cells)
  RowMatrix col;   // softmax over each column (over points)
  RowMatrix prob;  // row .* col
};

DualSoftmax dual_softmax(const RowMatrix& scores);

// Mutual argmax pairs of prob with prob >= threshold, sorted by point.
std::vector<CoarseCorrespondence> mutual_nearest_neighbors(const RowMatrix& prob, double threshold);

struct MatchingParams {
  double tau = 0.08;
  double theta = 0.4;
  int window = 5;
  double fine_logit_scale = kFineProfileScale;  // multiplies the fine correlation
  double pe_scale = 0.02;
  bool bypass = false;  // skip positional encoding and attention
};

struct CoarseMatchOutput {
  RowMatrix scores;  // N x cells, already divided by tau
  RowMatrix prob;
  std::vector<CoarseCorrespondence> matches;
};

CoarseMatchOutput coarse_match_2d3d(const PointCloudModel& model, const QueryFeatureMaps& query,
                                    const AttentionStack& stack, const MatchingParams& params);

struct WindowExpectation {
  Eigen::Vector2d offset;  // in fine-map pixels
  double confidence = 0.0;  // max probability
};

// Softmax over the w x w logits (row-major, dy outer) and the expectation of
// the (dx, dy) offsets; invalid cells carry -inf logits.
WindowExpectation window_expectation(const Eigen::VectorXd& logits, int window);

std::vector<FineCorrespondence> fine_match_2d3d(const PointCloudModel& model, const QueryFeatureMaps& query,
                                                const std::vector<CoarseCorrespondence>& coarse,
                                                const AttentionStack& stack, const MatchingParams& params);

CorrespondenceSet match_2d3d(const PointCloudModel& model, const QueryFeatureMaps& query,
                             const AttentionStack& coarse_stack, const AttentionStack& fine_stack,
                             const MatchingParams& params);

// Normalises model points by their bounding box, cells by image size.
RowMatrix normalized_model_positions(const std::vector<Eigen::Vector3d>& points);
RowMatrix normalized_cell_positions(const QueryFeatureMaps& query);

// --- supervision ----------------------------------------------------------

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
  double eps = 1e-6;
  double negative_cap = 10.0;  // max negatives per positive
  bool dense = false;          // use every entry instead of sampled negatives
};

struct LossEntry {
  int row;
  int col;
  bool positive;
};

// Entries the focal loss is evaluated on: all positives, plus gt-negatives in
// rows or columns holding a positive or a predicted mutual match, capped at
// negative_cap x positives (hardest first).
std::vector<LossEntry> select_loss_entries(const RowMatrix& prob, const RowMatrix& gt, const FocalParams& params,
                                           double theta);

double focal_loss(const RowMatrix& prob, const std::vector<LossEntry>& entries, const FocalParams& params);

struct LossAndGradient {
  double loss = 0.0;
  RowMatrix grad_scores;  // d loss / d S
};

// Focal loss of dual_softmax(scores) on a fixed entry set and its gradient
// with respect to the score matrix.
LossAndGradient focal_loss_with_gradient(const RowMatrix& scores, const std::vector<LossEntry>& entries,
                                         const FocalParams& params);

// Mean squared Euclidean distance between predicted and target locations.
double l2_fine_loss(const std::vector<Pixel>& predicted, const std::vector<Pixel>& target);

struct LossWeights {
  double coarse = 1.0;
  double fine = 1.0;
};

double total_loss(double coarse, double fine, const LossWeights& weights = {});

// Binary N x cells ground truth from projecting model points with the true
// pose; a cell keeps only its nearest point.
RowMatrix coarse_ground_truth(const std::vector<Eigen::Vector3d>& points, const SE3d& pose, const Camerad& camera);

// Indices for a fixed-size training batch: a random subset when the model is
// larger than `size`, otherwise all points followed by -1 padding.
std::vector<int> sample_or_pad(std::size_t model_size, std::size_t size, std::uint64_t seed);

inline constexpr std::size_t kTrainingModelSize = 7000;

}  // namespace semidense
