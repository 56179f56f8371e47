#include "semidense/pose_matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "semidense/random.hpp"

namespace semidense {
namespace {

double clamp_prob(double p, double eps) { return std::clamp(p, eps, 1.0 - eps); }

double focal_term(double p, bool positive, const FocalParams& fp) {
  const double q = clamp_prob(p, fp.eps);
  if (positive) return -fp.alpha * std::pow(1.0 - q, fp.gamma) * std::log(q);
  return -fp.alpha * std::pow(q, fp.gamma) * std::log(1.0 - q);
}

// d focal_term / dp; zero where the clamp is active.
double focal_derivative(double p, bool positive, const FocalParams& fp) {
  if (p <= fp.eps || p >= 1.0 - fp.eps) return 0.0;
  if (positive) {
    return fp.alpha * fp.gamma * std::pow(1.0 - p, fp.gamma - 1.0) * std::log(p) -
           fp.alpha * std::pow(1.0 - p, fp.gamma) / p;
  }
  return -fp.alpha * fp.gamma * std::pow(p, fp.gamma - 1.0) * std::log(1.0 - p) +
         fp.alpha * std::pow(p, fp.gamma) / (1.0 - p);
}

}  // namespace

DualSoftmax dual_softmax(const RowMatrix& scores) {
  DualSoftmax out;
  if (!scores.allFinite()) throw Error(ErrorCode::kNumeric, "non-finite score matrix");
  out.row.resize(scores.rows(), scores.cols());
  out.col.resize(scores.rows(), scores.cols());
  if (scores.size() == 0) {
    out.prob = out.row;
    return out;
  }
  const Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
  out.row = (scores.colwise() - row_max).array().exp().matrix();
  const Eigen::VectorXd row_sum = out.row.rowwise().sum();
  out.row.array().colwise() /= row_sum.array();

  const Eigen::RowVectorXd col_max = scores.colwise().maxCoeff();
  out.col = (scores.rowwise() - col_max).array().exp().matrix();
  const Eigen::RowVectorXd col_sum = out.col.colwise().sum();
  out.col.array().rowwise() /= col_sum.array();

  out.prob = out.row.cwiseProduct(out.col);
  return out;
}

std::vector<CoarseCorrespondence> mutual_nearest_neighbors(const RowMatrix& prob, double threshold) {
  std::vector<CoarseCorrespondence> out;
  if (prob.size() == 0) return out;
  std::vector<Eigen::Index> col_best(prob.cols());
  for (Eigen::Index q = 0; q < prob.cols(); ++q) prob.col(q).maxCoeff(&col_best[q]);
  for (Eigen::Index j = 0; j < prob.rows(); ++j) {
    Eigen::Index q = 0;
    const double p = prob.row(j).maxCoeff(&q);
    if (col_best[q] == j && p >= threshold) {
      out.push_back({static_cast<int>(j), static_cast<int>(q), p});
    }
  }
  return out;
}

RowMatrix normalized_model_positions(const std::vector<Eigen::Vector3d>& points) {
  RowMatrix pos(static_cast<Eigen::Index>(points.size()), 3);
  if (points.empty()) return pos;
  Eigen::Vector3d lo = points.front();
  Eigen::Vector3d hi = points.front();
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Eigen::Vector3d extent = (hi - lo).cwiseMax(1e-12);
  for (std::size_t i = 0; i < points.size(); ++i) {
    pos.row(static_cast<Eigen::Index>(i)) = (points[i] - lo).cwiseQuotient(extent).transpose();
  }
  return pos;
}

RowMatrix normalized_cell_positions(const QueryFeatureMaps& query) {
  RowMatrix pos(query.num_cells(), 2);
  for (int c = 0; c < query.num_cells(); ++c) {
    const Pixel u = query.coarse_center(c);
    pos(c, 0) = u.x() / query.camera.width;
    pos(c, 1) = u.y() / query.camera.height;
  }
  return pos;
}

CoarseMatchOutput coarse_match_2d3d(const PointCloudModel& model, const QueryFeatureMaps& query,
                                    const AttentionStack& stack, const MatchingParams& params) {
  query.validate();
  CoarseMatchOutput out;
  if (model.empty()) {
    out.scores.resize(0, query.num_cells());
    out.prob = out.scores;
    return out;
  }
  if (model.coarse_features.cols() != query.coarse.cols()) {
    throw Error(ErrorCode::kArgument, "model and query coarse feature widths differ");
  }
  RowMatrix f3 = model.coarse_features;
  RowMatrix f2 = query.coarse;
  if (!params.bypass) {
    f3 = positional_encode(f3, normalized_model_positions(model.points), params.pe_scale);
    f2 = positional_encode(f2, normalized_cell_positions(query), params.pe_scale);
    stack.forward(f3, f2);
  }
  if (!f3.allFinite() || !f2.allFinite()) throw Error(ErrorCode::kNumeric, "non-finite transformed features");

  out.scores.noalias() = f3 * f2.transpose();
  out.scores /= params.tau;
  DualSoftmax ds = dual_softmax(out.scores);
  out.prob = std::move(ds.prob);
  out.matches = mutual_nearest_neighbors(out.prob, params.theta);
  return out;
}

WindowExpectation window_expectation(const Eigen::VectorXd& logits, int window) {
  if (window < 1 || logits.size() != window * window) throw Error(ErrorCode::kArgument, "window logits shape");
  const double top = logits.maxCoeff();
  if (!std::isfinite(top)) throw Error(ErrorCode::kNumeric, "window has no finite logit");
  const Eigen::VectorXd w = (logits.array() - top).exp().matrix();
  const Eigen::VectorXd p = w / w.sum();
  const int r = window / 2;
  WindowExpectation out;
  out.offset.setZero();
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      out.offset += p((dy + r) * window + (dx + r)) * Eigen::Vector2d(dx, dy);
    }
  }
  out.confidence = p.maxCoeff();
  return out;
}

std::vector<FineCorrespondence> fine_match_2d3d(const PointCloudModel& model, const QueryFeatureMaps& query,
                                                const std::vector<CoarseCorrespondence>& coarse,
                                                const AttentionStack& stack, const MatchingParams& params) {
  if (params.window < 1 || params.window % 2 == 0) throw Error(ErrorCode::kArgument, "fine window must be odd");
  const int w = params.window;
  const int r = w / 2;
  std::vector<FineCorrespondence> out;
  out.reserve(coarse.size());
  for (const CoarseCorrespondence& c : coarse) {
    const Pixel center = query.coarse_center(c.cell);
    const int fx0 = static_cast<int>(center.x()) / kFineStride;
    const int fy0 = static_cast<int>(center.y()) / kFineStride;

    std::vector<int> slots;
    std::vector<int> rows;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        const int fx = fx0 + dx;
        const int fy = fy0 + dy;
        if (fx < 0 || fy < 0 || fx >= query.fine_cols || fy >= query.fine_rows) continue;
        slots.push_back((dy + r) * w + (dx + r));
        rows.push_back(fy * query.fine_cols + fx);
      }
    }
    RowMatrix crop(static_cast<Eigen::Index>(rows.size()), query.fine.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) crop.row(static_cast<Eigen::Index>(i)) = query.fine.row(rows[i]);
    RowMatrix point = model.fine_features.row(c.point);
    if (!params.bypass) stack.forward(point, crop);

    Eigen::VectorXd logits = Eigen::VectorXd::Constant(w * w, -std::numeric_limits<double>::infinity());
    const Eigen::VectorXd corr = crop * point.row(0).transpose();
    for (std::size_t i = 0; i < slots.size(); ++i) logits(slots[i]) = params.fine_logit_scale * corr(static_cast<Eigen::Index>(i));

    const WindowExpectation e = window_expectation(logits, w);
    FineCorrespondence f;
    f.point = c.point;
    f.cell = c.cell;
    f.location = center + kFineStride * e.offset;
    f.confidence = e.confidence;
    f.clamped = static_cast<int>(slots.size()) != w * w;
    out.push_back(f);
  }
  return out;
}

CorrespondenceSet match_2d3d(const PointCloudModel& model, const QueryFeatureMaps& query,
                             const AttentionStack& coarse_stack, const AttentionStack& fine_stack,
                             const MatchingParams& params) {
  CorrespondenceSet set;
  set.coarse = coarse_match_2d3d(model, query, coarse_stack, params).matches;
  set.fine = fine_match_2d3d(model, query, set.coarse, fine_stack, params);
  return set;
}

std::vector<LossEntry> select_loss_entries(const RowMatrix& prob, const RowMatrix& gt, const FocalParams& params,
                                           double theta) {
  if (prob.rows() != gt.rows() || prob.cols() != gt.cols()) {
    throw Error(ErrorCode::kArgument, "probability and ground-truth shapes differ");
  }
  std::vector<LossEntry> positives;
  std::vector<LossEntry> negatives;
  if (params.dense) {
    for (Eigen::Index j = 0; j < gt.rows(); ++j) {
      for (Eigen::Index q = 0; q < gt.cols(); ++q) {
        (gt(j, q) > 0.5 ? positives : negatives).push_back({int(j), int(q), gt(j, q) > 0.5});
      }
    }
    positives.insert(positives.end(), negatives.begin(), negatives.end());
    return positives;
  }

  std::vector<char> row_hit(gt.rows(), 0);
  std::vector<char> col_hit(gt.cols(), 0);
  for (Eigen::Index j = 0; j < gt.rows(); ++j) {
    for (Eigen::Index q = 0; q < gt.cols(); ++q) {
      if (gt(j, q) > 0.5) {
        positives.push_back({int(j), int(q), true});
        row_hit[j] = col_hit[q] = 1;
      }
    }
  }
  for (const auto& m : mutual_nearest_neighbors(prob, theta)) row_hit[m.point] = col_hit[m.cell] = 1;
  for (Eigen::Index j = 0; j < gt.rows(); ++j) {
    for (Eigen::Index q = 0; q < gt.cols(); ++q) {
      if (gt(j, q) <= 0.5 && (row_hit[j] || col_hit[q])) negatives.push_back({int(j), int(q), false});
    }
  }
  const auto cap = static_cast<std::size_t>(params.negative_cap * std::max<std::size_t>(positives.size(), 1));
  if (negatives.size() > cap) {
    std::stable_sort(negatives.begin(), negatives.end(), [&](const LossEntry& a, const LossEntry& b) {
      return prob(a.row, a.col) > prob(b.row, b.col);
    });
    negatives.resize(cap);
  }
  positives.insert(positives.end(), negatives.begin(), negatives.end());
  return positives;
}

double focal_loss(const RowMatrix& prob, const std::vector<LossEntry>& entries, const FocalParams& params) {
  if (entries.empty()) return 0.0;
  double sum = 0.0;
  for (const LossEntry& e : entries) {
    if (e.row < 0 || e.col < 0 || e.row >= prob.rows() || e.col >= prob.cols()) {
      throw Error(ErrorCode::kArgument, "loss entry outside the probability matrix");
    }
    sum += focal_term(prob(e.row, e.col), e.positive, params);
  }
  return sum / static_cast<double>(entries.size());
}

LossAndGradient focal_loss_with_gradient(const RowMatrix& scores, const std::vector<LossEntry>& entries,
                                         const FocalParams& params) {
  const DualSoftmax ds = dual_softmax(scores);
  LossAndGradient out;
  out.loss = focal_loss(ds.prob, entries, params);
  out.grad_scores = RowMatrix::Zero(scores.rows(), scores.cols());
  if (entries.empty()) return out;

  RowMatrix g = RowMatrix::Zero(scores.rows(), scores.cols());  // d loss / d P
  const double inv = 1.0 / static_cast<double>(entries.size());
  for (const LossEntry& e : entries) g(e.row, e.col) += inv * focal_derivative(ds.prob(e.row, e.col), e.positive, params);

  // P = A .* B, A row softmax, B column softmax.
  const RowMatrix ga = g.cwiseProduct(ds.col);
  const RowMatrix gb = g.cwiseProduct(ds.row);
  const Eigen::VectorXd row_dot = ga.cwiseProduct(ds.row).rowwise().sum();
  const Eigen::RowVectorXd col_dot = gb.cwiseProduct(ds.col).colwise().sum();
  out.grad_scores = ds.row.cwiseProduct(RowMatrix(ga.colwise() - row_dot)) +
                    ds.col.cwiseProduct(RowMatrix(gb.rowwise() - col_dot));
  return out;
}

double l2_fine_loss(const std::vector<Pixel>& predicted, const std::vector<Pixel>& target) {
  if (predicted.size() != target.size()) throw Error(ErrorCode::kArgument, "fine loss size mismatch");
  if (predicted.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) sum += (predicted[i] - target[i]).squaredNorm();
  return sum / static_cast<double>(predicted.size());
}

double total_loss(double coarse, double fine, const LossWeights& weights) {
  return weights.coarse * coarse + weights.fine * fine;
}

RowMatrix coarse_ground_truth(const std::vector<Eigen::Vector3d>& points, const SE3d& pose, const Camerad& camera) {
  const int cols = (camera.width + kCoarseStride - 1) / kCoarseStride;
  const int rows = (camera.height + kCoarseStride - 1) / kCoarseStride;
  RowMatrix gt = RowMatrix::Zero(static_cast<Eigen::Index>(points.size()), rows * cols);
  std::vector<int> owner(static_cast<std::size_t>(rows * cols), -1);
  std::vector<double> depth(owner.size(), 0.0);
  for (std::size_t j = 0; j < points.size(); ++j) {
    const Eigen::Vector3d pc = pose * points[j];
    if (!(pc.z() > kMinDepth)) continue;
    const Pixel u = project_camera(camera, pc);
    if (!camera.contains(u)) continue;
    const int cell = static_cast<int>(u.y() / kCoarseStride) * cols + static_cast<int>(u.x() / kCoarseStride);
    if (owner[cell] < 0 || pc.z() < depth[cell]) {
      owner[cell] = static_cast<int>(j);
      depth[cell] = pc.z();
    }
  }
  for (std::size_t c = 0; c < owner.size(); ++c) {
    if (owner[c] >= 0) gt(owner[c], static_cast<Eigen::Index>(c)) = 1.0;
  }
  return gt;
}

std::vector<int> sample_or_pad(std::size_t model_size, std::size_t size, std::uint64_t seed) {
  std::vector<int> idx(model_size);
  std::iota(idx.begin(), idx.end(), 0);
  if (model_size > size) {
    CounterRng rng = make_rng(seed, Stream::kSubsample, model_size, size);
    for (std::size_t i = 0; i < size; ++i) {
      const std::size_t k = i + static_cast<std::size_t>(rng.below(model_size - i));
      std::swap(idx[i], idx[k]);
    }
    idx.resize(size);
  } else {
    idx.resize(size, -1);
  }
  return idx;
}

}  // namespace semidense
