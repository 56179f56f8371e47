#include "semidense/attention.hpp"

#include <cmath>
#include <numbers>

#include "semidense/io.hpp"
#include "semidense/random.hpp"

namespace semidense {
namespace {

constexpr double kDenominatorFloor = 1e-6;
constexpr double kMaxFrequencyRatio = 64.0;

void normalize_rows(RowMatrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0) m.row(i) /= n;
  }
}

RowMatrix random_matrix(CounterRng& rng, int channels, double stddev) {
  RowMatrix m(channels, channels);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.gaussian();
  return m;
}

}  // namespace

RowMatrix sinusoidal_encoding(const RowMatrix& positions, int channels) {
  const int axes = static_cast<int>(positions.cols());
  if (axes < 1 || channels < 0) throw Error(ErrorCode::kArgument, "invalid positional-encoding shape");
  if (!positions.allFinite()) throw Error(ErrorCode::kNumeric, "non-finite positions");
  const int freqs = channels / (2 * axes);
  RowMatrix pe = RowMatrix::Zero(positions.rows(), channels);
  for (int k = 0; k < freqs; ++k) {
    const double t = freqs > 1 ? static_cast<double>(k) / (freqs - 1) : 0.0;
    const double omega = std::numbers::pi * std::pow(kMaxFrequencyRatio, t);
    for (int a = 0; a < axes; ++a) {
      const int c = 2 * (a * freqs + k);
      for (Eigen::Index i = 0; i < positions.rows(); ++i) {
        pe(i, c) = std::sin(omega * positions(i, a));
        pe(i, c + 1) = std::cos(omega * positions(i, a));
      }
    }
  }
  return pe;
}

RowMatrix positional_encode(const RowMatrix& features, const RowMatrix& positions, double scale) {
  if (features.rows() != positions.rows()) throw Error(ErrorCode::kArgument, "feature/position count mismatch");
  RowMatrix out = features + scale * sinusoidal_encoding(positions, static_cast<int>(features.cols()));
  normalize_rows(out);
  return out;
}

RowMatrix elu_feature_map(const RowMatrix& x) {
  return x.unaryExpr([](double v) { return v > 0 ? v + 1.0 : std::exp(v); });
}

RowMatrix linear_attention(const RowMatrix& queries, const RowMatrix& keys, const RowMatrix& values) {
  if (queries.cols() != keys.cols() || keys.rows() != values.rows()) {
    throw Error(ErrorCode::kArgument, "linear attention dimension mismatch");
  }
  const RowMatrix q = elu_feature_map(queries);
  const RowMatrix k = elu_feature_map(keys);
  const RowMatrix kv = k.transpose() * values;               // C x C_v
  const Eigen::RowVectorXd k_sum = k.colwise().sum();         // 1 x C
  const Eigen::VectorXd denom = (q * k_sum.transpose()).cwiseMax(kDenominatorFloor);
  RowMatrix out = q * kv;
  out.array().colwise() /= denom.array();
  return out;
}

void AttentionWeights::validate(int channels) const {
  for (const RowMatrix* m : {&q, &k, &v, &ff1, &ff2}) {
    if (m->rows() != channels || m->cols() != channels) {
      throw Error(ErrorCode::kArgument, "attention weight shape mismatch");
    }
    if (!m->allFinite()) throw Error(ErrorCode::kNumeric, "non-finite attention weights");
  }
}

RowMatrix attention_block(const RowMatrix& x, const RowMatrix& source, const AttentionWeights& w) {
  if (x.cols() != w.dim() || source.cols() != w.dim()) {
    throw Error(ErrorCode::kArgument, "attention input width does not match weights");
  }
  RowMatrix h = x + linear_attention(x * w.q, source * w.k, source * w.v);
  RowMatrix out = h + ((h * w.ff1).cwiseMax(0.0)) * w.ff2;
  normalize_rows(out);
  return out;
}

AttentionStack::AttentionStack(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) return;
  const int c = layers_.front().self.dim();
  for (const Layer& l : layers_) {
    l.self.validate(c);
    l.cross.validate(c);
  }
}

AttentionStack AttentionStack::seeded(int num_layers, int channels, std::uint64_t seed) {
  // Query/key projections at unit gain, value and output projections small,
  // so untrained stacks stay close to identity through the residual path.
  const double unit = 1.0 / std::sqrt(static_cast<double>(channels));
  const double small = 0.05 * unit;
  std::vector<Layer> layers;
  for (int i = 0; i < num_layers; ++i) {
    Layer layer;
    for (int part = 0; part < 2; ++part) {
      CounterRng rng = make_rng(seed, Stream::kWeights, i, part, channels);
      AttentionWeights& w = part == 0 ? layer.self : layer.cross;
      w.q = random_matrix(rng, channels, unit);
      w.k = random_matrix(rng, channels, unit);
      w.v = random_matrix(rng, channels, small);
      w.ff1 = random_matrix(rng, channels, unit);
      w.ff2 = random_matrix(rng, channels, small);
    }
    layers.push_back(std::move(layer));
  }
  return AttentionStack(std::move(layers));
}

AttentionStack AttentionStack::from_fmat(const FmatFile& file, int channels) {
  std::vector<Layer> layers;
  for (int i = 0; file.contains("layer" + std::to_string(i) + ".self.q"); ++i) {
    Layer layer;
    for (const char* kind : {"self", "cross"}) {
      AttentionWeights& w = std::string(kind) == "self" ? layer.self : layer.cross;
      const std::string prefix = "layer" + std::to_string(i) + "." + kind + ".";
      w.q = file.get(prefix + "q");
      w.k = file.get(prefix + "k");
      w.v = file.get(prefix + "v");
      w.ff1 = file.get(prefix + "ff1");
      w.ff2 = file.get(prefix + "ff2");
      w.validate(channels);
    }
    layers.push_back(std::move(layer));
  }
  return AttentionStack(std::move(layers));
}

void AttentionStack::to_fmat(FmatFile& file) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (const char* kind : {"self", "cross"}) {
      const AttentionWeights& w = std::string(kind) == "self" ? layers_[i].self : layers_[i].cross;
      const std::string prefix = "layer" + std::to_string(i) + "." + kind + ".";
      file.set(prefix + "q", w.q);
      file.set(prefix + "k", w.k);
      file.set(prefix + "v", w.v);
      file.set(prefix + "ff1", w.ff1);
      file.set(prefix + "ff2", w.ff2);
    }
  }
}

void AttentionStack::forward(RowMatrix& tokens_3d, RowMatrix& tokens_2d) const {
  for (const Layer& layer : layers_) {
    tokens_3d = attention_block(tokens_3d, tokens_3d, layer.self);
    tokens_2d = attention_block(tokens_2d, tokens_2d, layer.self);
    tokens_3d = attention_block(tokens_3d, tokens_2d, layer.cross);
    tokens_2d = attention_block(tokens_2d, tokens_3d, layer.cross);
  }
}

}  // namespace semidense
