#pragma once

// Positional encodings and linear-attention transformer blocks operating on
// row-major feature matrices (one token per row, y = x * W).

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "semidense/feature_maps.hpp"

namespace semidense {

// Sinusoidal encoding of N x D positions (normalised to [0, 1]). Each axis
// gets C / (2D) log-spaced frequencies, each contributing a sin/cos pair;
// leftover channels are zero.
RowMatrix sinusoidal_encoding(const RowMatrix& positions, int channels);

// features + scale * encoding(positions), rows renormalised.
RowMatrix positional_encode(const RowMatrix& features, const RowMatrix& positions, double scale);

// Positive feature map phi(x) = elu(x) + 1.
RowMatrix elu_feature_map(const RowMatrix& x);

// out_i = sum_j (phi(q_i) . phi(k_j)) v_j / sum_j phi(q_i) . phi(k_j), computed
// in O(N C^2) via the associativity of the kernel product.
RowMatrix linear_attention(const RowMatrix& queries, const RowMatrix& keys, const RowMatrix& values);

struct AttentionWeights {
  RowMatrix q, k, v, ff1, ff2;  // C x C each

  int dim() const { return static_cast<int>(q.rows()); }
  void validate(int channels) const;
};

// x + ff2(relu(ff1(h))) with h = x + attn(x W_q, s W_k, s W_v); rows
// renormalised so features stay comparable across layers.
RowMatrix attention_block(const RowMatrix& x, const RowMatrix& source, const AttentionWeights& w);

class FmatFile;

// N interleaved self/cross layers shared between the 3D and 2D token sets.
class AttentionStack {
 public:
  struct Layer {
    AttentionWeights self;
    AttentionWeights cross;
  };

  AttentionStack() = default;
  explicit AttentionStack(std::vector<Layer> layers);

  // Small residual-friendly random initialisation.
  static AttentionStack seeded(int num_layers, int channels, std::uint64_t seed);
  // Sections layer{i}.{self|cross}.{q|k|v|ff1|ff2}.
  static AttentionStack from_fmat(const FmatFile& file, int channels);
  void to_fmat(FmatFile& file) const;

  std::size_t num_layers() const { return layers_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }

  // Transforms both token sets in place.
  void forward(RowMatrix& tokens_3d, RowMatrix& tokens_2d) const;

 private:
  std::vector<Layer> layers_;
};

}  // namespace semidense
