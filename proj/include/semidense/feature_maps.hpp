#pragma once

#include <Eigen/Dense>

#include "semidense/geometry.hpp"

namespace semidense {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kCoarseStride = 8;
inline constexpr int kFineStride = 2;
// Logit scale the synthetic fine maps are calibrated for.
inline constexpr double kFineProfileScale = 12.5;

// Query-image features at two resolutions. Coarse map: (H/8)x(W/8) cells,
// cell c centred at 8c+4. Fine map: (H/2)x(W/2); fine pixel i sits at image
// coordinate 2i, so a coarse centre 8c+4 is exactly fine pixel 4c+2.
struct QueryFeatureMaps {
  Camerad camera;
  int coarse_rows = 0;
  int coarse_cols = 0;
  RowMatrix coarse;  // (rows*cols) x C_c, row-major cell order
  int fine_rows = 0;
  int fine_cols = 0;
  RowMatrix fine;  // (rows*cols) x C_f

  int num_cells() const { return coarse_rows * coarse_cols; }

  Pixel coarse_center(int cell) const {
    return Pixel((cell % coarse_cols) * kCoarseStride + kCoarseStride / 2.0,
                 (cell / coarse_cols) * kCoarseStride + kCoarseStride / 2.0);
  }

  // Throws if dimensions disagree with the strides or rows are not unit norm.
  void validate() const;
};

}  // namespace semidense
