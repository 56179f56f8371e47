#pragma once

// Deterministic synthetic scenes: the stand-in for real reference/query
// images and the learned backbone. Everything is derived from counter-based
// streams keyed on (seed, view, point), so rendering order never matters.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

#include "semidense/feature_maps.hpp"
#include "semidense/geometry.hpp"
#include "semidense/views.hpp"

namespace semidense {

struct NoiseModel {
  double fine_noise_sigma = 0.0;        // pixels
  double descriptor_noise_sigma = 0.0;  // expected norm of the additive noise
  double dropout_rate = 0.0;
  double outlier_rate = 0.0;

  void validate() const;
  bool operator==(const NoiseModel&) const = default;
};

struct SceneOptions {
  int n_queries = 20;
  int coarse_dim = 128;
  int fine_dim = 64;
  int image_width = 512;
  int image_height = 512;
  double focal = 600.0;
  double min_radius = 3.0;  // object diameters
  double max_radius = 5.0;
  double jitter_deg = 10.0;
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  NoiseModel noise;
  std::vector<Eigen::Vector3d> points;
  RowMatrix coarse_descriptors;  // N x C_c, unit rows
  RowMatrix fine_descriptors;    // N x C_f, unit rows
  std::vector<View> views;        // reference views, ids 0..V-1
  std::vector<View> query_views;  // held-out views, ids V..V+Q-1
  double diameter = 1.0;          // scene units
  double cm_per_unit = 10.0;

  const View& view(int id) const;
  ViewSet reference_set() const { return ViewSet(views); }
  int coarse_dim() const { return static_cast<int>(coarse_descriptors.cols()); }
  int fine_dim() const { return static_cast<int>(fine_descriptors.cols()); }
};

SyntheticScene generate_scene(std::uint64_t seed, int n_points, int n_views, const NoiseModel& noise,
                              const SceneOptions& options = {});

// Centre of the stride-sized grid cell containing u.
Pixel grid_cell(const Pixel& u, int stride = kCoarseStride);

struct PointObservation {
  int point_id = -1;
  Pixel pixel;  // true projection
  Pixel cell;   // stride-8 grid-cell centre
  double depth = 0.0;
  bool visible = false;     // survived dropout
  bool cell_owner = false;  // front-most visible point of its cell
  Eigen::VectorXd coarse;   // observed descriptors, filled for cell owners
  Eigen::VectorXd fine;
};

struct ViewObservations {
  int view_id = -1;
  Camerad camera;
  std::vector<PointObservation> points;  // every in-frustum point
  std::vector<int> index_of_point;       // point id -> index into points, -1 if out of frustum
  std::vector<int> owner_of_cell;        // cell index -> point id, -1 if empty

  int grid_cols() const { return (camera.width + kCoarseStride - 1) / kCoarseStride; }
  int grid_rows() const { return (camera.height + kCoarseStride - 1) / kCoarseStride; }
  int cell_index(const Pixel& u) const;
  Pixel cell_center(int cell) const;

  const PointObservation* find(int point_id) const;
  bool is_visible(int point_id) const;
  // Front-most visible point covering the cell containing u, -1 if none.
  int owner_at(const Pixel& u) const;
};

ViewObservations render_observations(const SyntheticScene& scene, int view_id);

// Descriptor of point_id as seen in view_id (point descriptor plus isotropic
// Gaussian noise, renormalized). Deterministic in (seed, view, point).
Eigen::VectorXd observe_coarse_descriptor(const SyntheticScene& scene, int view_id, int point_id);
Eigen::VectorXd observe_fine_descriptor(const SyntheticScene& scene, int view_id, int point_id);

// Ground truth for sub-pixel matches: the true projection plus fine_noise_sigma
// noise, clamped to +-4 px of the grid-cell centre.
Pixel oracle_fine_location(const SyntheticScene& scene, const ViewObservations& obs, int point_id);
Pixel oracle_fine_location(const SyntheticScene& scene, int view_id, int point_id);

// Query feature maps over a random noise floor. Coarse cells carry their
// owner's observed descriptor; on the fine map each owner leaves a sub-pixel
// profile around its oracle fine location, calibrated for kFineProfileScale.
QueryFeatureMaps synthesize_query_maps(const SyntheticScene& scene, int view_id);

}  // namespace semidense
