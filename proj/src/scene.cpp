#include "semidense/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "semidense/random.hpp"

namespace semidense {
namespace {

constexpr int kShells = 3;
constexpr int kMaxPointAttempts = 1000;

Eigen::VectorXd random_unit(CounterRng& rng, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.gaussian();
  return v / v.norm();
}

Eigen::Vector3d random_direction(CounterRng& rng) {
  Eigen::Vector3d v(rng.gaussian(), rng.gaussian(), rng.gaussian());
  return v / v.norm();
}

struct Shell {
  Eigen::Vector3d center;
  Eigen::Vector3d radii;
  Eigen::Matrix3d rotation;
};

std::vector<Shell> make_shells(std::uint64_t seed) {
  std::vector<Shell> shells;
  for (int s = 0; s < kShells; ++s) {
    CounterRng rng = make_rng(seed, Stream::kShape, s);
    Shell shell;
    shell.center = Eigen::Vector3d(rng.uniform(-0.12, 0.12), rng.uniform(-0.12, 0.12),
                                   rng.uniform(-0.12, 0.12));
    shell.radii = Eigen::Vector3d(rng.uniform(0.15, 0.3), rng.uniform(0.15, 0.3), rng.uniform(0.15, 0.3));
    const Eigen::Vector3d omega(rng.uniform(-3.14, 3.14), rng.uniform(-3.14, 3.14), rng.uniform(-3.14, 3.14));
    shell.rotation = SE3d::so3_exp(omega);
    shells.push_back(shell);
  }
  return shells;
}

View make_view(std::uint64_t seed, Stream stream, int index, int id, const SceneOptions& opt) {
  CounterRng rng = make_rng(seed, stream, index);
  // Upper viewing hemisphere, away from the horizon and the pole.
  const double azimuth = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double elevation = rng.uniform(10.0, 80.0) * std::numbers::pi / 180.0;
  const double radius = rng.uniform(opt.min_radius, opt.max_radius);
  const Eigen::Vector3d eye = radius * Eigen::Vector3d(std::cos(elevation) * std::cos(azimuth),
                                                       std::cos(elevation) * std::sin(azimuth),
                                                       std::sin(elevation));
  SE3d pose = look_at<double>(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ());
  const double j = opt.jitter_deg * std::numbers::pi / 180.0;
  const Eigen::Vector3d jitter(rng.uniform(-j, j), rng.uniform(-j, j), rng.uniform(-j, j));
  const Eigen::Matrix3d r = SE3d::so3_exp(jitter) * pose.rotation();
  pose = SE3d(r, -(r * eye));

  View view;
  view.id = id;
  view.pose = pose;
  view.camera.fx = opt.focal;
  view.camera.fy = opt.focal;
  view.camera.cx = opt.image_width / 2.0;
  view.camera.cy = opt.image_height / 2.0;
  view.camera.width = opt.image_width;
  view.camera.height = opt.image_height;
  return view;
}

bool in_frustum(const View& view, const Eigen::Vector3d& p, Pixel* pixel, double* depth) {
  const Eigen::Vector3d pc = view.pose * p;
  if (!(pc.z() > kMinDepth)) return false;
  const Pixel u = project_camera(view.camera, pc);
  if (!view.camera.contains(u)) return false;
  if (pixel) *pixel = u;
  if (depth) *depth = pc.z();
  return true;
}

Eigen::VectorXd observe(const Eigen::VectorXd& clean, double sigma, CounterRng rng) {
  if (sigma == 0.0) return clean;
  const double per_axis = sigma / std::sqrt(static_cast<double>(clean.size()));
  Eigen::VectorXd v = clean;
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += per_axis * rng.gaussian();
  return v / v.norm();
}

}  // namespace

void NoiseModel::validate() const {
  const bool ok = fine_noise_sigma >= 0 && descriptor_noise_sigma >= 0 && dropout_rate >= 0 &&
                  dropout_rate < 1 && outlier_rate >= 0 && outlier_rate < 1 &&
                  std::isfinite(fine_noise_sigma) && std::isfinite(descriptor_noise_sigma);
  if (!ok) throw Error(ErrorCode::kArgument, "noise model out of range");
}

const View& SyntheticScene::view(int id) const {
  const int n = static_cast<int>(views.size());
  if (id >= 0 && id < n) return views[id];
  if (id >= n && id < n + static_cast<int>(query_views.size())) return query_views[id - n];
  throw Error(ErrorCode::kArgument, "unknown view id " + std::to_string(id));
}

SyntheticScene generate_scene(std::uint64_t seed, int n_points, int n_views, const NoiseModel& noise,
                              const SceneOptions& options) {
  if (n_points < 8) throw Error(ErrorCode::kArgument, "n_points must be >= 8");
  if (n_views < 2) throw Error(ErrorCode::kArgument, "n_views must be >= 2");
  if (options.n_queries < 0 || options.coarse_dim < 1 || options.fine_dim < 1 || options.image_width < 8 ||
      options.image_height < 8 || options.image_width % kCoarseStride != 0 ||
      options.image_height % kCoarseStride != 0) {
    throw Error(ErrorCode::kArgument, "invalid scene options");
  }
  noise.validate();

  SyntheticScene scene;
  scene.seed = seed;
  scene.noise = noise;
  for (int v = 0; v < n_views; ++v) scene.views.push_back(make_view(seed, Stream::kView, v, v, options));
  for (int q = 0; q < options.n_queries; ++q) {
    scene.query_views.push_back(make_view(seed, Stream::kQueryView, q, n_views + q, options));
  }
  for (const View& v : scene.views) v.camera.validate();

  const std::vector<Shell> shells = make_shells(seed);
  scene.points.reserve(n_points);
  for (int i = 0; i < n_points; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPointAttempts && !placed; ++attempt) {
      CounterRng rng = make_rng(seed, Stream::kPoint, i, attempt);
      const Shell& shell = shells[rng.below(kShells)];
      const Eigen::Vector3d dir = random_direction(rng);
      const Eigen::Vector3d p = shell.center + shell.rotation * shell.radii.cwiseProduct(dir);
      int seen = 0;
      for (const View& v : scene.views) {
        if (in_frustum(v, p, nullptr, nullptr) && ++seen >= 2) break;
      }
      if (seen >= 2) {
        scene.points.push_back(p);
        placed = true;
      }
    }
    if (!placed) throw Error(ErrorCode::kDegenerate, "could not place a point visible in two views");
  }

  scene.coarse_descriptors.resize(n_points, options.coarse_dim);
  scene.fine_descriptors.resize(n_points, options.fine_dim);
  for (int i = 0; i < n_points; ++i) {
    CounterRng rc = make_rng(seed, Stream::kCoarseDescriptor, i);
    CounterRng rf = make_rng(seed, Stream::kFineDescriptor, i);
    scene.coarse_descriptors.row(i) = random_unit(rc, options.coarse_dim).transpose();
    scene.fine_descriptors.row(i) = random_unit(rf, options.fine_dim).transpose();
  }
  return scene;
}

Pixel grid_cell(const Pixel& u, int stride) {
  return Pixel(std::floor(u.x() / stride) * stride + stride / 2.0,
               std::floor(u.y() / stride) * stride + stride / 2.0);
}

int ViewObservations::cell_index(const Pixel& u) const {
  const int cx = static_cast<int>(std::floor(u.x() / kCoarseStride));
  const int cy = static_cast<int>(std::floor(u.y() / kCoarseStride));
  if (cx < 0 || cy < 0 || cx >= grid_cols() || cy >= grid_rows()) return -1;
  return cy * grid_cols() + cx;
}

Pixel ViewObservations::cell_center(int cell) const {
  return Pixel((cell % grid_cols()) * kCoarseStride + kCoarseStride / 2.0,
               (cell / grid_cols()) * kCoarseStride + kCoarseStride / 2.0);
}

const PointObservation* ViewObservations::find(int point_id) const {
  if (point_id < 0 || point_id >= static_cast<int>(index_of_point.size())) return nullptr;
  const int idx = index_of_point[point_id];
  return idx < 0 ? nullptr : &points[idx];
}

bool ViewObservations::is_visible(int point_id) const {
  const PointObservation* o = find(point_id);
  return o != nullptr && o->visible;
}

int ViewObservations::owner_at(const Pixel& u) const {
  const int cell = cell_index(u);
  return cell < 0 ? -1 : owner_of_cell[cell];
}

Eigen::VectorXd observe_coarse_descriptor(const SyntheticScene& scene, int view_id, int point_id) {
  return observe(scene.coarse_descriptors.row(point_id).transpose(), scene.noise.descriptor_noise_sigma,
                 make_rng(scene.seed, Stream::kObservedCoarse, view_id, point_id));
}

Eigen::VectorXd observe_fine_descriptor(const SyntheticScene& scene, int view_id, int point_id) {
  return observe(scene.fine_descriptors.row(point_id).transpose(), scene.noise.descriptor_noise_sigma,
                 make_rng(scene.seed, Stream::kObservedFine, view_id, point_id));
}

ViewObservations render_observations(const SyntheticScene& scene, int view_id) {
  const View& view = scene.view(view_id);
  ViewObservations obs;
  obs.view_id = view_id;
  obs.camera = view.camera;
  obs.index_of_point.assign(scene.points.size(), -1);
  obs.owner_of_cell.assign(static_cast<std::size_t>(obs.grid_rows() * obs.grid_cols()), -1);

  for (int i = 0; i < static_cast<int>(scene.points.size()); ++i) {
    PointObservation po;
    if (!in_frustum(view, scene.points[i], &po.pixel, &po.depth)) continue;
    po.point_id = i;
    po.cell = grid_cell(po.pixel);
    CounterRng rng = make_rng(scene.seed, Stream::kDropout, view_id, i);
    po.visible = !(rng.uniform() < scene.noise.dropout_rate);
    obs.index_of_point[i] = static_cast<int>(obs.points.size());
    obs.points.push_back(std::move(po));
  }

  // Cell-resolution z-buffer: the nearest visible point owns the cell.
  for (const PointObservation& po : obs.points) {
    if (!po.visible) continue;
    int& owner = obs.owner_of_cell[obs.cell_index(po.pixel)];
    if (owner < 0) {
      owner = po.point_id;
      continue;
    }
    const PointObservation& cur = *obs.find(owner);
    if (po.depth < cur.depth || (po.depth == cur.depth && po.point_id < cur.point_id)) owner = po.point_id;
  }
  for (int owner : obs.owner_of_cell) {
    if (owner < 0) continue;
    PointObservation& po = obs.points[obs.index_of_point[owner]];
    po.cell_owner = true;
    po.coarse = observe_coarse_descriptor(scene, view_id, owner);
    po.fine = observe_fine_descriptor(scene, view_id, owner);
  }
  return obs;
}

Pixel oracle_fine_location(const SyntheticScene& scene, const ViewObservations& obs, int point_id) {
  const PointObservation* po = obs.find(point_id);
  if (po == nullptr || !po->visible) {
    throw Error(ErrorCode::kVisibility, "point " + std::to_string(point_id) + " not visible in view " +
                                            std::to_string(obs.view_id));
  }
  const double sigma = scene.noise.fine_noise_sigma;
  if (sigma == 0.0) return po->pixel;
  CounterRng rng = make_rng(scene.seed, Stream::kFineLocation, obs.view_id, point_id);
  const double half = kCoarseStride / 2.0;
  Pixel u = po->pixel + sigma * Pixel(rng.gaussian(), rng.gaussian());
  u.x() = std::clamp(u.x(), po->cell.x() - half, po->cell.x() + half);
  u.y() = std::clamp(u.y(), po->cell.y() - half, po->cell.y() + half);
  return u;
}

Pixel oracle_fine_location(const SyntheticScene& scene, int view_id, int point_id) {
  return oracle_fine_location(scene, render_observations(scene, view_id), point_id);
}

void QueryFeatureMaps::validate() const {
  const bool dims = coarse_rows == camera.height / kCoarseStride && coarse_cols == camera.width / kCoarseStride &&
                    fine_rows == camera.height / kFineStride && fine_cols == camera.width / kFineStride &&
                    coarse.rows() == coarse_rows * coarse_cols && fine.rows() == fine_rows * fine_cols;
  if (!dims) throw Error(ErrorCode::kArgument, "query feature map dimensions inconsistent with strides");
  const auto unit = [](const RowMatrix& m) {
    return ((m.rowwise().norm().array() - 1.0).abs() <= 1e-6).all();
  };
  if (!unit(coarse) || !unit(fine)) throw Error(ErrorCode::kArgument, "query descriptors not unit norm");
}

QueryFeatureMaps synthesize_query_maps(const SyntheticScene& scene, int view_id) {
  const ViewObservations obs = render_observations(scene, view_id);
  QueryFeatureMaps maps;
  maps.camera = obs.camera;
  maps.coarse_rows = obs.camera.height / kCoarseStride;
  maps.coarse_cols = obs.camera.width / kCoarseStride;
  maps.fine_rows = obs.camera.height / kFineStride;
  maps.fine_cols = obs.camera.width / kFineStride;

  const int cc = scene.coarse_dim();
  const int cf = scene.fine_dim();
  maps.coarse.resize(maps.num_cells(), cc);
  for (int c = 0; c < maps.num_cells(); ++c) {
    CounterRng rng = make_rng(scene.seed, Stream::kNoiseFloor, view_id, c, 0);
    maps.coarse.row(c) = random_unit(rng, cc).transpose();
  }
  for (int c = 0; c < static_cast<int>(obs.owner_of_cell.size()); ++c) {
    const int owner = obs.owner_of_cell[c];
    if (owner >= 0) maps.coarse.row(c) = obs.find(owner)->coarse.transpose();
  }

  const int n_fine = maps.fine_rows * maps.fine_cols;
  maps.fine.resize(n_fine, cf);
  for (int f = 0; f < n_fine; ++f) {
    CounterRng rng = make_rng(scene.seed, Stream::kNoiseFloor, view_id, f, 1);
    maps.fine.row(f) = random_unit(rng, cf).transpose();
  }
  // Each coarse-cell owner claims the four fine pixels around its (possibly
  // jittered) location. Correlation with its descriptor is set to
  // 1 + ln(w) / s for bilinear weight w, so a softmax at scale s over the
  // window returns the bilinear weights and its expectation the location.
  // Overlapping claims go to the larger weight, then the nearer point.
  struct Claim {
    int point = -1;
    double weight = 0.0;
    double depth = 0.0;
  };
  std::vector<Claim> claims(n_fine);
  for (const PointObservation& po : obs.points) {
    if (!po.cell_owner) continue;
    const Pixel u = oracle_fine_location(scene, obs, po.point_id) / kFineStride;
    const int x0 = static_cast<int>(std::floor(u.x()));
    const int y0 = static_cast<int>(std::floor(u.y()));
    const double tx = u.x() - x0;
    const double ty = u.y() - y0;
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const int fx = x0 + dx;
        const int fy = y0 + dy;
        if (fx < 0 || fy < 0 || fx >= maps.fine_cols || fy >= maps.fine_rows) continue;
        const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty);
        if (w < std::exp(-kFineProfileScale)) continue;
        Claim& c = claims[fy * maps.fine_cols + fx];
        if (c.point < 0 || w > c.weight || (w == c.weight && po.depth < c.depth)) c = {po.point_id, w, po.depth};
      }
    }
  }
  for (int f = 0; f < n_fine; ++f) {
    const Claim& c = claims[f];
    if (c.point < 0) continue;
    const Eigen::VectorXd d = obs.find(c.point)->fine;
    Eigen::VectorXd n = maps.fine.row(f).transpose();
    n -= n.dot(d) * d;
    n.normalize();
    const double a = 1.0 + std::log(c.weight) / kFineProfileScale;
    maps.fine.row(f) = (a * d + std::sqrt(std::max(0.0, 1.0 - a * a)) * n).transpose();
  }
  return maps;
}

}  // namespace semidense
