#include "doctest.h"
#include "support.hpp"

#include <cmath>
#include <vector>

#include "semidense/scene.hpp"

using namespace semidense;
using namespace semidense::test;

namespace {

bool same_scene(const SyntheticScene& a, const SyntheticScene& b) {
  if (a.points != b.points || a.coarse_descriptors != b.coarse_descriptors ||
      a.fine_descriptors != b.fine_descriptors || a.views.size() != b.views.size() ||
      a.query_views.size() != b.query_views.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.views.size(); ++i) {
    if (a.views[i].pose.matrix() != b.views[i].pose.matrix() || !(a.views[i].camera == b.views[i].camera)) return false;
  }
  for (std::size_t i = 0; i < a.query_views.size(); ++i) {
    if (a.query_views[i].pose.matrix() != b.query_views[i].pose.matrix()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("scene generation is bit-exact in the seed") {
  const SyntheticScene a = generate_scene(1, 100, 10, {});
  const SyntheticScene b = generate_scene(1, 100, 10, {});
  CHECK(same_scene(a, b));
  const SyntheticScene c = generate_scene(2, 100, 10, {});
  CHECK_FALSE(a.points == c.points);
}

TEST_CASE("scene generation validates its arguments") {
  CHECK_THROWS_AS(generate_scene(1, 7, 10, {}), Error);
  CHECK_THROWS_AS(generate_scene(1, 100, 1, {}), Error);
  NoiseModel bad;
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(generate_scene(1, 100, 10, bad), Error);
  bad = {};
  bad.fine_noise_sigma = -1;
  CHECK_THROWS_AS(generate_scene(1, 100, 10, bad), Error);
}

TEST_CASE("scene invariants: unit descriptors, object box, two-view visibility") {
  const SyntheticScene s = generate_scene(3, 500, 12, {});
  CHECK(s.points.size() == 500);
  CHECK(s.views.size() == 12);
  CHECK(s.query_views.size() == 20);
  CHECK(((s.coarse_descriptors.rowwise().norm().array() - 1.0).abs() < 1e-6).all());
  CHECK(((s.fine_descriptors.rowwise().norm().array() - 1.0).abs() < 1e-6).all());
  CHECK(s.coarse_dim() == 128);
  CHECK(s.fine_dim() == 64);
  for (const auto& p : s.points) CHECK(p.cwiseAbs().maxCoeff() <= 0.5);

  std::vector<int> seen(s.points.size(), 0);
  for (const View& v : s.views) {
    CHECK(v.pose.is_valid());
    const ViewObservations obs = render_observations(s, v.id);
    for (const PointObservation& po : obs.points) ++seen[po.point_id];
  }
  for (int count : seen) CHECK(count >= 2);
  // Query views are numbered after the reference views.
  for (std::size_t i = 0; i < s.query_views.size(); ++i) CHECK(s.query_views[i].id == static_cast<int>(12 + i));
}

TEST_CASE("cameras orbit at three to five object diameters") {
  double sum = 0.0;
  int n = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const SyntheticScene s = generate_scene(seed, 8, 10, {});
    for (const View& v : s.views) {
      const double d = v.pose.center().norm() / s.diameter;
      CHECK(d >= 3.0 - 0.5);
      CHECK(d <= 5.0 + 0.5);
      sum += d;
      ++n;
    }
  }
  const double mean = sum / n;
  CHECK(mean >= 3.0);
  CHECK(mean <= 5.0);
}

TEST_CASE("zero noise observes descriptors exactly and keeps pixels in the image") {
  const SyntheticScene s = generate_scene(4, 300, 8, {});
  for (const View& v : s.views) {
    const ViewObservations obs = render_observations(s, v.id);
    for (const PointObservation& po : obs.points) {
      CHECK(v.camera.contains(po.pixel));
      CHECK(po.visible);
      CHECK(po.cell.x() == std::floor(po.pixel.x() / 8) * 8 + 4);
      CHECK(po.cell.y() == std::floor(po.pixel.y() / 8) * 8 + 4);
      if (po.cell_owner) {
        CHECK(po.coarse == s.coarse_descriptors.row(po.point_id).transpose());
        CHECK(po.fine == s.fine_descriptors.row(po.point_id).transpose());
      }
    }
  }
}

TEST_CASE("cell owners are the nearest visible point of their cell") {
  const SyntheticScene s = generate_scene(5, 2000, 6, {});
  const ViewObservations obs = render_observations(s, 0);
  for (int c = 0; c < static_cast<int>(obs.owner_of_cell.size()); ++c) {
    double nearest = std::numeric_limits<double>::infinity();
    int who = -1;
    for (const PointObservation& po : obs.points) {
      if (po.visible && obs.cell_index(po.pixel) == c && po.depth < nearest) {
        nearest = po.depth;
        who = po.point_id;
      }
    }
    CHECK(obs.owner_of_cell[c] == who);
  }
}

TEST_CASE("dropout keeps seventy percent of in-frustum points") {
  NoiseModel noise;
  noise.dropout_rate = 0.3;
  double total = 0.0;
  const int seeds = 100;
  for (int seed = 1; seed <= seeds; ++seed) {
    const SyntheticScene s = generate_scene(static_cast<std::uint64_t>(seed), 1000, 3, noise);
    const ViewObservations obs = render_observations(s, 0);
    std::size_t visible = 0;
    for (const PointObservation& po : obs.points) visible += po.visible ? 1 : 0;
    total += static_cast<double>(visible) / static_cast<double>(obs.points.size());
  }
  CHECK(std::abs(total / seeds - 0.7) <= 0.02);
}

TEST_CASE("descriptor noise has the requested expected norm") {
  NoiseModel noise;
  noise.descriptor_noise_sigma = 0.1;
  const SyntheticScene s = generate_scene(6, 200, 4, noise);
  double cos_sum = 0.0;
  int n = 0;
  for (int p = 0; p < 200; ++p) {
    for (int v = 0; v < 4; ++v) {
      const Eigen::VectorXd d = observe_coarse_descriptor(s, v, p);
      CHECK(std::abs(d.norm() - 1.0) < 1e-12);
      cos_sum += d.dot(s.coarse_descriptors.row(p));
      ++n;
    }
  }
  // Unit vector plus noise of norm ~0.1 renormalised: cos ~ 1/sqrt(1.01).
  CHECK(cos_sum / n == doctest::Approx(1.0 / std::sqrt(1.01)).epsilon(0.005));
}

TEST_CASE("oracle fine location statistics") {
  NoiseModel noise;
  noise.fine_noise_sigma = 0.5;
  const SyntheticScene s = generate_scene(7, 4000, 4, noise);
  const SyntheticScene clean = generate_scene(7, 4000, 4, {});
  double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0;
  int n = 0;
  for (const View& v : s.views) {
    const ViewObservations obs = render_observations(s, v.id);
    const ViewObservations obs_clean = render_observations(clean, v.id);
    for (const PointObservation& po : obs.points) {
      const Pixel u = oracle_fine_location(s, obs, po.point_id);
      CHECK((u - po.cell).cwiseAbs().maxCoeff() <= 4.0);
      CHECK(oracle_fine_location(clean, obs_clean, po.point_id) == po.pixel);
      const Pixel d = u - po.pixel;
      sx += d.x();
      sy += d.y();
      sxx += d.x() * d.x();
      syy += d.y() * d.y();
      ++n;
    }
  }
  REQUIRE(n >= 10000);
  const double std_x = std::sqrt(sxx / n - (sx / n) * (sx / n));
  const double std_y = std::sqrt(syy / n - (sy / n) * (sy / n));
  CHECK(std_x >= 0.45);
  CHECK(std_x <= 0.55);
  CHECK(std_y >= 0.45);
  CHECK(std_y <= 0.55);
}

TEST_CASE("oracle fine location of an invisible point is a visibility error") {
  NoiseModel noise;
  noise.dropout_rate = 0.5;
  const SyntheticScene s = generate_scene(8, 300, 4, noise);
  const ViewObservations obs = render_observations(s, 0);
  bool tested = false;
  for (const PointObservation& po : obs.points) {
    if (po.visible) continue;
    try {
      oracle_fine_location(s, obs, po.point_id);
      FAIL("expected a visibility error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kVisibility);
    }
    tested = true;
    break;
  }
  CHECK(tested);
}

TEST_CASE("exact fine locations triangulate to the true points") {
  const SyntheticScene s = generate_scene(9, 300, 10, {});
  std::vector<std::vector<Observation<double>>> per_point(s.points.size());
  for (const View& v : s.views) {
    const ViewObservations obs = render_observations(s, v.id);
    for (const PointObservation& po : obs.points) {
      per_point[po.point_id].push_back({v.pose, v.camera, oracle_fine_location(s, obs, po.point_id)});
    }
  }
  int checked = 0;
  for (std::size_t p = 0; p < s.points.size(); ++p) {
    if (per_point[p].size() < 2) continue;
    try {
      CHECK((triangulate(per_point[p]) - s.points[p]).norm() < 1e-9);
      ++checked;
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kDegenerate);
    }
  }
  CHECK(checked > 250);
}

TEST_CASE("query feature maps have consistent shapes and unit rows") {
  const SyntheticScene s = generate_scene(10, 500, 6, {});
  const int q = s.query_views.front().id;
  const QueryFeatureMaps maps = synthesize_query_maps(s, q);
  CHECK_NOTHROW(maps.validate());
  CHECK(maps.coarse_rows == 64);
  CHECK(maps.fine_cols == 256);
  CHECK(maps.coarse.cols() == 128);
  CHECK(maps.fine.cols() == 64);
  const ViewObservations obs = render_observations(s, q);
  for (int c = 0; c < maps.num_cells(); ++c) {
    const int owner = obs.owner_of_cell[c];
    if (owner >= 0) CHECK(maps.coarse.row(c) == s.coarse_descriptors.row(owner));
    CHECK((maps.coarse_center(c) - obs.cell_center(c)).norm() == 0.0);
  }
  QueryFeatureMaps broken = maps;
  broken.fine.row(0) *= 2.0;
  CHECK_THROWS_AS(broken.validate(), Error);
}
