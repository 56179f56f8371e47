#include "doctest.h"
#include "oracles.hpp"

#include <map>

#include "semidense/refinement.hpp"

using namespace semidense;
using namespace semidense::test;

namespace {

// Matcher stub answering fine queries from a table keyed on source view.
class TableMatcher final : public SemiDenseMatcher {
 public:
  std::map<int, FineMatchResult> answers;

  std::vector<CoarseMatch> match_pair(int, int) const override { return {}; }
  FineMatchResult fine_refine(const FineMatchQuery& q) const override { return answers.at(q.source_view); }
};

class TableFeatures final : public FeatureSource {
 public:
  std::map<int, Eigen::VectorXd> coarse;
  std::map<int, Eigen::VectorXd> fine;

  std::optional<Eigen::VectorXd> coarse_feature(int view, const Pixel&) const override {
    const auto it = coarse.find(view);
    if (it == coarse.end()) return std::nullopt;
    return it->second;
  }
  std::optional<Eigen::VectorXd> fine_feature(int view, const Pixel&) const override {
    const auto it = fine.find(view);
    if (it == fine.end()) return std::nullopt;
    return it->second;
  }
};

double mean_axis_angle(const View& v, const FeatureTrack& t, std::size_t self, const ViewSet& views) {
  double sum = 0.0;
  for (std::size_t k = 0; k < t.nodes.size(); ++k) {
    if (k == self) continue;
    const Eigen::Vector3d ray = (t.point_coarse - views.at(t.nodes[k].view_id).pose.center()).normalized();
    sum += std::acos(std::clamp(v.pose.optical_axis().dot(ray), -1.0, 1.0));
  }
  return sum / static_cast<double>(t.nodes.size() - 1);
}

}  // namespace

TEST_CASE("depth jacobian matches central differences") {
  CounterRng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    DepthProblem p = random_depth_problem(rng, 1 + static_cast<int>(rng.below(6)), 1.0);
    const double d = p.true_depth * rng.uniform(0.7, 1.4);
    worst = std::max(worst, jacobian_deviation(p.track, p.views, d));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("source equal to the reference has zero residual and derivative") {
  CounterRng rng(102);
  const Camerad k = default_camera();
  const SE3d pose = orbit_pose(rng, 4.0);
  const ViewSet views({{0, pose, k}, {1, pose, k}});
  const Eigen::Vector3d x(0.1, -0.05, 0.02);
  RefinedTrack t;
  t.reference = {0, project(pose, k, x)};
  t.sources = {{1, project(pose, k, x)}};
  for (double d : {1.0, 3.5, 9.0}) {
    CHECK(depth_residuals(t, views, d)[0].norm() < 1e-9);
    CHECK(depth_jacobian(t, views, d)[0].norm() < 1e-9);
  }
}

TEST_CASE("pure rotation makes depth unobservable") {
  CounterRng rng(103);
  const Camerad k = default_camera();
  const SE3d a = orbit_pose(rng, 4.0);
  const Eigen::Matrix3d r = SE3d::so3_exp(Eigen::Vector3d(0.05, -0.03, 0.02)) * a.rotation();
  const SE3d b(r, -(r * a.center()));
  const ViewSet views({{0, a, k}, {1, b, k}});
  const Eigen::Vector3d x(0.05, 0.1, -0.1);
  RefinedTrack t;
  t.reference = {0, project(a, k, x)};
  t.sources = {{1, project(b, k, x)}};
  const double d = (a * x).z();
  CHECK(depth_jacobian(t, views, d)[0].norm() < 1e-8);
  CHECK(depth_residuals(t, views, 2.0 * d)[0].norm() < 1e-8);
}

TEST_CASE("exact observations recover the depth from a perturbed start") {
  CounterRng rng(104);
  for (int i = 0; i < 50; ++i) {
    DepthProblem p = random_depth_problem(rng, 4, 0.0);
    const View& ref = p.views.at(0);
    p.track.point_coarse = ref.pose.inverse() * backproject(p.track.reference.pixel, 1.1 * p.true_depth, ref.camera);
    const RefinedTrack out = optimize_depth(p.track, p.views);
    CHECK(out.converged);
    CHECK(relative_error(out.depth, p.true_depth) < 1e-8);
    CHECK((out.point - p.point).norm() < 1e-7);
  }
}

TEST_CASE("noisy depth optimum agrees with a golden-section search") {
  CounterRng rng(105);
  for (int i = 0; i < 200; ++i) {
    const DepthProblem p = random_depth_problem(rng, 8, 0.5);
    const RefinedTrack out = optimize_depth(p.track, p.views);
    REQUIRE(out.converged);
    CHECK(relative_error(out.depth, brute_force_depth(p.track, p.views, p.true_depth)) < 1e-6);
    CHECK(out.final_cost <= out.initial_cost);
    CHECK(out.depth > 0.0);
    const View& ref = p.views.at(0);
    CHECK((out.point - ref.pose.inverse() * backproject(p.track.reference.pixel, out.depth, ref.camera)).norm() <
          1e-12);
  }
}

TEST_CASE("pure forward motion is flagged non-converged") {
  CounterRng rng(106);
  const Camerad k = default_camera();
  const SE3d a = orbit_pose(rng, 4.0);
  const Eigen::Vector3d x(0.1, 0.05, 0.0);
  const Eigen::Vector3d dir = (x - a.center()).normalized();
  const SE3d b(a.rotation(), -(a.rotation() * (a.center() + 0.5 * dir)));
  const ViewSet views({{0, a, k}, {1, b, k}});
  RefinedTrack t;
  t.reference = {0, project(a, k, x)};
  t.sources = {{1, project(b, k, x) + Pixel(0.3, -0.2)}};
  t.point_coarse = x;
  const RefinedTrack out = optimize_depth(t, views);
  CHECK_FALSE(out.converged);
  CHECK(out.depth > 0.0);
}

TEST_CASE("a coarse point behind the reference camera is rejected") {
  CounterRng rng(107);
  DepthProblem p = random_depth_problem(rng, 1, 0.0);
  const View& ref = p.views.at(0);
  p.track.point_coarse = ref.pose.center() - ref.pose.optical_axis();
  CHECK_THROWS_AS(optimize_depth(p.track, p.views), Error);
}

TEST_CASE("reference selection") {
  const Camerad k = default_camera();
  SUBCASE("symmetric views tie to the lowest id") {
    const SE3d a = look_at<double>(Eigen::Vector3d(4, 0, 0), Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ());
    const SE3d b = look_at<double>(Eigen::Vector3d(-4, 0, 0), Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ());
    const ViewSet views({{7, a, k}, {4, b, k}});
    FeatureTrack t;
    t.nodes = {{7, Pixel(256, 256)}, {4, Pixel(256, 256)}};
    CHECK(select_reference_node(t, views) == 1);
  }
  SUBCASE("frontal view wins over oblique views") {
    CounterRng rng(108);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<View> vs;
      const Eigen::Vector3d target = random_vector(rng, 0.1);
      const int frontal = static_cast<int>(rng.below(5));
      for (int v = 0; v < 5; ++v) {
        const Eigen::Vector3d eye = orbit_pose(rng, 4.0).center();
        const Eigen::Vector3d look = v == frontal ? target : target + random_vector(rng, 0.6);
        vs.push_back({v, look_at<double>(eye, look, Eigen::Vector3d::UnitZ()), k});
      }
      const ViewSet views(vs);
      FeatureTrack t;
      t.point_coarse = target;
      for (int v = 0; v < 5; ++v) t.nodes.push_back({v, Pixel(256, 256)});
      std::size_t best = 0;
      for (std::size_t i = 1; i < 5; ++i) {
        if (mean_axis_angle(vs[i], t, i, views) < mean_axis_angle(vs[best], t, best, views)) best = i;
      }
      CHECK(select_reference_node(t, views) == best);
    }
  }
  SUBCASE("single node is rejected") {
    const ViewSet views({{0, SE3d(), k}});
    FeatureTrack t;
    t.nodes = {{0, Pixel(4, 4)}};
    CHECK_THROWS_AS(select_reference_node(t, views), Error);
  }
}

TEST_CASE("node refinement drops low-confidence and out-of-window answers") {
  FeatureTrack t;
  t.track_id = 9;
  t.nodes = {{0, Pixel(100, 100)}, {1, Pixel(52, 60)}, {2, Pixel(28, 36)}, {3, Pixel(12, 12)}};
  TableMatcher m;
  m.answers[1] = {Pixel(53.5, 59.25), 0.9};
  m.answers[2] = {Pixel(28.0, 36.0), 0.1};
  m.answers[3] = {Pixel(17.0, 12.0), 0.9};
  RefinementStats stats;
  const auto rt = refine_track_nodes(t, 0, m, {}, &stats);
  REQUIRE(rt.has_value());
  CHECK(rt->track_id == 9);
  CHECK(rt->reference == TrackNode{0, Pixel(100, 100)});
  REQUIRE(rt->sources.size() == 1);
  CHECK(rt->sources[0] == TrackNode{1, Pixel(53.5, 59.25)});
  CHECK(stats.dropped_nodes == 2);

  m.answers[1].confidence = 0.19;
  RefinementStats dropped;
  CHECK_FALSE(refine_track_nodes(t, 0, m, {}, &dropped).has_value());
  CHECK(dropped.dropped_tracks == 1);
  CHECK_THROWS_AS(refine_track_nodes(t, 4, m), Error);
}

TEST_CASE("noiseless reconstruction refines every point exactly") {
  const SyntheticScene s = generate_scene(109, 800, 12, {});
  const OracleMatcher m(s);
  const ViewSet views = s.reference_set();
  std::vector<CoarseMatch> matches;
  for (const auto& [a, b] : select_view_pairs(views)) {
    const auto x = m.match_pair(a, b);
    matches.insert(matches.end(), x.begin(), x.end());
  }
  const CoarseReconstruction coarse = triangulate_tracks(build_tracks(matches, 3), views);
  const RefinementResult res = refine_reconstruction(coarse, views, m);
  REQUIRE(res.tracks.size() > 50);
  CHECK(res.stats.input_tracks == coarse.tracks.size());
  for (const RefinedTrack& t : res.tracks) {
    const int p = m.observations(t.reference.view_id).owner_at(t.reference.pixel);
    CHECK(t.converged);
    CHECK((t.point - s.points[p]).norm() < 1e-6);
    CHECK(t.mean_reprojection_px < 1e-6);
    for (const TrackNode& src : t.sources) {
      CHECK((src.pixel - m.observations(src.view_id).find(p)->pixel).norm() < 1e-9);
    }
  }
  const PointCloudModel model = aggregate_features(res.tracks, m);
  CHECK(model.size() == res.tracks.size());
  CHECK(model.coarse_features.rows() == static_cast<Eigen::Index>(model.size()));
  for (Eigen::Index i = 0; i < model.coarse_features.rows(); ++i) {
    CHECK(model.coarse_features.row(i).norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(model.fine_features.row(i).norm() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("feature aggregation") {
  RefinedTrack t;
  t.track_id = 3;
  t.reference = {0, Pixel(4, 4)};
  t.sources = {{1, Pixel(12, 4)}};
  Eigen::VectorXd d(4);
  d << 0.5, -0.5, 0.5, 0.5;

  SUBCASE("identical descriptors are preserved") {
    TableFeatures f;
    f.coarse = {{0, d}, {1, d}};
    f.fine = {{0, d}, {1, d}};
    const PointCloudModel model = aggregate_features(std::vector<RefinedTrack>{t}, f);
    REQUIRE(model.size() == 1);
    CHECK((model.coarse_features.row(0).transpose() - d).norm() < 1e-12);
    CHECK(model.track_ids == std::vector<int>{3});
  }
  SUBCASE("antipodal descriptors cancel and the track is dropped") {
    TableFeatures f;
    f.coarse = {{0, d}, {1, -d}};
    f.fine = {{0, d}, {1, d}};
    RefinementStats stats;
    CHECK(aggregate_features(std::vector<RefinedTrack>{t}, f, &stats).empty());
    CHECK(stats.dropped_degenerate_features == 1);
  }
  SUBCASE("averaging noisy observations moves closer to the true descriptor") {
    CounterRng rng(110);
    double single = 0.0, averaged = 0.0;
    const int trials = 300;
    for (int i = 0; i < trials; ++i) {
      Eigen::VectorXd truth = Eigen::VectorXd::NullaryExpr(32, [&] { return rng.gaussian(); }).normalized();
      RefinedTrack rt;
      rt.reference = {0, Pixel(4, 4)};
      TableFeatures f;
      for (int v = 0; v < 8; ++v) {
        if (v > 0) rt.sources.push_back({v, Pixel(4, 4)});
        const Eigen::VectorXd noise = Eigen::VectorXd::NullaryExpr(32, [&] { return rng.gaussian(); });
        f.coarse[v] = (truth + 0.6 * noise / std::sqrt(32.0)).normalized();
        f.fine[v] = f.coarse[v];
      }
      single += f.coarse[0].dot(truth);
      const PointCloudModel model = aggregate_features(std::vector<RefinedTrack>{rt}, f);
      averaged += model.coarse_features.row(0).dot(truth.transpose());
    }
    CHECK(averaged / trials > single / trials + 0.05);
  }
}
