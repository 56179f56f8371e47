#include "doctest.h"
#include "oracles.hpp"


#include "semidense/pnp.hpp"

using namespace semidense;
using namespace semidense::test;

TEST_CASE("EPnP is exact on six noiseless points") {
  CounterRng rng(401);
  for (int trial = 0; trial < 100; ++trial) {
    const PnPProblem p = random_pnp_problem(rng, 6, 0, 0.0);
    const SE3d est = epnp(p.points, p.pixels, default_camera());
    CHECK(rotation_error_deg_between(est, p.pose) * M_PI / 180.0 < 1e-6);
    CHECK((est.translation() - p.pose.translation()).norm() < 1e-8);
  }
}

TEST_CASE("EPnP on coplanar points uses the planar solver") {
  CounterRng rng(402);
  const Camerad k = default_camera();
  for (int trial = 0; trial < 50; ++trial) {
    const SE3d pose = orbit_pose(rng, 4.0);
    const Eigen::Matrix3d tilt = random_rotation(rng);
    const int n = 4 + static_cast<int>(rng.below(20));
    Eigen::Matrix3Xd X(3, n);
    Eigen::Matrix2Xd u(2, n);
    for (int i = 0; i < n; ++i) {
      X.col(i) = tilt * Eigen::Vector3d(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.0);
      u.col(i) = project(pose, k, Eigen::Vector3d(X.col(i)));
    }
    const SE3d est = epnp(X, u, k);
    CHECK(rotation_error_deg_between(est, pose) * M_PI / 180.0 < 1e-5);
    CHECK((est.translation() - pose.translation()).norm() < 1e-5);
  }
}

TEST_CASE("collinear and too few points are degenerate") {
  const Camerad k = default_camera();
  CounterRng rng(403);
  const SE3d pose = orbit_pose(rng, 4.0);
  Eigen::Matrix3Xd X(3, 4);
  Eigen::Matrix2Xd u(2, 4);
  for (int i = 0; i < 4; ++i) {
    X.col(i) = Eigen::Vector3d(0.1, -0.2, 0.05) + 0.1 * i * Eigen::Vector3d(1, 2, -1);
    u.col(i) = project(pose, k, Eigen::Vector3d(X.col(i)));
  }
  try {
    epnp(X, u, k);
    FAIL("collinear points accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerate);
  }
  CHECK_THROWS_AS(epnp(X.leftCols(3), u.leftCols(3), k), Error);
  const PnPResult r = ransac_pnp(X.leftCols(3), u.leftCols(3), k);
  CHECK_FALSE(r.success);
  CHECK(r.inliers.empty());
}

TEST_CASE("RANSAC on exact inliers keeps every point") {
  CounterRng rng(404);
  const PnPProblem p = random_pnp_problem(rng, 100, 0, 0.0);
  const PnPResult r = ransac_pnp(p.points, p.pixels, default_camera());
  REQUIRE(r.success);
  CHECK(r.inliers.size() == 100);
  CHECK(r.mean_reprojection_px < 1e-8);
  CHECK((r.pose.rotation().transpose() * r.pose.rotation() - Eigen::Matrix3d::Identity()).norm() < 1e-12);
}

TEST_CASE("RANSAC with 30 percent outliers") {
  const Camerad k = default_camera();
  int successes = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    CounterRng rng(405, seed);
    const PnPProblem p = random_pnp_problem(rng, 70, 30, 0.5);
    RansacOptions opts;
    opts.seed = seed;
    const PnPResult r = ransac_pnp(p.points, p.pixels, k, opts);
    if (!r.success) continue;
    const double distance = p.pose.center().norm();
    const bool ok = rotation_error_deg_between(r.pose, p.pose) <= 0.5 &&
                    (r.pose.center() - p.pose.center()).norm() <= 0.005 * distance;
    successes += ok;
    const Eigen::VectorXd err = reprojection_errors(p.points, p.pixels, k, r.pose);
    for (int i : r.inliers) CHECK(err(i) <= opts.inlier_px);
    CHECK(r.inliers.size() >= 4);
    CHECK(r.iterations <= opts.max_iterations);
  }
  CHECK(successes >= 95);
}

TEST_CASE("RANSAC is deterministic for a fixed seed") {
  CounterRng rng(406);
  const PnPProblem p = random_pnp_problem(rng, 60, 40, 1.0);
  RansacOptions opts;
  opts.seed = 11;
  const PnPResult a = ransac_pnp(p.points, p.pixels, default_camera(), opts);
  const PnPResult b = ransac_pnp(p.points, p.pixels, default_camera(), opts);
  CHECK(a.success == b.success);
  CHECK(a.inliers == b.inliers);
  CHECK(a.iterations == b.iterations);
  CHECK(a.pose.rotation() == b.pose.rotation());
  CHECK(a.pose.translation() == b.pose.translation());
}

TEST_CASE("pure outliers fail") {
  CounterRng rng(407);
  const PnPProblem p = random_pnp_problem(rng, 0, 50, 0.0);
  RansacOptions opts;
  opts.inlier_px = 0.01;
  opts.max_iterations = 500;
  CHECK_FALSE(ransac_pnp(p.points, p.pixels, default_camera(), opts).success);
}

TEST_CASE("LM polish does not increase the reprojection error") {
  CounterRng rng(408);
  const Camerad k = default_camera();
  for (int trial = 0; trial < 50; ++trial) {
    const PnPProblem p = random_pnp_problem(rng, 40, 0, 1.0);
    const SE3d start(SE3d::so3_exp(random_vector(rng, 0.01)) * p.pose.rotation(),
                     p.pose.translation() + random_vector(rng, 0.02));
    const SE3d out = refine_pose(p.points, p.pixels, k, start);
    CHECK(reprojection_errors(p.points, p.pixels, k, out).squaredNorm() <=
          reprojection_errors(p.points, p.pixels, k, start).squaredNorm());
  }
}

TEST_CASE("reprojection errors behind the camera are infinite") {
  const Camerad k = default_camera();
  Eigen::Matrix3Xd X(3, 2);
  X << 0, 0, 0, 0, 5, -5;
  Eigen::Matrix2Xd u(2, 2);
  u << 256, 256, 256, 256;
  const Eigen::VectorXd e = reprojection_errors(X, u, k, SE3d());
  CHECK(e(0) == doctest::Approx(0.0));
  CHECK(std::isinf(e(1)));
  CHECK(default_inlier_px(1024) == 6.0);
}
