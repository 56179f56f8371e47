#include "doctest.h"
#include "oracles.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "semidense/io.hpp"
#include "semidense/pipeline.hpp"

using namespace semidense;
using namespace semidense::test;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("semidense_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_pose(const SE3d& a, const SE3d& b) {
  return a.rotation() == b.rotation() && a.translation() == b.translation();
}

bool same_camera(const Camerad& a, const Camerad& b) {
  return a.fx == b.fx && a.fy == b.fy && a.cx == b.cx && a.cy == b.cy && a.width == b.width && a.height == b.height;
}

bool same_views(const std::vector<View>& a, const std::vector<View>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id || !same_pose(a[i].pose, b[i].pose) || !same_camera(a[i].camera, b[i].camera)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("FMAT round-trips") {
  const fs::path dir = scratch("fmat");
  CounterRng rng(601);
  FmatFile f;
  const RowMatrix a = random_matrix(rng, 17, 5);
  const RowMatrix b = random_matrix(rng, 3, 9);
  f.set("b64", a);
  f.set("a32", b, FmatType::kFloat32);
  f.set("empty", RowMatrix(0, 4));
  f.write(dir / "x.fmat");
  const FmatFile g = FmatFile::read(dir / "x.fmat");
  CHECK(g.names() == std::vector<std::string>{"a32", "b64", "empty"});
  CHECK(g.get("b64") == a);
  CHECK(g.type("a32") == FmatType::kFloat32);
  CHECK((g.get("a32") - b).cwiseAbs().maxCoeff() <= 1e-6 * b.cwiseAbs().maxCoeff());
  CHECK(g.get("a32") == b.cast<float>().cast<double>());
  CHECK(g.get("empty").cols() == 4);
  CHECK_THROWS_AS(g.get("missing"), Error);

  // Rewriting the re-read file is byte-identical.
  g.write(dir / "y.fmat");
  CHECK(read_text(dir / "x.fmat") == read_text(dir / "y.fmat"));
}

TEST_CASE("FMAT rejects corrupt files") {
  const fs::path dir = scratch("fmat_bad");
  FmatFile f;
  f.set("m", RowMatrix::Identity(4, 4));
  f.write(dir / "ok.fmat");
  std::string bytes = read_text(dir / "ok.fmat");

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  write_text(dir / "magic.fmat", bad_magic);
  CHECK_THROWS_AS(FmatFile::read(dir / "magic.fmat"), Error);

  write_text(dir / "short.fmat", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(FmatFile::read(dir / "short.fmat"), Error);

  std::string bad_version = bytes;
  bad_version[4] = 9;
  write_text(dir / "version.fmat", bad_version);
  CHECK_THROWS_AS(FmatFile::read(dir / "version.fmat"), Error);

  CHECK_THROWS_AS(FmatFile::read(dir / "absent.fmat"), Error);
}

TEST_CASE("PLY ascii and binary") {
  const fs::path dir = scratch("ply");
  CounterRng rng(602);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 100; ++i) pts.push_back(random_vector(rng));
  write_ply(dir / "a.ply", pts, false);
  write_ply(dir / "b.ply", pts, true);
  CHECK(read_ply(dir / "a.ply") == pts);
  CHECK(read_ply(dir / "b.ply") == pts);
  CHECK(read_text(dir / "a.ply").rfind("ply\nformat ascii 1.0\n", 0) == 0);

  write_text(dir / "f.ply", "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                            "property float z\nend_header\n1 2 3\n4.5 5 6\n");
  const auto f = read_ply(dir / "f.ply");
  REQUIRE(f.size() == 2);
  CHECK(f[1] == Eigen::Vector3d(4.5, 5, 6));
  write_text(dir / "bad.ply", "not a ply\n");
  CHECK_THROWS_AS(read_ply(dir / "bad.ply"), Error);
}

TEST_CASE("scene round-trip is exact") {
  const fs::path dir = scratch("scene");
  NoiseModel noise;
  noise.fine_noise_sigma = 0.5;
  noise.dropout_rate = 0.1;
  const SyntheticScene s = generate_scene(603, 300, 6, noise);
  save_scene(dir, s);
  const SyntheticScene r = load_scene(dir);
  CHECK(r.seed == s.seed);
  CHECK(r.noise == s.noise);
  CHECK(r.points == s.points);
  CHECK(r.coarse_descriptors == s.coarse_descriptors);
  CHECK(r.fine_descriptors == s.fine_descriptors);
  CHECK(same_views(r.views, s.views));
  CHECK(same_views(r.query_views, s.query_views));
  CHECK(r.diameter == s.diameter);
  CHECK(r.cm_per_unit == s.cm_per_unit);

  write_text(dir / "scene.json", "{\"seed\": 1}");
  CHECK_THROWS_AS(load_scene(dir), Error);
  write_text(dir / "scene.json", "{ not json");
  CHECK_THROWS_AS(load_scene(dir), Error);
}

TEST_CASE("model round-trip") {
  const fs::path dir = scratch("model");
  const SyntheticScene s = generate_scene(604, 600, 8, {});
  RunConfig config;
  const Reconstruction rec = reconstruct(s, config);
  REQUIRE(!rec.files.model.empty());
  save_model(dir, rec.files);
  for (const char* f : {"coarse.ply", "refined.ply", "tracks.json", "features.fmat", "stats.json", "model.json"}) {
    CHECK(fs::exists(dir / f));
  }
  const PointCloudModel m = load_model(dir);
  CHECK(m.points == rec.files.model.points);
  CHECK(m.coarse_features == rec.files.model.coarse_features);
  CHECK(m.fine_features == rec.files.model.fine_features);
  CHECK(m.track_ids == rec.files.model.track_ids);
  CHECK(read_ply(dir / "refined.ply") == m.points);
  CHECK(read_ply(dir / "coarse.ply") == rec.files.coarse_points);

  FmatFile f = FmatFile::read(dir / "features.fmat");
  f.set("fine_features", RowMatrix::Zero(1, 64));
  f.write(dir / "features.fmat");
  CHECK_THROWS_AS(load_model(dir), Error);
}

TEST_CASE("poses round-trip") {
  const fs::path dir = scratch("poses");
  CounterRng rng(605);
  std::vector<PoseRecord> poses;
  for (int i = 0; i < 5; ++i) {
    PoseRecord p;
    p.view = 30 + i;
    p.status = i == 3 ? "failed" : "ok";
    p.pose = random_pose(rng);
    p.inliers = 10 * i;
    p.mean_reproj_px = 0.25 * i;
    p.iterations = i + 1;
    p.timing_ms = 1.5 * i;
    poses.push_back(p);
  }
  write_poses(dir / "poses.json", poses);
  const auto back = read_poses(dir / "poses.json");
  REQUIRE(back.size() == poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    CHECK(back[i].view == poses[i].view);
    CHECK(back[i].status == poses[i].status);
    CHECK(same_pose(back[i].pose, poses[i].pose));
    CHECK(back[i].inliers == poses[i].inliers);
    CHECK(back[i].mean_reproj_px == poses[i].mean_reproj_px);
    CHECK(back[i].iterations == poses[i].iterations);
    CHECK(back[i].timing_ms == poses[i].timing_ms);
  }
  CHECK(read_text(dir / "poses.json").find("timing_ms") != std::string::npos);
}

TEST_CASE("correspondence dump") {
  const fs::path dir = scratch("corr");
  std::vector<FineCorrespondence> m(2);
  m[0] = {4, 10, Pixel(12.5, 7.25), 0.9, false};
  m[1] = {7, 11, Pixel(100, 3), 0.5, true};
  write_correspondences(dir / "c.csv", m);
  const std::string text = read_text(dir / "c.csv");
  CHECK(text.rfind("j,u,v,conf\n4,12.5,7.25,0.9", 0) == 0);
}

TEST_CASE("run config JSON") {
  RunConfig c;
  apply_config_json(c, R"({"seed": 9, "tau": 0.1, "fine_noise_sigma": 0.5, "coarse_layers": 0, "fine_layers": 0})");
  CHECK(c.seed == 9);
  CHECK(c.matching.tau == 0.1);
  CHECK(c.noise.fine_noise_sigma == 0.5);
  CHECK(c.bypass());
  RunConfig d;
  apply_config_json(d, config_to_json(c));
  CHECK(config_to_json(d) == config_to_json(c));
  CHECK_THROWS_AS(apply_config_json(c, R"({"sede": 3})"), Error);
  CHECK_THROWS_AS(apply_config_json(c, R"({"seed": "three"})"), Error);
  CHECK_THROWS_AS(apply_config_json(c, "[1, 2]"), Error);

  const RunConfig defaults;
  CHECK(defaults.matching.tau == 0.08);
  CHECK(defaults.matching.theta == 0.4);
  CHECK(defaults.matching.window == 5);
  CHECK(defaults.coarse_layers == 3);
  CHECK(defaults.fine_layers == 1);
  CHECK(defaults.refine_window == 9);
  RunConfig bad;
  bad.n_views = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
}
