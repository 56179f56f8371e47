#include "semidense/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "json.hpp"
#include "semidense/matching.hpp"
#include "semidense/parallel.hpp"
#include "semidense/random.hpp"
#include "semidense/tracks.hpp"

namespace semidense {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Accuracy thresholds reported in stats.json, in scene units.
const std::vector<std::pair<std::string, double>> kAccuracyThresholds = {
    {"0.1%d", 0.001}, {"1mm", 0.01}, {"3mm", 0.03}, {"5mm", 0.05}};

json accuracy_json(const std::vector<Eigen::Vector3d>& cloud, const SyntheticScene& scene) {
  json j = json::object();
  for (const auto& [name, units] : kAccuracyThresholds) {
    j[name] = point_cloud_accuracy(cloud, scene.points, units * scene.diameter);
  }
  return j;
}

}  // namespace

void RunConfig::validate() const {
  noise.validate();
  const auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::kArgument, std::string("invalid configuration: ") + what);
  };
  require(n_points >= 8, "n_points must be >= 8");
  require(n_views >= 2, "n_views must be >= 2");
  require(n_queries >= 0, "n_queries must be >= 0");
  require(min_track_length >= 2, "min_track_length must be >= 2");
  require(max_reproj_px > 0, "max_reproj_px must be positive");
  require(refine_window >= 3 && refine_window % 2 == 1, "refine_window must be odd and >= 3");
  require(min_confidence >= 0 && min_confidence <= 1, "min_confidence must lie in [0, 1]");
  require(matching.tau > 0, "tau must be positive");
  require(matching.theta >= 0 && matching.theta <= 1, "theta must lie in [0, 1]");
  require(matching.window >= 1 && matching.window % 2 == 1, "window must be odd and >= 1");
  require(matching.fine_logit_scale > 0, "fine_logit_scale must be positive");
  require(matching.pe_scale >= 0, "pe_scale must be >= 0");
  require(coarse_layers >= 0 && fine_layers >= 0, "layer counts must be >= 0");
  require(inlier_px >= 0, "inlier_px must be >= 0");
  require(max_iters >= 1, "max_iters must be >= 1");
  require(ransac_confidence > 0 && ransac_confidence < 1, "ransac_confidence must lie in (0, 1)");
}

void apply_config_json(RunConfig& c, const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kSchema, "config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "n_points") c.n_points = v.get<int>();
      else if (key == "n_views") c.n_views = v.get<int>();
      else if (key == "n_queries") c.n_queries = v.get<int>();
      else if (key == "fine_noise_sigma") c.noise.fine_noise_sigma = v.get<double>();
      else if (key == "descriptor_noise_sigma") c.noise.descriptor_noise_sigma = v.get<double>();
      else if (key == "dropout_rate") c.noise.dropout_rate = v.get<double>();
      else if (key == "outlier_rate") c.noise.outlier_rate = v.get<double>();
      else if (key == "min_track_length") c.min_track_length = v.get<std::size_t>();
      else if (key == "max_reproj_px") c.max_reproj_px = v.get<double>();
      else if (key == "refine_window") c.refine_window = v.get<int>();
      else if (key == "min_confidence") c.min_confidence = v.get<double>();
      else if (key == "tau") c.matching.tau = v.get<double>();
      else if (key == "theta") c.matching.theta = v.get<double>();
      else if (key == "window") c.matching.window = v.get<int>();
      else if (key == "fine_logit_scale") c.matching.fine_logit_scale = v.get<double>();
      else if (key == "pe_scale") c.matching.pe_scale = v.get<double>();
      else if (key == "coarse_layers") c.coarse_layers = v.get<int>();
      else if (key == "fine_layers") c.fine_layers = v.get<int>();
      else if (key == "coarse_weights") c.coarse_weights = v.get<std::string>();
      else if (key == "fine_weights") c.fine_weights = v.get<std::string>();
      else if (key == "inlier_px") c.inlier_px = v.get<double>();
      else if (key == "max_iters") c.max_iters = v.get<int>();
      else if (key == "ransac_confidence") c.ransac_confidence = v.get<double>();
      else throw Error(ErrorCode::kSchema, "unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("config: ") + e.what());
  }
}

std::string config_to_json(const RunConfig& c) {
  const json j = {{"seed", c.seed},
                  {"n_points", c.n_points},
                  {"n_views", c.n_views},
                  {"n_queries", c.n_queries},
                  {"fine_noise_sigma", c.noise.fine_noise_sigma},
                  {"descriptor_noise_sigma", c.noise.descriptor_noise_sigma},
                  {"dropout_rate", c.noise.dropout_rate},
                  {"outlier_rate", c.noise.outlier_rate},
                  {"min_track_length", c.min_track_length},
                  {"max_reproj_px", c.max_reproj_px},
                  {"refine_window", c.refine_window},
                  {"min_confidence", c.min_confidence},
                  {"tau", c.matching.tau},
                  {"theta", c.matching.theta},
                  {"window", c.matching.window},
                  {"fine_logit_scale", c.matching.fine_logit_scale},
                  {"pe_scale", c.matching.pe_scale},
                  {"coarse_layers", c.coarse_layers},
                  {"fine_layers", c.fine_layers},
                  {"coarse_weights", c.coarse_weights},
                  {"fine_weights", c.fine_weights},
                  {"inlier_px", c.inlier_px},
                  {"max_iters", c.max_iters},
                  {"ransac_confidence", c.ransac_confidence}};
  return j.dump(1);
}

SyntheticScene synthesize(const RunConfig& config) {
  config.validate();
  SceneOptions options;
  options.n_queries = config.n_queries;
  return generate_scene(config.seed, config.n_points, config.n_views, config.noise, options);
}

Reconstruction reconstruct(const SyntheticScene& scene, const RunConfig& config) {
  config.validate();
  const OracleMatcher matcher(scene);
  const ViewSet views = scene.reference_set();

  const auto pairs = select_view_pairs(views);
  std::vector<std::vector<CoarseMatch>> per_pair(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) { per_pair[i] = matcher.match_pair(pairs[i].first, pairs[i].second); });
  std::vector<CoarseMatch> matches;
  for (auto& m : per_pair) matches.insert(matches.end(), m.begin(), m.end());

  TrackBuildStats track_stats;
  const std::vector<FeatureTrack> tracks = build_tracks(matches, config.min_track_length, &track_stats);
  TriangulateTracksOptions topts;
  topts.max_reproj_px = config.max_reproj_px;

  Reconstruction out;
  out.coarse = triangulate_tracks(tracks, views, topts);

  RefinementOptions ropts;
  ropts.window_half = config.refine_window / 2;
  ropts.min_confidence = config.min_confidence;
  RefinementResult refined = refine_reconstruction(out.coarse, views, matcher, ropts);

  std::vector<RefinedTrack> converged;
  for (RefinedTrack& t : refined.tracks) {
    if (t.converged) converged.push_back(std::move(t));
  }
  out.files.model = aggregate_features(converged, matcher, &refined.stats);
  if (out.files.model.empty()) {
    out.files.model.coarse_features.resize(0, scene.coarse_dim());
    out.files.model.fine_features.resize(0, scene.fine_dim());
  }
  out.refinement = refined.stats;
  out.files.coarse_points = out.coarse.points;
  std::size_t k = 0;
  for (int id : out.files.model.track_ids) {
    while (converged[k].track_id != id) ++k;
    out.files.tracks.push_back(converged[k]);
  }

  json hist = json::object();
  for (const auto& [len, count] : out.coarse.stats.track_length_histogram) hist[std::to_string(len)] = count;
  const RefinementStats& rs = out.refinement;
  const json stats = {
      {"view_pairs", pairs.size()},
      {"coarse_matches", matches.size()},
      {"track_building",
       {{"components", track_stats.components},
        {"conflicts", track_stats.conflicts},
        {"conflicting_nodes", track_stats.conflicting_nodes},
        {"too_short", track_stats.too_short}}},
      {"track_length_histogram", hist},
      {"rejected",
       {{"degenerate", out.coarse.stats.rejected_degenerate},
        {"cheirality", out.coarse.stats.rejected_cheirality},
        {"reprojection", out.coarse.stats.rejected_reprojection}}},
      {"refinement",
       {{"input_tracks", rs.input_tracks},
        {"refined_tracks", rs.refined_tracks},
        {"dropped_nodes", rs.dropped_nodes},
        {"dropped_tracks", rs.dropped_tracks},
        {"non_converged", rs.non_converged},
        {"dropped_degenerate_features", rs.dropped_degenerate_features}}},
      {"coarse_points", out.coarse.points.size()},
      {"model_points", out.files.model.size()},
      {"accuracy",
       {{"coarse", accuracy_json(out.coarse.points, scene)},
        {"refined", accuracy_json(out.files.model.points, scene)}}}};
  out.files.stats_json = stats.dump(1);
  return out;
}

AttentionStack coarse_stack(const RunConfig& config, int channels) {
  if (!config.coarse_weights.empty()) return AttentionStack::from_fmat(FmatFile::read(config.coarse_weights), channels);
  return AttentionStack::seeded(config.coarse_layers, channels, config.seed);
}

AttentionStack fine_stack(const RunConfig& config, int channels) {
  if (!config.fine_weights.empty()) return AttentionStack::from_fmat(FmatFile::read(config.fine_weights), channels);
  return AttentionStack::seeded(config.fine_layers, channels, config.seed + 1);
}

std::vector<QueryEstimate> estimate_poses(const PointCloudModel& model, const SyntheticScene& scene,
                                          const RunConfig& config, const std::vector<int>& views) {
  config.validate();
  std::vector<int> ids = views;
  if (ids.empty()) {
    for (const View& v : scene.query_views) ids.push_back(v.id);
  }
  for (int id : ids) scene.view(id);  // reject unknown ids up front

  const AttentionStack cstack = model.empty() ? AttentionStack() : coarse_stack(config, scene.coarse_dim());
  const AttentionStack fstack = model.empty() ? AttentionStack() : fine_stack(config, scene.fine_dim());
  MatchingParams params = config.matching;
  params.bypass = config.bypass();

  std::vector<QueryEstimate> out(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    const auto start = std::chrono::steady_clock::now();
    const View& view = scene.view(ids[i]);
    QueryEstimate& q = out[i];
    q.record.view = view.id;
    q.record.status = "failed";
    q.record.mean_reproj_px = std::numeric_limits<double>::quiet_NaN();
    if (!model.empty()) {
      const QueryFeatureMaps maps = synthesize_query_maps(scene, view.id);
      const CorrespondenceSet cs = match_2d3d(model, maps, cstack, fstack, params);
      q.correspondences = cs.fine;
      Eigen::Matrix3Xd X(3, static_cast<Eigen::Index>(cs.fine.size()));
      Eigen::Matrix2Xd u(2, X.cols());
      for (std::size_t k = 0; k < cs.fine.size(); ++k) {
        X.col(static_cast<Eigen::Index>(k)) = model.points[cs.fine[k].point];
        u.col(static_cast<Eigen::Index>(k)) = cs.fine[k].location;
      }
      RansacOptions ropts;
      ropts.inlier_px = config.inlier_px > 0 ? config.inlier_px : default_inlier_px(view.camera.width);
      ropts.confidence = config.ransac_confidence;
      ropts.max_iterations = config.max_iters;
      ropts.seed = splitmix64(config.seed ^ splitmix64(static_cast<std::uint64_t>(view.id)));
      const PnPResult r = ransac_pnp(X, u, view.camera, ropts);
      q.record.iterations = r.iterations;
      if (r.success) {
        q.record.status = "ok";
        q.record.pose = r.pose;
        q.record.inliers = static_cast<int>(r.inliers.size());
        q.record.mean_reproj_px = r.mean_reprojection_px;
      }
    }
    q.record.timing_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  });
  return out;
}

MetricThresholds thresholds_for(const SyntheticScene& scene) {
  MetricThresholds t;
  t.diameter = scene.diameter;
  t.cm_per_unit = scene.cm_per_unit;
  return t;
}

std::vector<PoseMetrics> evaluate_poses(const std::vector<PoseRecord>& poses, const SyntheticScene& scene) {
  std::vector<PoseMetrics> out(poses.size());
  parallel_for(poses.size(), [&](std::size_t i) {
    const PoseRecord& p = poses[i];
    const View& truth = scene.view(p.view);
    out[i] = evaluate_pose(p.view, p.status == "ok", p.pose, truth.pose, truth.camera, scene.points,
                           scene.cm_per_unit);
  });
  return out;
}

int cmd_synth(const RunConfig& config, const fs::path& out) {
  const SyntheticScene scene = synthesize(config);
  save_scene(out, scene);
  const SyntheticScene back = load_scene(out);
  if (back.points != scene.points || back.coarse_descriptors != scene.coarse_descriptors ||
      back.fine_descriptors != scene.fine_descriptors || back.views.size() != scene.views.size() ||
      back.query_views.size() != scene.query_views.size()) {
    throw Error(ErrorCode::kIo, "scene did not round-trip through " + out.string());
  }
  return 0;
}

int cmd_reconstruct(const RunConfig& config, const fs::path& scene_dir, const fs::path& out) {
  const SyntheticScene scene = load_scene(scene_dir);
  const Reconstruction r = reconstruct(scene, config);
  // An empty model is still written so later stages report it the same way.
  save_model(out, r.files);
  if (r.files.model.empty()) throw EmptyResult("reconstruction produced no refined tracks");
  return 0;
}

int cmd_estimate(const RunConfig& config, const fs::path& model_dir, const fs::path& scene_dir, const fs::path& out,
                 const std::vector<int>& views) {
  const SyntheticScene scene = load_scene(scene_dir);
  const PointCloudModel model = load_model(model_dir);
  const std::vector<QueryEstimate> estimates = estimate_poses(model, scene, config, views);
  std::vector<PoseRecord> records;
  bool any = false;
  for (const QueryEstimate& e : estimates) {
    records.push_back(e.record);
    any = any || e.record.status == "ok";
    write_correspondences(out / "correspondences" / ("query_" + std::to_string(e.record.view) + ".csv"),
                          e.correspondences);
  }
  write_poses(out / "poses.json", records);
  if (model.empty()) throw EmptyResult("model has no points");
  if (!any) throw EmptyResult("no query pose could be estimated");
  return 0;
}

int cmd_eval(const fs::path& poses, const fs::path& scene_dir, const fs::path& out) {
  const SyntheticScene scene = load_scene(scene_dir);
  const std::vector<PoseRecord> records = read_poses(poses);
  write_text(out, metrics_csv(evaluate_poses(records, scene), thresholds_for(scene)));
  return 0;
}

int cmd_pipeline(const RunConfig& config, const fs::path& out) {
  cmd_synth(config, out / "scene");
  cmd_reconstruct(config, out / "scene", out / "model");
  int code = 0;
  try {
    cmd_estimate(config, out / "model", out / "scene", out / "estimate");
  } catch (const EmptyResult&) {
    code = 3;  // metrics are still written, every query counted as failed
  }
  cmd_eval(out / "estimate" / "poses.json", out / "scene", out / "metrics.csv");
  return code;
}

}  // namespace semidense
