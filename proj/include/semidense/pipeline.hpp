#pragma once

// End-to-end stages behind the command-line tool: scene synthesis,
// reconstruction, pose estimation and evaluation, plus the run configuration.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "semidense/io.hpp"
#include "semidense/metrics.hpp"
#include "semidense/pnp.hpp"
#include "semidense/pose_matching.hpp"
#include "semidense/refinement.hpp"
#include "semidense/scene.hpp"

namespace semidense {

struct RunConfig {
  std::uint64_t seed = 1;

  int n_points = 2000;
  int n_views = 30;
  int n_queries = 20;
  NoiseModel noise;

  std::size_t min_track_length = 3;
  double max_reproj_px = 12.0;
  int refine_window = 9;
  double min_confidence = 0.2;

  MatchingParams matching;
  int coarse_layers = 3;
  int fine_layers = 1;
  std::string coarse_weights;  // FMAT; seeded-random when empty
  std::string fine_weights;

  double inlier_px = 0.0;  // 0 selects the width-scaled default
  int max_iters = 10000;
  double ransac_confidence = 0.99;

  // Layer counts of zero switch off encoding and attention.
  bool bypass() const { return coarse_layers == 0; }
  void validate() const;
};

// Reads keys named like the struct fields (noise fields at top level).
// Unknown keys are rejected.
void apply_config_json(RunConfig& config, const std::string& text);
std::string config_to_json(const RunConfig& config);

// Raised when a stage produces nothing to hand on (exit code 3).
class EmptyResult : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

SyntheticScene synthesize(const RunConfig& config);

struct Reconstruction {
  ModelFiles files;
  CoarseReconstruction coarse;
  RefinementStats refinement;
};

// Matching, tracks, triangulation, refinement and aggregation against the
// scene's oracle matcher. Only converged tracks enter the model.
Reconstruction reconstruct(const SyntheticScene& scene, const RunConfig& config);

struct QueryEstimate {
  PoseRecord record;
  std::vector<FineCorrespondence> correspondences;
};

AttentionStack coarse_stack(const RunConfig& config, int channels);
AttentionStack fine_stack(const RunConfig& config, int channels);

// One estimate per requested query view id (all query views when empty).
std::vector<QueryEstimate> estimate_poses(const PointCloudModel& model, const SyntheticScene& scene,
                                          const RunConfig& config, const std::vector<int>& views = {});

std::vector<PoseMetrics> evaluate_poses(const std::vector<PoseRecord>& poses, const SyntheticScene& scene);

MetricThresholds thresholds_for(const SyntheticScene& scene);

// File-level commands. Each returns the process exit code, throws Error for
// invalid input and EmptyResult when nothing survives.
int cmd_synth(const RunConfig& config, const std::filesystem::path& out);
int cmd_reconstruct(const RunConfig& config, const std::filesystem::path& scene_dir,
                    const std::filesystem::path& out);
int cmd_estimate(const RunConfig& config, const std::filesystem::path& model_dir,
                 const std::filesystem::path& scene_dir, const std::filesystem::path& out,
                 const std::vector<int>& views = {});
int cmd_eval(const std::filesystem::path& poses, const std::filesystem::path& scene_dir,
             const std::filesystem::path& out);
// synth -> reconstruct -> estimate -> eval under out/{scene,model,estimate}
// and out/metrics.csv.
int cmd_pipeline(const RunConfig& config, const std::filesystem::path& out);

}  // namespace semidense
