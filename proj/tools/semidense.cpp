// Command-line front end: synth, reconstruct, estimate, eval, pipeline.

#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semidense/error.hpp"
#include "semidense/io.hpp"
#include "semidense/pipeline.hpp"

namespace {

using semidense::RunConfig;

// Flag overrides are collected here and applied after the config file, so
// flags always win.
class Overrides {
 public:
  explicit Overrides(CLI::App& app) : app_(app) {}

  template <typename T>
  void add(const std::string& flag, const std::string& help, std::function<void(RunConfig&, const T&)> apply) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app_.add_option(flag, *value, help)->group("Parameters");
    entries_.push_back({opt, [value, apply](RunConfig& c) { apply(c, *value); }});
  }

  void apply(RunConfig& c) const {
    for (const auto& [opt, fn] : entries_) {
      if (opt->count() > 0) fn(c);
    }
  }

 private:
  CLI::App& app_;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> entries_;
};

void add_parameters(Overrides& o) {
  o.add<std::uint64_t>("--seed", "random seed", [](RunConfig& c, const std::uint64_t& v) { c.seed = v; });
  o.add<int>("--n-points", "scene points", [](RunConfig& c, const int& v) { c.n_points = v; });
  o.add<int>("--n-views", "reference views", [](RunConfig& c, const int& v) { c.n_views = v; });
  o.add<int>("--n-queries", "held-out query views", [](RunConfig& c, const int& v) { c.n_queries = v; });
  o.add<double>("--fine-noise-sigma", "fine localisation noise (px)",
                [](RunConfig& c, const double& v) { c.noise.fine_noise_sigma = v; });
  o.add<double>("--descriptor-noise-sigma", "descriptor noise norm",
                [](RunConfig& c, const double& v) { c.noise.descriptor_noise_sigma = v; });
  o.add<double>("--dropout-rate", "per-view observation dropout",
                [](RunConfig& c, const double& v) { c.noise.dropout_rate = v; });
  o.add<double>("--outlier-rate", "coarse match outlier rate",
                [](RunConfig& c, const double& v) { c.noise.outlier_rate = v; });
  o.add<std::size_t>("--min-track-length", "minimum nodes per track",
                     [](RunConfig& c, const std::size_t& v) { c.min_track_length = v; });
  o.add<double>("--max-reproj-px", "coarse triangulation reprojection gate",
                [](RunConfig& c, const double& v) { c.max_reproj_px = v; });
  o.add<int>("--refine-window", "refinement window size (odd)",
             [](RunConfig& c, const int& v) { c.refine_window = v; });
  o.add<double>("--min-confidence", "minimum fine-match confidence",
                [](RunConfig& c, const double& v) { c.min_confidence = v; });
  o.add<double>("--tau", "dual-softmax temperature", [](RunConfig& c, const double& v) { c.matching.tau = v; });
  o.add<double>("--theta", "coarse match threshold", [](RunConfig& c, const double& v) { c.matching.theta = v; });
  o.add<int>("--window", "fine window size (odd)", [](RunConfig& c, const int& v) { c.matching.window = v; });
  o.add<double>("--fine-logit-scale", "fine correlation scale",
                [](RunConfig& c, const double& v) { c.matching.fine_logit_scale = v; });
  o.add<double>("--pe-scale", "positional encoding weight",
                [](RunConfig& c, const double& v) { c.matching.pe_scale = v; });
  o.add<int>("--coarse-layers", "coarse attention layers", [](RunConfig& c, const int& v) { c.coarse_layers = v; });
  o.add<int>("--fine-layers", "fine attention layers", [](RunConfig& c, const int& v) { c.fine_layers = v; });
  o.add<std::string>("--coarse-weights", "coarse attention weights (FMAT)",
                     [](RunConfig& c, const std::string& v) { c.coarse_weights = v; });
  o.add<std::string>("--fine-weights", "fine attention weights (FMAT)",
                     [](RunConfig& c, const std::string& v) { c.fine_weights = v; });
  o.add<double>("--inlier-px", "RANSAC inlier threshold (0 = scaled default)",
                [](RunConfig& c, const double& v) { c.inlier_px = v; });
  o.add<int>("--max-iters", "RANSAC iteration cap", [](RunConfig& c, const int& v) { c.max_iters = v; });
  o.add<double>("--ransac-confidence", "RANSAC confidence",
                [](RunConfig& c, const double& v) { c.ransac_confidence = v; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Keypoint-free object reconstruction and pose estimation on synthetic scenes", "semidense");
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  bool bypass = false;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--out", out, "output directory (eval: metrics CSV path)");
  app.add_flag("--bypass", bypass, "disable positional encoding and attention");
  Overrides overrides(app);
  add_parameters(overrides);

  std::string scene_dir, model_dir, poses_path;
  std::vector<int> views;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene")->fallthrough();
  CLI::App* recon = app.add_subcommand("reconstruct", "reconstruct a model from a scene")->fallthrough();
  recon->add_option("--scene", scene_dir, "scene directory")->required();
  CLI::App* estimate = app.add_subcommand("estimate", "estimate query poses against a model")->fallthrough();
  estimate->add_option("--model", model_dir, "model directory")->required();
  estimate->add_option("--scene", scene_dir, "scene directory")->required();
  estimate->add_option("--views", views, "query view ids (default: all)");
  CLI::App* eval = app.add_subcommand("eval", "score poses against scene ground truth")->fallthrough();
  eval->add_option("--poses", poses_path, "poses.json")->required();
  eval->add_option("--scene", scene_dir, "scene directory")->required();
  CLI::App* pipeline = app.add_subcommand("pipeline", "synth, reconstruct, estimate and eval")->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (out.empty()) throw semidense::Error(semidense::ErrorCode::kArgument, "--out is required");
    RunConfig config;
    if (!config_path.empty()) semidense::apply_config_json(config, semidense::read_text(config_path));
    overrides.apply(config);
    if (bypass) config.coarse_layers = config.fine_layers = 0;
    config.validate();

    if (synth->parsed()) return semidense::cmd_synth(config, out);
    if (recon->parsed()) return semidense::cmd_reconstruct(config, scene_dir, out);
    if (estimate->parsed()) return semidense::cmd_estimate(config, model_dir, scene_dir, out, views);
    if (eval->parsed()) return semidense::cmd_eval(poses_path, scene_dir, out);
    if (pipeline->parsed()) return semidense::cmd_pipeline(config, out);
  } catch (const semidense::EmptyResult& e) {
    std::cerr << "semidense: " << e.what() << "\n";
    return 3;
  } catch (const semidense::Error& e) {
    std::cerr << "semidense: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "semidense: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
