#pragma once

// On-disk formats: the FMAT named-matrix container, PLY point clouds, and
// JSON/CSV files for scenes, models, poses and correspondences.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "semidense/feature_maps.hpp"
#include "semidense/pose_matching.hpp"
#include "semidense/refinement.hpp"
#include "semidense/scene.hpp"

namespace semidense {

enum class FmatType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

// Little-endian container of named row-major matrices:
//   "FMAT" u32 version u32 count, then per section
//   u32 name_len, name, u8 dtype, u64 rows, u64 cols, payload.
class FmatFile {
 public:
  static constexpr std::uint32_t kVersion = 1;

  static FmatFile read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

  bool contains(const std::string& name) const { return sections_.count(name) != 0; }
  const RowMatrix& get(const std::string& name) const;
  FmatType type(const std::string& name) const;
  void set(const std::string& name, const RowMatrix& m, FmatType type = FmatType::kFloat64);
  std::vector<std::string> names() const;

 private:
  struct Section {
    FmatType type;
    RowMatrix data;
  };
  std::map<std::string, Section> sections_;
};

void write_ply(const std::filesystem::path& path, const std::vector<Eigen::Vector3d>& points, bool binary = false);
std::vector<Eigen::Vector3d> read_ply(const std::filesystem::path& path);

// scene.json plus features.fmat inside `dir`.
void save_scene(const std::filesystem::path& dir, const SyntheticScene& scene);
SyntheticScene load_scene(const std::filesystem::path& dir);

struct ModelFiles {
  std::vector<Eigen::Vector3d> coarse_points;
  std::vector<RefinedTrack> tracks;  // parallel to model rows
  PointCloudModel model;
  std::string stats_json = "{}";
};

// coarse.ply, refined.ply, tracks.json, features.fmat, stats.json, model.json.
void save_model(const std::filesystem::path& dir, const ModelFiles& files);
PointCloudModel load_model(const std::filesystem::path& dir);

struct PoseRecord {
  int view = -1;
  std::string status;  // "ok" or "failed"
  SE3d pose;
  int inliers = 0;
  double mean_reproj_px = 0.0;
  int iterations = 0;
  double timing_ms = 0.0;
};

void write_poses(const std::filesystem::path& path, const std::vector<PoseRecord>& poses);
std::vector<PoseRecord> read_poses(const std::filesystem::path& path);

// Rows "j,u,v,conf" with j the model point index.
void write_correspondences(const std::filesystem::path& path, const std::vector<FineCorrespondence>& matches);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace semidense
