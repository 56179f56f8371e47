#include "semidense/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace semidense {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "FMAT and binary PLY I/O assume a little-endian host");

constexpr char kMagic[4] = {'F', 'M', 'A', 'T'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& in, const fs::path& path) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw Error(ErrorCode::kIo, "truncated file " + path.string());
  }
  return value;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  return in;
}

json parse_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, path.string() + ": " + e.what());
  }
}

json pose_to_json(const SE3d& pose) {
  json a = json::array();
  const Eigen::Matrix4d m = pose.matrix();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) a.push_back(m(r, c));
  }
  return a;
}

SE3d pose_from_json(const json& a) {
  if (!a.is_array() || a.size() != 16) throw Error(ErrorCode::kSchema, "pose must hold 16 numbers");
  Eigen::Matrix4d m;
  for (int i = 0; i < 16; ++i) m(i / 4, i % 4) = a.at(i).get<double>();
  return SE3d::FromMatrix(m);
}

json view_to_json(const View& v) {
  const Camerad& k = v.camera;
  return {{"id", v.id},
          {"pose", pose_to_json(v.pose)},
          {"intrinsics", {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}}}};
}

View view_from_json(const json& j) {
  View v;
  v.id = j.at("id").get<int>();
  v.pose = pose_from_json(j.at("pose"));
  const json& k = j.at("intrinsics");
  v.camera.fx = k.at("fx").get<double>();
  v.camera.fy = k.at("fy").get<double>();
  v.camera.cx = k.at("cx").get<double>();
  v.camera.cy = k.at("cy").get<double>();
  v.camera.width = k.at("width").get<int>();
  v.camera.height = k.at("height").get<int>();
  v.camera.validate();
  return v;
}

json points_to_json(const std::vector<Eigen::Vector3d>& points) {
  json a = json::array();
  for (const auto& p : points) a.push_back({p.x(), p.y(), p.z()});
  return a;
}

std::vector<Eigen::Vector3d> points_from_json(const json& a) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(a.size());
  for (const json& p : a) {
    if (!p.is_array() || p.size() != 3) throw Error(ErrorCode::kSchema, "point must hold 3 numbers");
    out.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
  }
  return out;
}

template <typename Fn>
auto with_schema(const fs::path& path, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, path.string() + ": " + e.what());
  }
}

}  // namespace

// --- FMAT -----------------------------------------------------------------

FmatFile FmatFile::read(const fs::path& path) {
  std::ifstream in = open_in(path, true);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::kSchema, path.string() + " is not an FMAT file");
  }
  const auto version = take<std::uint32_t>(in, path);
  if (version != kVersion) throw Error(ErrorCode::kSchema, "unsupported FMAT version " + std::to_string(version));
  const auto count = take<std::uint32_t>(in, path);
  FmatFile file;
  for (std::uint32_t s = 0; s < count; ++s) {
    const auto name_len = take<std::uint32_t>(in, path);
    if (name_len > 4096) throw Error(ErrorCode::kSchema, "FMAT section name too long");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw Error(ErrorCode::kIo, "truncated file " + path.string());
    const auto dtype = take<std::uint8_t>(in, path);
    const auto rows = take<std::uint64_t>(in, path);
    const auto cols = take<std::uint64_t>(in, path);
    if (dtype != 1 && dtype != 2) throw Error(ErrorCode::kSchema, "unknown FMAT dtype in section " + name);
    if (rows > (1ull << 32) || cols > (1ull << 32)) throw Error(ErrorCode::kSchema, "FMAT section too large");
    RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (dtype == 2) {
      if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
        throw Error(ErrorCode::kIo, "truncated file " + path.string());
      }
    } else {
      std::vector<float> buf(static_cast<std::size_t>(m.size()));
      if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
        throw Error(ErrorCode::kIo, "truncated file " + path.string());
      }
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = buf[static_cast<std::size_t>(i)];
    }
    if (file.contains(name)) throw Error(ErrorCode::kSchema, "duplicate FMAT section " + name);
    file.sections_.emplace(name, Section{static_cast<FmatType>(dtype), std::move(m)});
  }
  return file;
}

void FmatFile::write(const fs::path& path) const {
  std::ofstream out = open_out(path, true);
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sections_.size()));
  for (const auto& [name, section] : sections_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(section.type));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(section.data.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(section.data.cols()));
    if (section.type == FmatType::kFloat64) {
      out.write(reinterpret_cast<const char*>(section.data.data()),
                static_cast<std::streamsize>(section.data.size() * sizeof(double)));
    } else {
      for (Eigen::Index i = 0; i < section.data.size(); ++i) put<float>(out, static_cast<float>(section.data.data()[i]));
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

const RowMatrix& FmatFile::get(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end()) throw Error(ErrorCode::kSchema, "missing FMAT section " + name);
  return it->second.data;
}

FmatType FmatFile::type(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end()) throw Error(ErrorCode::kSchema, "missing FMAT section " + name);
  return it->second.type;
}

void FmatFile::set(const std::string& name, const RowMatrix& m, FmatType type) {
  if (name.empty()) throw Error(ErrorCode::kArgument, "FMAT section name is empty");
  sections_[name] = Section{type, m};
}

std::vector<std::string> FmatFile::names() const {
  std::vector<std::string> out;
  for (const auto& [name, section] : sections_) out.push_back(name);
  return out;
}

// --- PLY ------------------------------------------------------------------

void write_ply(const fs::path& path, const std::vector<Eigen::Vector3d>& points, bool binary) {
  std::ofstream out = open_out(path, true);
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
      << "element vertex " << points.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\nend_header\n";
  char buf[96];
  for (const auto& p : points) {
    if (binary) {
      for (int i = 0; i < 3; ++i) put<double>(out, p[i]);
    } else {
      std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
      out << buf;
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

std::vector<Eigen::Vector3d> read_ply(const fs::path& path) {
  std::ifstream in = open_in(path, true);
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw Error(ErrorCode::kSchema, path.string() + " is not a PLY file");
  bool binary = false;
  std::size_t count = 0;
  bool in_vertex = false;
  std::vector<std::string> props;
  for (;;) {
    if (!std::getline(in, line)) throw Error(ErrorCode::kSchema, "PLY header not terminated");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end_header") break;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") {
        binary = true;
      } else if (fmt != "ascii") {
        throw Error(ErrorCode::kSchema, "unsupported PLY format " + fmt);
      }
    } else if (key == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex) {
        ls >> count;
      } else {
        throw Error(ErrorCode::kSchema, "unsupported PLY element " + name);
      }
    } else if (key == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      if (type != "double" && type != "float") throw Error(ErrorCode::kSchema, "unsupported PLY property type " + type);
      props.push_back(type + ":" + name);
    }
  }
  if (props.size() != 3 || props[0].substr(props[0].find(':')) != ":x" ||
      props[1].substr(props[1].find(':')) != ":y" || props[2].substr(props[2].find(':')) != ":z") {
    throw Error(ErrorCode::kSchema, "PLY vertices must carry exactly x, y, z");
  }
  std::vector<Eigen::Vector3d> points(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (int a = 0; a < 3; ++a) {
      if (binary) {
        points[i][a] = props[a][0] == 'd' ? take<double>(in, path) : static_cast<double>(take<float>(in, path));
      } else if (!(in >> points[i][a])) {
        throw Error(ErrorCode::kSchema, "PLY vertex list truncated");
      }
    }
  }
  return points;
}

// --- scene ----------------------------------------------------------------

void save_scene(const fs::path& dir, const SyntheticScene& scene) {
  json j;
  j["seed"] = scene.seed;
  j["noise"] = {{"fine_noise_sigma", scene.noise.fine_noise_sigma},
                {"descriptor_noise_sigma", scene.noise.descriptor_noise_sigma},
                {"dropout_rate", scene.noise.dropout_rate},
                {"outlier_rate", scene.noise.outlier_rate}};
  j["diameter"] = scene.diameter;
  j["cm_per_unit"] = scene.cm_per_unit;
  j["views"] = json::array();
  for (const View& v : scene.views) j["views"].push_back(view_to_json(v));
  j["query_views"] = json::array();
  for (const View& v : scene.query_views) j["query_views"].push_back(view_to_json(v));
  j["points"] = points_to_json(scene.points);
  write_text(dir / "scene.json", j.dump(1) + "\n");

  FmatFile f;
  f.set("coarse_descriptors", scene.coarse_descriptors);
  f.set("fine_descriptors", scene.fine_descriptors);
  f.write(dir / "features.fmat");
}

SyntheticScene load_scene(const fs::path& dir) {
  const fs::path path = dir / "scene.json";
  const json j = parse_json(path);
  SyntheticScene scene = with_schema(path, [&] {
    SyntheticScene s;
    s.seed = j.at("seed").get<std::uint64_t>();
    const json& n = j.at("noise");
    s.noise.fine_noise_sigma = n.at("fine_noise_sigma").get<double>();
    s.noise.descriptor_noise_sigma = n.at("descriptor_noise_sigma").get<double>();
    s.noise.dropout_rate = n.at("dropout_rate").get<double>();
    s.noise.outlier_rate = n.at("outlier_rate").get<double>();
    s.diameter = j.at("diameter").get<double>();
    s.cm_per_unit = j.at("cm_per_unit").get<double>();
    for (const json& v : j.at("views")) s.views.push_back(view_from_json(v));
    for (const json& v : j.at("query_views")) s.query_views.push_back(view_from_json(v));
    s.points = points_from_json(j.at("points"));
    return s;
  });
  scene.noise.validate();
  const FmatFile f = FmatFile::read(dir / "features.fmat");
  scene.coarse_descriptors = f.get("coarse_descriptors");
  scene.fine_descriptors = f.get("fine_descriptors");
  const auto n = static_cast<Eigen::Index>(scene.points.size());
  if (scene.coarse_descriptors.rows() != n || scene.fine_descriptors.rows() != n) {
    throw Error(ErrorCode::kSchema, "descriptor count does not match point count");
  }
  return scene;
}

// --- model ----------------------------------------------------------------

void save_model(const fs::path& dir, const ModelFiles& files) {
  const PointCloudModel& m = files.model;
  if (files.tracks.size() != m.size() || m.track_ids.size() != m.size()) {
    throw Error(ErrorCode::kArgument, "model tracks and points disagree");
  }
  fs::create_directories(dir);
  write_ply(dir / "coarse.ply", files.coarse_points);
  write_ply(dir / "refined.ply", m.points);

  json tracks = json::array();
  for (std::size_t i = 0; i < files.tracks.size(); ++i) {
    const RefinedTrack& t = files.tracks[i];
    json nodes = json::array();
    nodes.push_back({{"view", t.reference.view_id}, {"u", t.reference.pixel.x()}, {"v", t.reference.pixel.y()}});
    for (const TrackNode& s : t.sources) nodes.push_back({{"view", s.view_id}, {"u", s.pixel.x()}, {"v", s.pixel.y()}});
    tracks.push_back({{"track_id", t.track_id}, {"nodes", nodes}, {"point", {m.points[i].x(), m.points[i].y(), m.points[i].z()}}});
  }
  write_text(dir / "tracks.json", tracks.dump(1) + "\n");

  FmatFile f;
  f.set("coarse_features", m.coarse_features);
  f.set("fine_features", m.fine_features);
  RowMatrix ids(static_cast<Eigen::Index>(m.size()), 1);
  for (std::size_t i = 0; i < m.size(); ++i) ids(static_cast<Eigen::Index>(i), 0) = m.track_ids[i];
  f.set("track_ids", ids);
  f.write(dir / "features.fmat");

  write_text(dir / "stats.json", files.stats_json + "\n");
  const json manifest = {{"format_version", 1},
                         {"points", m.size()},
                         {"coarse_dim", m.coarse_features.cols()},
                         {"fine_dim", m.fine_features.cols()},
                         {"files", {"coarse.ply", "refined.ply", "tracks.json", "features.fmat", "stats.json"}}};
  write_text(dir / "model.json", manifest.dump(1) + "\n");
}

PointCloudModel load_model(const fs::path& dir) {
  const json manifest = parse_json(dir / "model.json");
  const auto expected = with_schema(dir / "model.json", [&] { return manifest.at("points").get<std::size_t>(); });
  PointCloudModel m;
  m.points = read_ply(dir / "refined.ply");
  const FmatFile f = FmatFile::read(dir / "features.fmat");
  m.coarse_features = f.get("coarse_features");
  m.fine_features = f.get("fine_features");
  const RowMatrix& ids = f.get("track_ids");
  const auto n = static_cast<Eigen::Index>(m.points.size());
  if (m.points.size() != expected || m.coarse_features.rows() != n || m.fine_features.rows() != n ||
      ids.rows() != n || ids.cols() != 1) {
    throw Error(ErrorCode::kSchema, "model files disagree on the point count");
  }
  for (Eigen::Index i = 0; i < n; ++i) m.track_ids.push_back(static_cast<int>(ids(i, 0)));
  return m;
}

// --- poses and correspondences -------------------------------------------

void write_poses(const fs::path& path, const std::vector<PoseRecord>& poses) {
  json a = json::array();
  for (const PoseRecord& p : poses) {
    a.push_back({{"view", p.view},
                 {"status", p.status},
                 {"pose", pose_to_json(p.pose)},
                 {"inliers", p.inliers},
                 {"mean_reproj_px", p.mean_reproj_px},
                 {"iterations", p.iterations},
                 {"timing_ms", p.timing_ms}});
  }
  write_text(path, a.dump(1) + "\n");
}

std::vector<PoseRecord> read_poses(const fs::path& path) {
  const json a = parse_json(path);
  return with_schema(path, [&] {
    if (!a.is_array()) throw Error(ErrorCode::kSchema, "poses file must hold an array");
    std::vector<PoseRecord> out;
    for (const json& j : a) {
      PoseRecord p;
      p.view = j.at("view").get<int>();
      p.status = j.at("status").get<std::string>();
      p.pose = pose_from_json(j.at("pose"));
      p.inliers = j.at("inliers").get<int>();
      p.mean_reproj_px = j.at("mean_reproj_px").is_null() ? 0.0 : j.at("mean_reproj_px").get<double>();
      p.iterations = j.at("iterations").get<int>();
      p.timing_ms = j.at("timing_ms").get<double>();
      out.push_back(p);
    }
    return out;
  });
}

void write_correspondences(const fs::path& path, const std::vector<FineCorrespondence>& matches) {
  std::ofstream out = open_out(path);
  out << "j,u,v,conf\n";
  char buf[128];
  for (const FineCorrespondence& m : matches) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", m.point, m.location.x(), m.location.y(), m.confidence);
    out << buf;
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

}  // namespace semidense
