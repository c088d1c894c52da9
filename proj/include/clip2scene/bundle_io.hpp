#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "clip2scene/binary_io.hpp"
#include "clip2scene/error.hpp"
#include "clip2scene/synth.hpp"

namespace clip2scene {

// Scene bundle directory layout:
//   manifest.json       camera, extrinsic (16 row-major numbers), class names,
//                       per-sweep pose and timestamp
//   sweep_<k>.xyz       "x y z label" per point
//   pixel_features.f32  little-endian float32, (H*W) x D row-major
//   pixel_class.txt     H rows of W integers
//   text_bank.f32       little-endian float32, C x D row-major

namespace detail {

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void normalize_rows(Eigen::MatrixXd &m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0) m.row(i) /= n;
  }
}

} // namespace detail

inline void save_scene(const std::filesystem::path &dir, const SceneBundle &scene) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json m;
  m["camera"] = {{"fx", scene.camera.fx},       {"fy", scene.camera.fy},
                 {"cx", scene.camera.cx},       {"cy", scene.camera.cy},
                 {"width", scene.camera.width}, {"height", scene.camera.height},
                 {"z_near", scene.camera.z_near}};
  m["cam_extrinsic"] = scene.cam_extrinsic.to_array();
  m["class_names"] = scene.class_names;
  m["feature_dim"] = scene.pixel_features.cols();
  m["prompt_count"] = scene.text_bank.prompt_count;
  nlohmann::json sweeps = nlohmann::json::array();
  for (const auto &s : scene.sweeps) {
    sweeps.push_back({{"id", s.id},
                      {"timestamp", s.timestamp},
                      {"sensor_to_world", s.sensor_to_world.to_array()},
                      {"file", "sweep_" + std::to_string(s.id) + ".xyz"},
                      {"points", s.points.rows()}});
  }
  m["sweeps"] = sweeps;
  {
    std::ofstream out(dir / "manifest.json");
    require_valid(static_cast<bool>(out), "cannot write manifest in " + dir.string());
    out << m.dump(2) << '\n';
  }
  for (std::size_t k = 0; k < scene.sweeps.size(); ++k) {
    const auto &s = scene.sweeps[k];
    std::ofstream out(dir / ("sweep_" + std::to_string(s.id) + ".xyz"));
    for (Eigen::Index i = 0; i < s.points.rows(); ++i)
      out << detail::format_number(s.points(i, 0)) << ' ' << detail::format_number(s.points(i, 1))
          << ' ' << detail::format_number(s.points(i, 2)) << ' '
          << scene.point_class_gt[k][static_cast<std::size_t>(i)] << '\n';
  }
  {
    std::ofstream out(dir / "pixel_features.f32", std::ios::binary);
    write_matrix_f32(out, scene.pixel_features);
  }
  {
    std::ofstream out(dir / "pixel_class.txt");
    for (int r = 0; r < scene.height(); ++r) {
      for (int c = 0; c < scene.width(); ++c) out << (c ? " " : "") << scene.class_at(r, c);
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "text_bank.f32", std::ios::binary);
    write_matrix_f32(out, scene.text_bank.embeddings);
  }
}

/// Loads a bundle written by save_scene. Feature and text rows are
/// renormalized after the float32 round trip.
inline SceneBundle load_scene(const std::filesystem::path &dir) {
  std::ifstream mf(dir / "manifest.json");
  require_valid(static_cast<bool>(mf), "no manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    mf >> m;
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  SceneBundle scene;
  try {
    const auto &cj = m.at("camera");
    scene.camera.fx = cj.at("fx");
    scene.camera.fy = cj.at("fy");
    scene.camera.cx = cj.at("cx");
    scene.camera.cy = cj.at("cy");
    scene.camera.width = cj.at("width");
    scene.camera.height = cj.at("height");
    scene.camera.z_near = cj.at("z_near");
    scene.cam_extrinsic = RigidTransform::from_array(m.at("cam_extrinsic").get<std::array<double, 16>>());
    scene.class_names = m.at("class_names").get<std::vector<std::string>>();
    const int D = m.at("feature_dim");
    const int C = static_cast<int>(scene.class_names.size());
    const int H = scene.camera.height, W = scene.camera.width;
    for (const auto &sj : m.at("sweeps")) {
      Sweep s;
      s.id = sj.at("id");
      s.timestamp = sj.at("timestamp");
      s.sensor_to_world =
          RigidTransform::from_array(sj.at("sensor_to_world").get<std::array<double, 16>>());
      std::ifstream in(dir / sj.at("file").get<std::string>());
      require_valid(static_cast<bool>(in), "missing sweep file in " + dir.string());
      std::vector<Eigen::Vector3d> pts;
      std::vector<int> labels;
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        double x, y, z;
        int l;
        require_valid(static_cast<bool>(ls >> x >> y >> z >> l), "malformed sweep line: " + line);
        pts.emplace_back(x, y, z);
        labels.push_back(l);
      }
      s.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
      for (std::size_t i = 0; i < pts.size(); ++i)
        s.points.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
      scene.sweeps.push_back(std::move(s));
      scene.point_class_gt.push_back(std::move(labels));
    }
    {
      std::ifstream in(dir / "pixel_features.f32", std::ios::binary);
      require_valid(static_cast<bool>(in), "missing pixel_features.f32");
      scene.pixel_features = read_matrix_f32(in, static_cast<Eigen::Index>(H) * W, D);
      detail::normalize_rows(scene.pixel_features);
    }
    {
      std::ifstream in(dir / "pixel_class.txt");
      require_valid(static_cast<bool>(in), "missing pixel_class.txt");
      scene.pixel_class.resize(static_cast<std::size_t>(H) * W);
      for (auto &v : scene.pixel_class) require_valid(static_cast<bool>(in >> v), "short pixel_class.txt");
    }
    {
      std::ifstream in(dir / "text_bank.f32", std::ios::binary);
      require_valid(static_cast<bool>(in), "missing text_bank.f32");
      scene.text_bank.embeddings = read_matrix_f32(in, C, D);
      detail::normalize_rows(scene.text_bank.embeddings);
      scene.text_bank.prototypes = scene.text_bank.embeddings;
      scene.text_bank.class_names = scene.class_names;
      scene.text_bank.prompt_count = m.value("prompt_count", 1);
    }
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  scene.camera.validate();
  return scene;
}

} // namespace clip2scene
