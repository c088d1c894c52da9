#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <vector>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "clip2scene/synth.hpp"

namespace test_support {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string &tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("clip2scene_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::string str(const std::string &leaf = "") const {
    return leaf.empty() ? path_.string() : (path_ / leaf).string();
  }

private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Eigen::MatrixXd gaussian(std::mt19937_64 &rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Eigen::MatrixXd unit_rows(std::mt19937_64 &rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m = gaussian(rng, r, c);
  m.rowwise().normalize();
  return m;
}

struct NaivePair {
  int row, col, sweep;
  long index;
  int pixel_class;
  int gt;
};

// Independent per-point projection loop on raw 4x4 matrices: frame-1
// registration via an explicit matrix inverse, then the pinhole formula.
inline std::vector<NaivePair> brute_force_pairs(const clip2scene::SceneBundle &scene) {
  std::vector<NaivePair> out;
  const clip2scene::Sweep *first = nullptr;
  for (const auto &s : scene.sweeps)
    if (s.id == 1) first = &s;
  const Eigen::Matrix4d first_inv = first->sensor_to_world.matrix().inverse();
  const Eigen::Matrix4d ext = scene.cam_extrinsic.matrix();
  const auto &cam = scene.camera;
  std::vector<std::size_t> order(scene.sweeps.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scene.sweeps[a].id < scene.sweeps[b].id; });
  for (std::size_t k : order) {
    const auto &s = scene.sweeps[k];
    const Eigen::Matrix4d chain = ext * first_inv * s.sensor_to_world.matrix();
    for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
      const Eigen::Vector4d h(s.points(i, 0), s.points(i, 1), s.points(i, 2), 1.0);
      const Eigen::Vector4d c = chain * h;
      if (!(c.z() > cam.z_near)) continue;
      const double u = cam.fx * c.x() / c.z() + cam.cx;
      const double v = cam.fy * c.y() / c.z() + cam.cy;
      const long col = std::lround(u), row = std::lround(v);
      if (col < 0 || col >= cam.width || row < 0 || row >= cam.height) continue;
      out.push_back({static_cast<int>(row), static_cast<int>(col), s.id, static_cast<long>(i),
                     scene.pixel_class[static_cast<std::size_t>(row * cam.width + col)],
                     scene.point_class_gt[k][static_cast<std::size_t>(i)]});
    }
  }
  return out;
}

} // namespace test_support
