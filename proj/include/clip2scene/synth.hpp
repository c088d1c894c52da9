#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clip2scene/error.hpp"
#include "clip2scene/geom.hpp"
#include "clip2scene/rng.hpp"

namespace clip2scene {

/// Per-class text embeddings. Each row is the renormalized average of
/// `prompt_count` noisy prompt variants around a class prototype.
struct TextBank {
  Eigen::MatrixXd embeddings; // C x D, unit rows
  Eigen::MatrixXd prototypes; // C x D, unit rows
  int prompt_count = 1;
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(embeddings.rows()); }
  int dim() const { return static_cast<int>(embeddings.cols()); }
};

inline std::vector<std::string> default_class_names(int num_classes) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c)
    names.push_back(c == 0 ? "ground" : "platform_" + std::to_string(c));
  return names;
}

inline Eigen::VectorXd gaussian_vector(Rng &rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  return v;
}

inline Eigen::VectorXd random_unit_vector(Rng &rng, int dim) {
  Eigen::VectorXd v = gaussian_vector(rng, dim);
  while (v.norm() < 1e-12) v = gaussian_vector(rng, dim);
  return v / v.norm();
}

inline TextBank build_text_bank(std::uint64_t seed, int num_classes, int dim,
                                int prompt_count, double prompt_noise_sigma) {
  require_config(dim >= 2, "text bank dimension must be >= 2");
  require_config(num_classes >= 1, "text bank needs at least one class");
  require_config(prompt_count >= 1, "prompt_count must be >= 1");
  require_config(prompt_noise_sigma >= 0, "prompt_noise_sigma must be >= 0");
  Rng rng(seed);
  TextBank bank;
  bank.prompt_count = prompt_count;
  bank.class_names = default_class_names(num_classes);
  bank.embeddings.resize(num_classes, dim);
  bank.prototypes.resize(num_classes, dim);
  for (int c = 0; c < num_classes; ++c) {
    const Eigen::VectorXd proto = random_unit_vector(rng, dim);
    bank.prototypes.row(c) = proto.transpose();
    if (prompt_noise_sigma == 0.0) {
      bank.embeddings.row(c) = proto.transpose();
      continue;
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
    for (int p = 0; p < prompt_count; ++p) {
      Eigen::VectorXd variant = proto + prompt_noise_sigma * gaussian_vector(rng, dim);
      sum += variant / variant.norm();
    }
    const Eigen::VectorXd mean = sum / prompt_count;
    bank.embeddings.row(c) = (mean / mean.norm()).transpose();
  }
  return bank;
}

struct SceneConfig {
  std::uint64_t seed = 0;
  int num_classes = 4;
  int feature_dim = 16;
  int width = 64;
  int height = 64;
  int sweeps = 3;                 // K
  double window_seconds = 0.5;    // S
  double ego_translation = 0.6;   // metres between consecutive sweeps
  double ego_yaw = 0.01;          // radians between consecutive sweeps
  double feature_noise_sigma = 0.1;
  double label_noise_rate = 0.05;
  double calib_rot_error = 0.0;   // radians
  double calib_trans_error = 0.0; // metres

  std::uint64_t bank_seed = 0;
  int prompt_count = 8;
  double prompt_noise_sigma = 0.1;

  int points_per_class = 300; // per sweep
  int boxes_per_class = 1;
  double sensor_height = 4.0;
  double max_platform_height = 2.4;
  double scene_range = 14.0;  // forward ground extent in metres
  double camera_pitch = 0.45; // radians below the horizon
  double focal_scale = 0.7;   // focal length as a fraction of image width

  void validate() const {
    require_config(num_classes >= 2, "scene.classes must be >= 2");
    require_config(feature_dim >= 2, "scene.feature_dim must be >= 2");
    require_config(width > 0 && height > 0, "scene image size must be positive");
    require_config(sweeps >= 1, "scene.sweeps must be >= 1");
    require_config(window_seconds > 0, "scene.window must be positive");
    require_config(feature_noise_sigma >= 0, "feature noise must be >= 0");
    require_config(label_noise_rate >= 0 && label_noise_rate <= 1,
                   "scene.label_noise_rate must lie in [0,1]");
    require_config(calib_rot_error >= 0 && calib_trans_error >= 0,
                   "calibration error magnitudes must be >= 0");
    require_config(prompt_count >= 1 && prompt_count <= 85,
                   "scene.prompts must lie in [1,85]");
    require_config(points_per_class >= 1, "scene.points_per_class must be >= 1");
    require_config(boxes_per_class >= 1, "scene.boxes_per_class must be >= 1");
    require_config(scene_range >= 8.0, "scene.range must be >= 8");
    require_config(max_platform_height > 0 &&
                       max_platform_height < sensor_height,
                   "platforms must stay below the sensor");
    require_config(focal_scale > 0, "scene.focal_scale must be positive");
  }
};

/// One synthetic scene: a frozen image feature map with per-pixel classes,
/// K LiDAR sweeps with poses, calibration, and ground truth.
struct SceneBundle {
  CameraModel camera;
  RigidTransform cam_extrinsic; // frame-1 sensor -> camera
  std::vector<Sweep> sweeps;
  Eigen::MatrixXd pixel_features; // (H*W) x D, row index = row * W + col
  std::vector<int> pixel_class;   // H*W, -1 = unlabeled
  std::vector<std::vector<int>> point_class_gt; // parallel to sweeps
  std::vector<std::string> class_names;
  TextBank text_bank;

  int width() const { return camera.width; }
  int height() const { return camera.height; }
  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::size_t pixel_index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(camera.width) +
           static_cast<std::size_t>(col);
  }
  int class_at(int row, int col) const { return pixel_class[pixel_index(row, col)]; }
};

namespace detail {

// Horizontal axis-aligned rectangle at world height z.
struct Platform {
  double x0, x1, y0, y1, z;
  int cls;

  bool contains(double x, double y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
  double area() const { return (x1 - x0) * (y1 - y0); }
};

struct Layout {
  Platform ground;
  std::vector<Platform> boxes;

  bool on_ground(double x, double y) const {
    if (!ground.contains(x, y)) return false;
    for (const auto &b : boxes)
      if (b.contains(x, y)) return false;
    return true;
  }

  // Class of the first surface hit by a world-space ray, or -1.
  int cast(const Eigen::Vector3d &origin, const Eigen::Vector3d &dir) const {
    double best_t = std::numeric_limits<double>::infinity();
    int best = -1;
    if (std::abs(dir.z()) < 1e-15) return best;
    const double tg = (ground.z - origin.z()) / dir.z();
    if (tg > 0) {
      const Eigen::Vector3d hit = origin + tg * dir;
      if (on_ground(hit.x(), hit.y())) {
        best_t = tg;
        best = ground.cls;
      }
    }
    for (const auto &b : boxes) {
      const double t = (b.z - origin.z()) / dir.z();
      if (!(t > 0) || t >= best_t) continue;
      const Eigen::Vector3d hit = origin + t * dir;
      if (b.contains(hit.x(), hit.y())) {
        best_t = t;
        best = b.cls;
      }
    }
    return best;
  }
};

inline Layout make_layout(const SceneConfig &cfg, Rng &rng) {
  Layout layout;
  const double R = cfg.scene_range;
  layout.ground = {-0.15 * R, R, -0.5 * R, 0.5 * R, 0.0, 0};
  std::uniform_real_distribution<double> size(2.0, 3.5);
  std::uniform_real_distribution<double> depth(0.3 * R, 0.8 * R);
  std::uniform_real_distribution<double> lateral(-0.5, 0.5);
  const double margin = 1.0;
  for (int c = 1; c < cfg.num_classes; ++c) {
    const double z = cfg.max_platform_height * c / (cfg.num_classes - 1);
    for (int b = 0; b < cfg.boxes_per_class; ++b) {
      bool placed = false;
      for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
        const double sx = size(rng), sy = size(rng);
        const double x = depth(rng);
        const double y = lateral(rng) * x;
        Platform p{x - sx / 2, x + sx / 2, y - sy / 2, y + sy / 2, z, c};
        bool overlaps = false;
        for (const auto &o : layout.boxes)
          if (p.x0 < o.x1 + margin && o.x0 < p.x1 + margin &&
              p.y0 < o.y1 + margin && o.y0 < p.y1 + margin)
            overlaps = true;
        if (!overlaps) {
          layout.boxes.push_back(p);
          placed = true;
        }
      }
      require_config(placed, "could not place all platforms; reduce classes or boxes");
    }
  }
  return layout;
}

inline Eigen::Vector3d sample_on(const Platform &p, Rng &rng) {
  std::uniform_real_distribution<double> ux(p.x0, p.x1), uy(p.y0, p.y1);
  return {ux(rng), uy(rng), p.z};
}

// Camera at the given offset in the sensor frame, looking along +x and
// pitched down; camera axes are +X right, +Y down, +Z forward.
inline RigidTransform camera_extrinsic(double pitch, const Eigen::Vector3d &center) {
  const Eigen::Vector3d forward(std::cos(pitch), 0.0, -std::sin(pitch));
  const Eigen::Vector3d right(0.0, -1.0, 0.0);
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  return RigidTransform::from_rotation_translation(r, -r * center);
}

} // namespace detail

inline RigidTransform random_perturbation(double rot_eps, double trans_eps,
                                          std::uint64_t seed) {
  Rng rng(seed);
  const Eigen::Vector3d axis = random_unit_vector(rng, 3);
  const Eigen::Vector3d dir = random_unit_vector(rng, 3);
  const RigidTransform rot = RigidTransform::axis_angle(axis, rot_eps);
  const Eigen::Vector3d t = trans_eps * dir;
  return compose(RigidTransform::translate(t.x(), t.y(), t.z()), rot);
}

/// Perturbs the camera extrinsic by a random rigid motion with rotation angle
/// rot_eps and translation length trans_eps. Ground truth is untouched.
inline SceneBundle inject_calibration_error(const SceneBundle &scene, double rot_eps,
                                            double trans_eps, std::uint64_t seed) {
  require_config(rot_eps >= 0 && trans_eps >= 0, "calibration error must be >= 0");
  SceneBundle out = scene;
  if (rot_eps == 0.0 && trans_eps == 0.0) return out;
  out.cam_extrinsic =
      compose(random_perturbation(rot_eps, trans_eps, seed), scene.cam_extrinsic);
  return out;
}

inline SceneBundle generate_scene(const SceneConfig &cfg) {
  cfg.validate();
  const int C = cfg.num_classes;
  const int D = cfg.feature_dim;

  SceneBundle scene;
  scene.text_bank =
      build_text_bank(cfg.bank_seed, C, D, cfg.prompt_count, cfg.prompt_noise_sigma);
  scene.class_names = scene.text_bank.class_names;

  Rng layout_rng(derive_seed(cfg.seed, {1}));
  const detail::Layout layout = detail::make_layout(cfg, layout_rng);

  CameraModel &cam = scene.camera;
  cam.width = cfg.width;
  cam.height = cfg.height;
  cam.fx = cam.fy = cfg.focal_scale * cfg.width;
  cam.cx = (cfg.width - 1) / 2.0;
  cam.cy = (cfg.height - 1) / 2.0;
  cam.z_near = 0.1;
  const Eigen::Vector3d cam_center(0.3, 0.0, -0.2);
  scene.cam_extrinsic = detail::camera_extrinsic(cfg.camera_pitch, cam_center);

  // Sweep k is recorded (k-1) steps earlier, behind and slightly rotated.
  const double dt = cfg.window_seconds / cfg.sweeps;
  for (int k = 1; k <= cfg.sweeps; ++k) {
    Sweep s;
    s.id = k;
    s.timestamp = -(k - 1) * dt;
    s.sensor_to_world =
        compose(RigidTransform::translate(-(k - 1) * cfg.ego_translation, 0.0,
                                          cfg.sensor_height),
                RigidTransform::rotation_z(-(k - 1) * cfg.ego_yaw));
    scene.sweeps.push_back(std::move(s));
  }
  const RigidTransform &world_from_first = scene.sweeps.front().sensor_to_world;

  // Clean pixel classes from the true geometry.
  const int H = cfg.height, W = cfg.width;
  std::vector<int> clean(static_cast<std::size_t>(H) * W, -1);
  const RigidTransform cam_to_world =
      compose(world_from_first, invert(scene.cam_extrinsic));
  const Eigen::Matrix3d cam_rot = cam_to_world.rotation();
  const Eigen::Vector3d cam_origin = cam_to_world.translation();
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const Eigen::Vector3d ray((c - cam.cx) / cam.fx, (r - cam.cy) / cam.fy, 1.0);
      clean[scene.pixel_index(r, c)] = layout.cast(cam_origin, cam_rot * ray);
    }

  // LiDAR points on every class surface. Points whose frame-1 projection
  // lands on a pixel of another class are dropped: the rig captures only
  // surfaces consistent with the image.
  Rng point_rng(derive_seed(cfg.seed, {2}));
  const RigidTransform first_to_cam = scene.cam_extrinsic;
  const RigidTransform world_to_first = invert(world_from_first);
  std::vector<double> class_area(static_cast<std::size_t>(C), 0.0);
  for (const auto &b : layout.boxes) class_area[static_cast<std::size_t>(b.cls)] += b.area();

  for (auto &sweep : scene.sweeps) {
    const RigidTransform world_to_sensor = invert(sweep.sensor_to_world);
    std::vector<Eigen::Vector3d> pts;
    std::vector<int> labels;
    auto keep = [&](const Eigen::Vector3d &world, int cls) {
      const Eigen::Vector3d cam_p = first_to_cam.apply(world_to_first.apply(world));
      if (auto px = project_point(cam, cam_p)) {
        const int pc = clean[scene.pixel_index(px->row(), px->col())];
        if (pc != -1 && pc != cls) return;
      }
      pts.push_back(world_to_sensor.apply(world));
      labels.push_back(cls);
    };
    for (int i = 0; i < cfg.points_per_class; ++i) {
      Eigen::Vector3d p = detail::sample_on(layout.ground, point_rng);
      while (!layout.on_ground(p.x(), p.y())) p = detail::sample_on(layout.ground, point_rng);
      keep(p, 0);
    }
    for (int c = 1; c < C; ++c) {
      std::vector<const detail::Platform *> mine;
      std::vector<double> weights;
      for (const auto &b : layout.boxes)
        if (b.cls == c) {
          mine.push_back(&b);
          weights.push_back(b.area());
        }
      std::discrete_distribution<int> pick(weights.begin(), weights.end());
      for (int i = 0; i < cfg.points_per_class; ++i) {
        const detail::Platform &b = *mine[static_cast<std::size_t>(pick(point_rng))];
        keep(detail::sample_on(b, point_rng), c);
      }
    }
    sweep.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
    for (std::size_t i = 0; i < pts.size(); ++i)
      sweep.points.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
    scene.point_class_gt.push_back(std::move(labels));
  }

  // Label noise: a labeled pixel is reassigned to a uniformly chosen wrong
  // class with probability label_noise_rate.
  scene.pixel_class = clean;
  Rng noise_rng(derive_seed(cfg.seed, {3}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> other(1, C - 1);
  for (auto &pc : scene.pixel_class) {
    if (pc < 0) continue;
    const double u = unit(noise_rng);
    const int shift = other(noise_rng);
    if (u < cfg.label_noise_rate) pc = (pc + shift) % C;
  }

  // Pixel features follow the (possibly noisy) pixel class.
  Rng feat_rng(derive_seed(cfg.seed, {4}));
  scene.pixel_features.resize(static_cast<Eigen::Index>(H) * W, D);
  for (std::size_t i = 0; i < scene.pixel_class.size(); ++i) {
    const int pc = scene.pixel_class[i];
    const auto row = static_cast<Eigen::Index>(i);
    if (pc >= 0 && cfg.feature_noise_sigma == 0.0) {
      scene.pixel_features.row(row) = scene.text_bank.embeddings.row(pc);
      continue;
    }
    Eigen::VectorXd f = gaussian_vector(feat_rng, D);
    if (pc >= 0) f = scene.text_bank.embeddings.row(pc).transpose() + cfg.feature_noise_sigma * f;
    while (f.norm() < 1e-12) f = gaussian_vector(feat_rng, D);
    scene.pixel_features.row(row) = (f / f.norm()).transpose();
  }

  return inject_calibration_error(scene, cfg.calib_rot_error, cfg.calib_trans_error,
                                  derive_seed(cfg.seed, {5}));
}

/// Generates `count` scenes with seeds base.seed, base.seed + 1, ...
inline std::vector<SceneBundle> generate_scenes(const SceneConfig &base, int count) {
  std::vector<SceneBundle> scenes;
  scenes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    SceneConfig cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(i);
    scenes.push_back(generate_scene(cfg));
  }
  return scenes;
}

} // namespace clip2scene
