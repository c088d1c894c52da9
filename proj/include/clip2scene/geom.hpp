#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clip2scene/error.hpp"

namespace clip2scene {

// N x 3, one point per row.
using PointCloud = Eigen::MatrixX3d;

/// SE(3) pose as a 4x4 homogeneous matrix. Construction through the factory
/// functions guarantees an orthonormal, right-handed rotation block and an
/// exact (0,0,0,1) bottom row.
class RigidTransform {
public:
  RigidTransform() : m_(Eigen::Matrix4d::Identity()) {}

  static RigidTransform identity() { return {}; }

  static RigidTransform from_rotation_translation(const Eigen::Matrix3d &r,
                                                  const Eigen::Vector3d &t) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = r;
    m.topRightCorner<3, 1>() = t;
    return from_matrix(m);
  }

  // Throws ValidationError when the matrix is not a rigid transform.
  static RigidTransform from_matrix(const Eigen::Matrix4d &m) {
    require_valid(is_rigid(m), "matrix is not a valid rigid transform");
    RigidTransform out;
    out.m_ = m;
    return out;
  }

  static RigidTransform translate(double x, double y, double z) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(0, 3) = x;
    m(1, 3) = y;
    m(2, 3) = z;
    return unchecked(m);
  }

  static RigidTransform rotation_z(double angle) {
    return axis_angle(Eigen::Vector3d::UnitZ(), angle);
  }

  static RigidTransform axis_angle(const Eigen::Vector3d &axis, double angle) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() =
        Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
    return unchecked(m);
  }

  static bool is_rigid(const Eigen::Matrix4d &m, double tol = 1e-9) {
    if (!m.allFinite()) return false;
    if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0)
      return false;
    const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
    const double ortho =
        (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
  }

  const Eigen::Matrix4d &matrix() const { return m_; }
  Eigen::Matrix3d rotation() const { return m_.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return m_.topRightCorner<3, 1>(); }

  Eigen::Vector3d apply(const Eigen::Vector3d &p) const {
    return m_.topLeftCorner<3, 3>() * p + m_.topRightCorner<3, 1>();
  }

  // Row-major 16 numbers.
  std::array<double, 16> to_array() const {
    std::array<double, 16> a{};
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) a[r * 4 + c] = m_(r, c);
    return a;
  }

  static RigidTransform from_array(const std::array<double, 16> &a) {
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) = a[r * 4 + c];
    return from_matrix(m);
  }

  friend bool operator==(const RigidTransform &a, const RigidTransform &b) {
    return a.m_ == b.m_;
  }

private:
  static RigidTransform unchecked(const Eigen::Matrix4d &m) {
    RigidTransform out;
    out.m_ = m;
    return out;
  }

  friend RigidTransform compose(const RigidTransform &, const RigidTransform &);
  friend RigidTransform invert(const RigidTransform &);

  Eigen::Matrix4d m_;
};

/// a * b: apply b first, then a.
inline RigidTransform compose(const RigidTransform &a, const RigidTransform &b) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = a.m_.topLeftCorner<3, 3>() * b.m_.topLeftCorner<3, 3>();
  m.topRightCorner<3, 1>() =
      a.m_.topLeftCorner<3, 3>() * b.m_.topRightCorner<3, 1>() +
      a.m_.topRightCorner<3, 1>();
  return RigidTransform::unchecked(m);
}

inline RigidTransform invert(const RigidTransform &t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  const Eigen::Matrix3d rt = t.m_.topLeftCorner<3, 3>().transpose();
  m.topLeftCorner<3, 3>() = rt;
  m.topRightCorner<3, 1>() = -rt * t.m_.topRightCorner<3, 1>();
  return RigidTransform::unchecked(m);
}

inline PointCloud transform_points(const RigidTransform &t, const PointCloud &pts) {
  const Eigen::Matrix3d r = t.rotation();
  const Eigen::RowVector3d tr = t.translation().transpose();
  PointCloud out = pts * r.transpose();
  out.rowwise() += tr;
  return out;
}

/// Pinhole intrinsics. Camera frame is +Z forward, +X right, +Y down.
struct CameraModel {
  double fx = 45.0;
  double fy = 45.0;
  double cx = 31.5;
  double cy = 31.5;
  int width = 64;
  int height = 64;
  double z_near = 0.1;

  void validate() const {
    require_config(fx > 0 && fy > 0, "camera focal lengths must be positive");
    require_config(width > 0 && height > 0, "camera size must be positive");
    require_config(cx >= 0 && cx < width && cy >= 0 && cy < height,
                   "principal point must lie inside the image");
    require_config(z_near > 0, "camera z_near must be positive");
  }
};

struct Pixel {
  double u = 0.0;
  double v = 0.0;

  // Nearest-integer pixel indices.
  int col() const { return static_cast<int>(std::lround(u)); }
  int row() const { return static_cast<int>(std::lround(v)); }
};

inline std::optional<Pixel> project_point(const CameraModel &cam,
                                          const Eigen::Vector3d &p_cam) {
  const double z = p_cam.z();
  if (!(z > cam.z_near)) return std::nullopt;
  Pixel px{cam.fx * p_cam.x() / z + cam.cx, cam.fy * p_cam.y() / z + cam.cy};
  const long c = std::lround(px.u);
  const long r = std::lround(px.v);
  if (c < 0 || c >= cam.width || r < 0 || r >= cam.height) return std::nullopt;
  return px;
}

/// One LiDAR scan. Sweep 1 is the scan matched to the image.
struct Sweep {
  int id = 1;
  double timestamp = 0.0;
  PointCloud points;
  RigidTransform sensor_to_world;
};

struct PointRef {
  int sweep_id = 1;
  std::size_t point_index = 0;

  friend bool operator==(const PointRef &, const PointRef &) = default;
  friend auto operator<=>(const PointRef &, const PointRef &) = default;
};

/// All sweeps expressed in the frame-1 sensor coordinates, sweep-major in
/// ascending sweep id.
struct StitchedCloud {
  PointCloud points;
  std::vector<PointRef> refs;
};

// Transform mapping sweep k sensor coordinates into frame-1 sensor
// coordinates: invert(T_1) * T_k.
inline RigidTransform to_first_frame(const Sweep &first, const Sweep &sweep) {
  return compose(invert(first.sensor_to_world), sweep.sensor_to_world);
}

inline const Sweep &find_sweep(const std::vector<Sweep> &sweeps, int id) {
  for (const auto &s : sweeps)
    if (s.id == id) return s;
  throw ConfigError("sweep " + std::to_string(id) + " not present");
}

inline std::vector<const Sweep *> sweeps_by_id(const std::vector<Sweep> &sweeps) {
  std::vector<const Sweep *> order;
  order.reserve(sweeps.size());
  for (const auto &s : sweeps) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(),
                   [](const Sweep *a, const Sweep *b) { return a->id < b->id; });
  return order;
}

inline StitchedCloud register_sweeps(const std::vector<Sweep> &sweeps) {
  const Sweep &first = find_sweep(sweeps, 1);
  StitchedCloud out;
  Eigen::Index total = 0;
  for (const auto &s : sweeps) total += s.points.rows();
  out.points.resize(total, 3);
  out.refs.reserve(static_cast<std::size_t>(total));
  Eigen::Index offset = 0;
  for (const Sweep *s : sweeps_by_id(sweeps)) {
    const Eigen::Index n = s->points.rows();
    if (s->id == 1)
      out.points.middleRows(offset, n) = s->points;
    else
      out.points.middleRows(offset, n) =
          transform_points(to_first_frame(first, *s), s->points);
    for (Eigen::Index i = 0; i < n; ++i)
      out.refs.push_back({s->id, static_cast<std::size_t>(i)});
    offset += n;
  }
  return out;
}

using CellIndex = std::array<std::int64_t, 3>;

struct GridMember {
  std::size_t index = 0; // row in the partitioned point array
  PointRef ref;
};

/// Regular voxel partition. Cells are ordered by index so iteration is
/// deterministic; only non-empty cells are stored.
struct GridPartition {
  double cell_size = 1.0;
  std::map<CellIndex, std::vector<GridMember>> cells;

  std::size_t cell_count() const { return cells.size(); }
  std::size_t member_count() const {
    std::size_t n = 0;
    for (const auto &[idx, members] : cells) n += members.size();
    return n;
  }
};

inline CellIndex cell_of(const Eigen::Vector3d &p, double cell_size) {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell_size)),
          static_cast<std::int64_t>(std::floor(p.y() / cell_size)),
          static_cast<std::int64_t>(std::floor(p.z() / cell_size))};
}

inline GridPartition partition_grid(const PointCloud &points,
                                    const std::vector<PointRef> &refs,
                                    double cell_size) {
  require_config(cell_size > 0, "grid cell_size must be positive");
  require_valid(refs.size() == static_cast<std::size_t>(points.rows()),
                "partition_grid: provenance size mismatch");
  GridPartition grid;
  grid.cell_size = cell_size;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::Vector3d p = points.row(i).transpose();
    grid.cells[cell_of(p, cell_size)].push_back(
        {static_cast<std::size_t>(i), refs[static_cast<std::size_t>(i)]});
  }
  return grid;
}

inline GridPartition partition_grid(const StitchedCloud &cloud, double cell_size) {
  return partition_grid(cloud.points, cloud.refs, cell_size);
}

} // namespace clip2scene
