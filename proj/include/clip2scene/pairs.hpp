#pragma once

#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clip2scene/error.hpp"
#include "clip2scene/geom.hpp"
#include "clip2scene/synth.hpp"

namespace clip2scene {

struct Correspondence {
  int pixel_row = 0;
  int pixel_col = 0;
  PointRef ref;
};

/// Dense pixel <-> point pairs over all registered sweeps, in canonical
/// sweep-major, point-index-minor order. `points` holds the frame-1
/// coordinates of each paired point, row-aligned with `entries`.
struct CorrespondenceSet {
  std::vector<Correspondence> entries;
  PointCloud points;
  std::size_t first_sweep_count = 0; // M1

  std::size_t size() const { return entries.size(); }
};

inline CorrespondenceSet build_correspondences(const SceneBundle &scene) {
  const StitchedCloud cloud = register_sweeps(scene.sweeps);
  CorrespondenceSet cs;
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
    const Eigen::Vector3d p = cloud.points.row(i).transpose();
    const auto px = project_point(scene.camera, scene.cam_extrinsic.apply(p));
    if (!px) continue;
    const PointRef ref = cloud.refs[static_cast<std::size_t>(i)];
    cs.entries.push_back({px->row(), px->col(), ref});
    if (ref.sweep_id == 1) ++cs.first_sweep_count;
    kept.push_back(i);
  }
  cs.points.resize(static_cast<Eigen::Index>(kept.size()), 3);
  for (std::size_t j = 0; j < kept.size(); ++j)
    cs.points.row(static_cast<Eigen::Index>(j)) = cloud.points.row(kept[j]);
  return cs;
}

enum class LabelSource { Pixel, Self };

/// Point pseudo-labels with their provenance. -1 marks an entry whose pixel
/// is unlabeled; such entries never enter a loss.
struct PointTextLabels {
  std::vector<int> labels;
  std::vector<LabelSource> source;

  std::size_t size() const { return labels.size(); }
  std::size_t labeled_count() const {
    std::size_t n = 0;
    for (int l : labels) n += l >= 0 ? 1 : 0;
    return n;
  }
  std::size_t unlabeled_count() const { return size() - labeled_count(); }
};

inline PointTextLabels lift_point_text(const CorrespondenceSet &cs,
                                       const std::vector<int> &pixel_class,
                                       int width) {
  PointTextLabels out;
  out.labels.reserve(cs.size());
  out.source.assign(cs.size(), LabelSource::Pixel);
  for (const auto &e : cs.entries) {
    const std::size_t idx =
        static_cast<std::size_t>(e.pixel_row) * static_cast<std::size_t>(width) +
        static_cast<std::size_t>(e.pixel_col);
    require_valid(idx < pixel_class.size(), "lift_point_text: pixel out of range");
    out.labels.push_back(pixel_class[idx]);
  }
  return out;
}

inline PointTextLabels lift_point_text(const CorrespondenceSet &cs,
                                       const SceneBundle &scene) {
  return lift_point_text(cs, scene.pixel_class, scene.width());
}

// Ground-truth class of every paired point.
inline std::vector<int> entry_ground_truth(const CorrespondenceSet &cs,
                                           const SceneBundle &scene) {
  std::vector<int> gt;
  gt.reserve(cs.size());
  for (const auto &e : cs.entries) {
    for (std::size_t s = 0; s < scene.sweeps.size(); ++s)
      if (scene.sweeps[s].id == e.ref.sweep_id) {
        gt.push_back(scene.point_class_gt[s][e.ref.point_index]);
        break;
      }
  }
  return gt;
}

/// Per-class positive and negative entry indices, both ascending.
struct ContrastiveSets {
  std::vector<std::vector<std::size_t>> positives;
  std::vector<std::vector<std::size_t>> negatives;
};

inline ContrastiveSets select_contrastive_sets(const std::vector<int> &labels,
                                               int num_classes) {
  ContrastiveSets sets;
  sets.positives.resize(static_cast<std::size_t>(num_classes));
  sets.negatives.resize(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0) continue;
    require_valid(l < num_classes, "label exceeds class count");
    for (int c = 0; c < num_classes; ++c)
      (c == l ? sets.positives : sets.negatives)[static_cast<std::size_t>(c)].push_back(i);
  }
  return sets;
}

inline ContrastiveSets select_contrastive_sets(const PointTextLabels &labels,
                                               int num_classes) {
  return select_contrastive_sets(labels.labels, num_classes);
}

// pairs.csv: pixel_row,pixel_col,sweep,point,label
inline void write_pairs_csv(const std::string &path, const CorrespondenceSet &cs,
                            const PointTextLabels &labels) {
  require_valid(labels.size() == cs.size(), "write_pairs_csv: label count mismatch");
  std::ofstream out(path);
  require_valid(static_cast<bool>(out), "cannot open " + path);
  out << "pixel_row,pixel_col,sweep,point,label\n";
  for (std::size_t i = 0; i < cs.size(); ++i) {
    const auto &e = cs.entries[i];
    out << e.pixel_row << ',' << e.pixel_col << ',' << e.ref.sweep_id << ','
        << e.ref.point_index << ',' << labels.labels[i] << '\n';
  }
}

} // namespace clip2scene
