#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clip2scene/error.hpp"
#include "clip2scene/geom.hpp"
#include "clip2scene/losses.hpp"
#include "clip2scene/model.hpp"
#include "clip2scene/pairs.hpp"
#include "clip2scene/parallel.hpp"
#include "clip2scene/rng.hpp"
#include "clip2scene/synth.hpp"

namespace clip2scene {

struct AugmentConfig {
  double rotation_range = std::numbers::pi; // yaw drawn from [-range, range]
  bool flip_x = true;
  bool flip_y = true;
  bool flip_z = false;
};

/// Random yaw rotation followed by independent per-axis flips, each with
/// probability 1/2. Deterministic in seed.
inline PointCloud augment_points(const PointCloud &points, const AugmentConfig &aug,
                                 std::uint64_t seed) {
  Rng rng(seed);
  PointCloud out = points;
  if (aug.rotation_range > 0) {
    std::uniform_real_distribution<double> yaw(-aug.rotation_range, aug.rotation_range);
    out = transform_points(RigidTransform::rotation_z(yaw(rng)), out);
  }
  std::bernoulli_distribution coin(0.5);
  const bool flips[3] = {aug.flip_x, aug.flip_y, aug.flip_z};
  for (int axis = 0; axis < 3; ++axis)
    if (flips[axis] && coin(rng)) out.col(axis) = -out.col(axis);
  return out;
}

struct SwitchConfig {
  int switch_epoch = 10;
  double switch_prob = 0.5;
  bool per_entry = true; // false: one draw per epoch for all entries
};

/// Switchable self-training. Before switch_epoch every label keeps its pixel
/// source. From switch_epoch on, each labeled entry independently takes the
/// model prediction with probability switch_prob. Unlabeled entries (-1)
/// are left alone. Deterministic in (seed, epoch, entry index).
inline PointTextLabels switch_labels(const PointTextLabels &labels,
                                     const std::vector<int> &predictions, int epoch,
                                     const SwitchConfig &cfg, std::uint64_t seed) {
  require_valid(predictions.size() == labels.size(),
                "switch_labels: prediction count mismatch");
  PointTextLabels out = labels;
  std::fill(out.source.begin(), out.source.end(), LabelSource::Pixel);
  if (epoch < cfg.switch_epoch) return out;
  const auto e = static_cast<std::uint64_t>(epoch);
  const bool global = hash_uniform(derive_seed(seed, {e})) < cfg.switch_prob;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.labels[i] < 0) continue;
    const bool take = cfg.per_entry ? hash_uniform(derive_seed(seed, {e, i})) < cfg.switch_prob
                                    : global;
    if (take) {
      out.labels[i] = predictions[i];
      out.source[i] = LabelSource::Self;
    }
  }
  return out;
}

/// Highest-scoring class per row of `feats` against the bank; ties go to the
/// lowest class index.
inline std::vector<int> argmax_classes(const Eigen::MatrixXd &feats,
                                       const Eigen::MatrixXd &bank) {
  const Eigen::MatrixXd scores = feats * bank.transpose();
  std::vector<int> out(static_cast<std::size_t>(scores.rows()), 0);
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(i, c) > scores(i, best)) best = static_cast<int>(c);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

struct TrainConfig {
  int epochs = 20;
  SwitchConfig switching;
  double w_s = 1.0;
  double w_t = 1.0;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  LossConfig loss;
  int hidden = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double cell_size = 1.0;
  bool scr_all_sweeps = false; // semantic loss over every sweep, not just sweep 1
  std::size_t max_pairs = 4096; // 0 = no cap

  void validate() const {
    require_config(epochs >= 0, "train.epochs must be >= 0");
    require_config(switching.switch_prob >= 0 && switching.switch_prob <= 1,
                   "train.switch_prob must lie in [0,1]");
    require_config(switching.switch_epoch <= epochs, "train.switch_epoch must be <= epochs");
    require_config(cell_size > 0, "train.cell_size must be positive");
    require_config(lr >= 0 && momentum >= 0, "train.lr and momentum must be >= 0");
    loss.validate();
  }
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double loss_s = 0.0;
  double loss_t = 0.0;
  double self_frac = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

struct PretrainResult {
  EncoderParams params;
  TrainLog log;
};

/// Per-scene training inputs computed once, before any augmentation.
struct PreparedScene {
  CorrespondenceSet pairs;
  PointTextLabels pixel_labels;
  Eigen::MatrixXd pixel_feats; // one row per pair
  GridPartition grid;
  std::vector<std::size_t> scr_rows; // pairs used by the semantic loss
};

inline CorrespondenceSet subsample_pairs(const CorrespondenceSet &cs, std::size_t cap,
                                         std::uint64_t seed) {
  if (cap == 0 || cs.size() <= cap) return cs;
  std::vector<std::size_t> idx(cs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  CorrespondenceSet out;
  out.points.resize(static_cast<Eigen::Index>(cap), 3);
  for (std::size_t j = 0; j < cap; ++j) {
    out.entries.push_back(cs.entries[idx[j]]);
    out.points.row(static_cast<Eigen::Index>(j)) = cs.points.row(static_cast<Eigen::Index>(idx[j]));
    if (cs.entries[idx[j]].ref.sweep_id == 1) ++out.first_sweep_count;
  }
  return out;
}

inline PreparedScene prepare_scene(const SceneBundle &scene, const TrainConfig &cfg,
                                   std::uint64_t seed) {
  PreparedScene p;
  p.pairs = subsample_pairs(build_correspondences(scene), cfg.max_pairs, seed);
  p.pixel_labels = lift_point_text(p.pairs, scene);
  p.pixel_feats.resize(static_cast<Eigen::Index>(p.pairs.size()), scene.pixel_features.cols());
  std::vector<PointRef> refs;
  for (std::size_t i = 0; i < p.pairs.size(); ++i) {
    const auto &e = p.pairs.entries[i];
    p.pixel_feats.row(static_cast<Eigen::Index>(i)) = scene.pixel_features.row(
        static_cast<Eigen::Index>(scene.pixel_index(e.pixel_row, e.pixel_col)));
    refs.push_back(e.ref);
    if (cfg.scr_all_sweeps || e.ref.sweep_id == 1) p.scr_rows.push_back(i);
  }
  p.grid = partition_grid(p.pairs.points, refs, cfg.cell_size);
  return p;
}

struct StepLosses {
  double loss_s = 0.0;
  double loss_t = 0.0;
  std::size_t self_count = 0;
  std::size_t labeled_count = 0;
};

/// One optimisation step on one scene.
inline StepLosses train_step(EncoderParams &params, OptimState &opt, const PreparedScene &ps,
                             const Eigen::MatrixXd &bank, const TrainConfig &cfg, int epoch,
                             std::uint64_t aug_seed, std::uint64_t switch_seed) {
  StepLosses out;
  const Eigen::Index M = static_cast<Eigen::Index>(ps.pairs.size());
  const Eigen::Index D = bank.cols();
  const PointCloud input = augment_points(ps.pairs.points, cfg.augment, aug_seed);
  const ForwardResult fw = forward(params, input);

  const PointTextLabels labels = switch_labels(
      ps.pixel_labels, argmax_classes(fw.feats_s, bank), epoch, cfg.switching, switch_seed);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels.labels[i] < 0) continue;
    ++out.labeled_count;
    if (labels.source[i] == LabelSource::Self) ++out.self_count;
  }

  Eigen::MatrixXd grad_s = Eigen::MatrixXd::Zero(M, D);
  Eigen::MatrixXd grad_t = Eigen::MatrixXd::Zero(M, D);

  // Semantic consistency on head S.
  {
    Eigen::MatrixXd feats(static_cast<Eigen::Index>(ps.scr_rows.size()), D);
    std::vector<int> sub_labels;
    for (std::size_t j = 0; j < ps.scr_rows.size(); ++j) {
      feats.row(static_cast<Eigen::Index>(j)) = fw.feats_s.row(static_cast<Eigen::Index>(ps.scr_rows[j]));
      sub_labels.push_back(labels.labels[ps.scr_rows[j]]);
    }
    const LossReport rep = semantic_infonce(feats, bank, sub_labels, cfg.loss);
    out.loss_s = rep.value;
    for (std::size_t j = 0; j < ps.scr_rows.size(); ++j)
      grad_s.row(static_cast<Eigen::Index>(ps.scr_rows[j])) =
          cfg.w_s * rep.grad.row(static_cast<Eigen::Index>(j));
  }

  // Spatial-temporal consistency on head T.
  if (out.labeled_count > 0) {
    Eigen::MatrixXd text = Eigen::MatrixXd::Zero(M, D);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels.labels[i] >= 0) text.row(static_cast<Eigen::Index>(i)) = bank.row(labels.labels[i]);
    const LossReport rep =
        stcr_objective(ps.grid, ps.pixel_feats, fw.feats_t, text, labels.labels, cfg.loss);
    out.loss_t = rep.value;
    grad_t = cfg.w_t * rep.grad;
  }

  const EncoderParams grads = backward(params, fw.cache, grad_s, grad_t);
  sgd_step(params, grads, opt);
  return out;
}

/// End-to-end pre-training. Each scene is one batch; pixel features and the
/// text bank are read-only throughout.
inline PretrainResult pretrain(const TrainConfig &cfg, const std::vector<SceneBundle> &scenes) {
  cfg.validate();
  require_config(!scenes.empty(), "pretrain needs at least one scene");
  const Eigen::MatrixXd &bank = scenes.front().text_bank.embeddings;
  for (const auto &s : scenes)
    require_config(s.text_bank.embeddings.rows() == bank.rows() &&
                       s.text_bank.embeddings.cols() == bank.cols() &&
                       s.pixel_features.cols() == bank.cols(),
                   "all scenes must share one text bank shape");

  std::vector<PreparedScene> prepared(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t s) {
    prepared[s] = prepare_scene(scenes[s], cfg, derive_seed(cfg.seed, {s, 0}));
  });

  PretrainResult result;
  result.params = init_encoder(cfg.hidden, static_cast<int>(bank.cols()), cfg.seed);
  OptimState opt;
  opt.base_lr = cfg.lr;
  opt.momentum = cfg.momentum;
  opt.total_steps = static_cast<long>(cfg.epochs) * static_cast<long>(scenes.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = opt.lr();
    std::size_t self = 0, labeled = 0;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const auto e = static_cast<std::uint64_t>(epoch);
      const StepLosses step = train_step(result.params, opt, prepared[s], bank, cfg, epoch,
                                         derive_seed(cfg.seed, {s, 1, e}),
                                         derive_seed(cfg.seed, {s, 2}));
      rec.loss_s += step.loss_s;
      rec.loss_t += step.loss_t;
      self += step.self_count;
      labeled += step.labeled_count;
    }
    const double n = static_cast<double>(scenes.size());
    rec.loss_s /= n;
    rec.loss_t /= n;
    rec.loss = cfg.w_s * rec.loss_s + cfg.w_t * rec.loss_t;
    rec.self_frac = labeled ? static_cast<double>(self) / static_cast<double>(labeled) : 0.0;
    result.log.epochs.push_back(rec);
  }
  return result;
}

// train_log.csv: epoch,loss,loss_s,loss_t,self_frac,lr
inline void write_train_log(const std::string &path, const TrainLog &log) {
  std::ofstream out(path);
  require_valid(static_cast<bool>(out), "cannot write " + path);
  out << "epoch,loss,loss_s,loss_t,self_frac,lr\n";
  out.precision(17);
  for (const auto &r : log.epochs)
    out << r.epoch << ',' << r.loss << ',' << r.loss_s << ',' << r.loss_t << ','
        << r.self_frac << ',' << r.lr << '\n';
}

} // namespace clip2scene
