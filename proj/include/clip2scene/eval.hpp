#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "clip2scene/error.hpp"
#include "clip2scene/model.hpp"
#include "clip2scene/rng.hpp"
#include "clip2scene/synth.hpp"
#include "clip2scene/trainer.hpp"

namespace clip2scene {

/// Zero-shot prediction: argmax_c <head_S(point), t_c>, lowest index on ties.
inline std::vector<int> predict_zero_shot(const EncoderParams &params,
                                          const Eigen::MatrixXd &points,
                                          const TextBank &bank) {
  return argmax_classes(forward(params, points).feats_s, bank.embeddings);
}

/// Rows are ground truth, columns predictions.
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(int num_classes)
      : classes_(num_classes),
        counts_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0) {}

  void add(int gt, int pred) {
    require_valid(gt >= 0 && gt < classes_ && pred >= 0 && pred < classes_,
                  "confusion matrix: class id out of range");
    ++counts_[index(gt, pred)];
  }

  long at(int gt, int pred) const { return counts_[index(gt, pred)]; }
  int num_classes() const { return classes_; }
  long total() const { return std::accumulate(counts_.begin(), counts_.end(), 0L); }

  long true_positives(int c) const { return at(c, c); }
  long gt_count(int c) const {
    long n = 0;
    for (int p = 0; p < classes_; ++p) n += at(c, p);
    return n;
  }
  long pred_count(int c) const {
    long n = 0;
    for (int g = 0; g < classes_; ++g) n += at(g, c);
    return n;
  }

private:
  std::size_t index(int gt, int pred) const {
    return static_cast<std::size_t>(gt) * static_cast<std::size_t>(classes_) +
           static_cast<std::size_t>(pred);
  }

  int classes_;
  std::vector<long> counts_;
};

enum class MeanConvention {
  GroundTruthPresent, // average over classes that occur in the ground truth
  UnionNonEmpty,      // average over classes predicted or present
};

struct EvalReport {
  std::vector<double> iou;       // per class; 0 where undefined
  std::vector<bool> in_mean;     // classes averaged into miou
  std::vector<long> gt_counts;
  std::vector<long> pred_counts;
  double miou = 0.0;
  std::size_t points = 0;
  std::vector<bool> correct;     // per point
};

inline EvalReport miou(const std::vector<int> &preds, const std::vector<int> &gts,
                       int num_classes,
                       MeanConvention convention = MeanConvention::GroundTruthPresent) {
  require_valid(preds.size() == gts.size(), "miou: prediction/ground-truth length mismatch");
  ConfusionMatrix cm(num_classes);
  EvalReport rep;
  rep.points = preds.size();
  rep.correct.resize(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    cm.add(gts[i], preds[i]);
    rep.correct[i] = gts[i] == preds[i];
  }
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < num_classes; ++c) {
    const long tp = cm.true_positives(c);
    const long gt = cm.gt_count(c);
    const long pr = cm.pred_count(c);
    const long uni = gt + pr - tp; // TP + FP + FN
    const double iou = uni > 0 ? static_cast<double>(tp) / static_cast<double>(uni) : 0.0;
    const bool include =
        convention == MeanConvention::GroundTruthPresent ? gt > 0 : uni > 0;
    rep.iou.push_back(iou);
    rep.in_mean.push_back(include);
    rep.gt_counts.push_back(gt);
    rep.pred_counts.push_back(pr);
    if (include) {
      sum += iou;
      ++used;
    }
  }
  rep.miou = used ? sum / used : 0.0;
  return rep;
}

/// Sweep-1 points of every scene with their ground-truth labels.
struct LabeledPoints {
  Eigen::MatrixXd points;
  std::vector<int> labels;
};

inline LabeledPoints first_sweep_points(const std::vector<SceneBundle> &scenes) {
  LabeledPoints out;
  Eigen::Index total = 0;
  for (const auto &s : scenes) total += find_sweep(s.sweeps, 1).points.rows();
  out.points.resize(total, 3);
  Eigen::Index offset = 0;
  for (const auto &s : scenes) {
    for (std::size_t k = 0; k < s.sweeps.size(); ++k) {
      if (s.sweeps[k].id != 1) continue;
      const auto n = s.sweeps[k].points.rows();
      out.points.middleRows(offset, n) = s.sweeps[k].points;
      out.labels.insert(out.labels.end(), s.point_class_gt[k].begin(), s.point_class_gt[k].end());
      offset += n;
    }
  }
  return out;
}

inline EvalReport evaluate_zero_shot(const EncoderParams &params,
                                     const std::vector<SceneBundle> &scenes,
                                     MeanConvention convention = MeanConvention::GroundTruthPresent) {
  require_valid(!scenes.empty(), "evaluation needs at least one scene");
  const LabeledPoints data = first_sweep_points(scenes);
  const auto preds = predict_zero_shot(params, data.points, scenes.front().text_bank);
  return miou(preds, data.labels, scenes.front().num_classes(), convention);
}

struct ProbeConfig {
  double fraction = 0.01;
  int epochs = 100;
  double lr = 0.03;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  MeanConvention convention = MeanConvention::GroundTruthPresent;
};

struct ProbeResult {
  EvalReport train; // all training points, labeled or not
  EvalReport eval;  // held-out scenes
  std::vector<std::size_t> selected; // indices of the labeled training points
};

// Backbone blocks followed by a linear classifier H -> C.
struct ProbeModel {
  ParamBlocks blocks; // W1, B1, W2, B2, CW, CB
  static constexpr std::size_t CW = 4, CB = 5;
};

inline ProbeModel make_probe_model(const EncoderParams &params, int num_classes,
                                   std::uint64_t seed) {
  ProbeModel m;
  for (std::size_t b = 0; b < 4; ++b) m.blocks.push_back(params.blocks[b]);
  Rng rng(seed);
  const double bound = std::sqrt(3.0 / params.hidden);
  m.blocks.push_back(uniform_matrix(rng, num_classes, params.hidden, bound));
  m.blocks.push_back(Eigen::MatrixXd::Zero(num_classes, 1));
  return m;
}

inline Eigen::MatrixXd probe_logits(const ProbeModel &m, const BackboneCache &cache) {
  Eigen::MatrixXd logits = cache.act2 * m.blocks[ProbeModel::CW].transpose();
  logits.rowwise() += m.blocks[ProbeModel::CB].col(0).transpose();
  return logits;
}

inline std::vector<int> probe_predict(const ProbeModel &m, const Eigen::MatrixXd &points) {
  const Eigen::MatrixXd logits = probe_logits(m, backbone_forward(m.blocks, points));
  std::vector<int> out(static_cast<std::size_t>(logits.rows()), 0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = static_cast<int>(c);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

// Mean softmax cross-entropy and its parameter gradients.
inline double probe_loss_and_grads(const ProbeModel &m, const Eigen::MatrixXd &points,
                                   const std::vector<int> &labels, ParamBlocks &grads) {
  const BackboneCache cache = backbone_forward(m.blocks, points);
  const Eigen::MatrixXd logits = probe_logits(m, cache);
  const auto n = static_cast<double>(points.rows());
  Eigen::MatrixXd dlogits(logits.rows(), logits.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    const double z = e.sum();
    const int y = labels[static_cast<std::size_t>(i)];
    loss -= logits(i, y) - mx - std::log(z);
    dlogits.row(i) = e / z;
    dlogits(i, y) -= 1.0;
  }
  dlogits /= n;
  grads.assign(m.blocks.size(), Eigen::MatrixXd());
  grads[ProbeModel::CW] = dlogits.transpose() * cache.act2;
  grads[ProbeModel::CB] = dlogits.colwise().sum().transpose();
  backbone_backward(m.blocks, cache, dlogits * m.blocks[ProbeModel::CW], grads);
  return loss / n;
}

/// Label-efficient fine-tuning: a fresh linear classifier on the backbone,
/// trained together with the backbone by full-batch SGD (cosine schedule) on
/// a seeded random `fraction` of the training points' ground-truth labels.
inline ProbeResult finetune_probe(const EncoderParams &params,
                                  const std::vector<SceneBundle> &train_scenes,
                                  const std::vector<SceneBundle> &eval_scenes,
                                  const ProbeConfig &cfg) {
  require_config(cfg.fraction > 0 && cfg.fraction <= 1, "probe fraction must lie in (0,1]");
  require_config(cfg.epochs >= 0, "probe epochs must be >= 0");
  require_valid(!train_scenes.empty() && !eval_scenes.empty(),
                "probe needs training and evaluation scenes");
  const int C = train_scenes.front().num_classes();
  const LabeledPoints train = first_sweep_points(train_scenes);
  const auto total = static_cast<std::size_t>(train.points.rows());
  const auto count = static_cast<std::size_t>(std::floor(cfg.fraction * static_cast<double>(total)));
  require_valid(count > 0, "label fraction selects zero labeled points");

  ProbeResult result;
  result.selected.resize(total);
  std::iota(result.selected.begin(), result.selected.end(), std::size_t{0});
  Rng pick(derive_seed(cfg.seed, {11}));
  std::shuffle(result.selected.begin(), result.selected.end(), pick);
  result.selected.resize(count);
  std::sort(result.selected.begin(), result.selected.end());

  Eigen::MatrixXd x(static_cast<Eigen::Index>(count), 3);
  std::vector<int> y;
  for (std::size_t j = 0; j < count; ++j) {
    x.row(static_cast<Eigen::Index>(j)) = train.points.row(static_cast<Eigen::Index>(result.selected[j]));
    y.push_back(train.labels[result.selected[j]]);
  }

  ProbeModel model = make_probe_model(params, C, derive_seed(cfg.seed, {12}));
  OptimState opt;
  opt.base_lr = cfg.lr;
  opt.momentum = cfg.momentum;
  opt.total_steps = cfg.epochs;
  ParamBlocks grads;
  for (int e = 0; e < cfg.epochs; ++e) {
    probe_loss_and_grads(model, x, y, grads);
    sgd_step(model.blocks, grads, opt);
  }

  result.train = miou(probe_predict(model, train.points), train.labels, C, cfg.convention);
  const LabeledPoints held = first_sweep_points(eval_scenes);
  result.eval = miou(probe_predict(model, held.points), held.labels, C, cfg.convention);
  return result;
}

// Error map: header "x y z gt pred correct", then one line per point.
inline void export_error_map(const std::string &path, const std::vector<int> &preds,
                             const std::vector<int> &gts, const Eigen::MatrixXd &points) {
  require_valid(preds.size() == gts.size() &&
                    preds.size() == static_cast<std::size_t>(points.rows()),
                "export_error_map: array lengths differ");
  std::ofstream out(path);
  require_valid(static_cast<bool>(out), "cannot write " + path);
  out << "x y z gt pred correct\n";
  out.precision(9);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << points(r, 0) << ' ' << points(r, 1) << ' ' << points(r, 2) << ' ' << gts[i] << ' '
        << preds[i] << ' ' << (preds[i] == gts[i] ? 1 : 0) << '\n';
  }
}

inline nlohmann::json eval_report_json(const EvalReport &rep,
                                       const std::vector<std::string> &class_names) {
  nlohmann::json j;
  j["class_names"] = class_names;
  j["iou"] = rep.iou;
  j["miou"] = rep.miou;
  j["points"] = rep.points;
  j["gt_counts"] = rep.gt_counts;
  j["pred_counts"] = rep.pred_counts;
  std::vector<int> in_mean(rep.in_mean.begin(), rep.in_mean.end());
  j["in_mean"] = in_mean;
  return j;
}

inline void write_eval_report(const std::string &path, const EvalReport &rep,
                              const std::vector<std::string> &class_names) {
  std::ofstream out(path);
  require_valid(static_cast<bool>(out), "cannot write " + path);
  out << eval_report_json(rep, class_names).dump(2) << '\n';
}

} // namespace clip2scene
