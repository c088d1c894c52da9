#pragma once

// Randomized verification harness shared by the `gradcheck` / `losscheck`
// commands and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clip2scene/geom.hpp"
#include "clip2scene/losses.hpp"
#include "clip2scene/model.hpp"
#include "clip2scene/reference.hpp"
#include "clip2scene/rng.hpp"
#include "clip2scene/synth.hpp"

namespace clip2scene::checks {

inline Eigen::MatrixXd random_unit_rows(Rng &rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    m.row(i) = random_unit_vector(rng, static_cast<int>(cols)).transpose();
  return m;
}

inline std::vector<int> random_labels(Rng &rng, std::size_t n, int num_classes,
                                      double unlabeled_rate = 0.0) {
  std::uniform_int_distribution<int> cls(0, num_classes - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> out(n);
  for (auto &l : out) {
    const int c = cls(rng);
    l = u(rng) < unlabeled_rate ? -1 : c;
  }
  return out;
}

/// Random small spatial-temporal instance: points in [0,2)^3 with unit
/// cells, so at most 8 cells.
struct StcrInstance {
  GridPartition grid;
  Eigen::MatrixXd pixel, point, text;
  std::vector<int> labels;
  LossConfig cfg;
};

inline StcrInstance random_stcr_instance(Rng &rng, int max_members = 30) {
  std::uniform_int_distribution<int> msize(1, max_members), csize(2, 5), dsize(2, 8);
  const int M = msize(rng), C = csize(rng), D = dsize(rng);
  StcrInstance inst;
  std::uniform_real_distribution<double> coord(0.0, 2.0), temp(0.3, 2.0);
  PointCloud pts(M, 3);
  std::vector<PointRef> refs;
  for (int i = 0; i < M; ++i) {
    pts.row(i) << coord(rng), coord(rng), coord(rng);
    refs.push_back({1 + i % 3, static_cast<std::size_t>(i)});
  }
  inst.grid = partition_grid(pts, refs, 1.0);
  inst.pixel = random_unit_rows(rng, M, D);
  inst.point = random_unit_rows(rng, M, D);
  const Eigen::MatrixXd bank = random_unit_rows(rng, C, D);
  inst.labels = random_labels(rng, static_cast<std::size_t>(M), C, 0.15);
  if (std::none_of(inst.labels.begin(), inst.labels.end(), [](int l) { return l >= 0; }))
    inst.labels[0] = 0;
  inst.text = Eigen::MatrixXd::Zero(M, D);
  for (int i = 0; i < M; ++i)
    if (inst.labels[static_cast<std::size_t>(i)] >= 0)
      inst.text.row(i) = bank.row(inst.labels[static_cast<std::size_t>(i)]);
  inst.cfg.lambda = temp(rng);
  return inst;
}

struct SemanticInstance {
  Eigen::MatrixXd points, bank;
  std::vector<int> labels;
  LossConfig cfg;
};

inline SemanticInstance random_semantic_instance(Rng &rng, int max_points = 30) {
  std::uniform_int_distribution<int> msize(2, max_points), csize(2, 5), dsize(2, 8);
  std::uniform_real_distribution<double> temp(0.3, 2.0);
  std::bernoulli_distribution coin(0.5);
  const int M = msize(rng), C = csize(rng), D = dsize(rng);
  SemanticInstance inst;
  inst.points = random_unit_rows(rng, M, D);
  inst.bank = random_unit_rows(rng, C, D);
  inst.labels = random_labels(rng, static_cast<std::size_t>(M), C);
  inst.cfg.tau = temp(rng);
  inst.cfg.include_positives_in_denominator = coin(rng);
  return inst;
}

struct CheckLine {
  std::string name;
  double max_error = 0.0;
  int configurations = 0;
};

/// Central-difference gradient checks on `configs` random instances per
/// operation. Returns one line per operation.
inline std::vector<CheckLine> run_gradcheck(std::uint64_t seed, int configs = 100,
                                            double h = 1e-6) {
  Rng rng(seed);
  CheckLine scr{"semantic_infonce"}, full{"stcr_loss"}, stop{"stcr_loss(stop_gradient)"},
      kl{"kl_distill_loss"}, model{"model.backward"};
  for (int k = 0; k < configs; ++k) {
    const auto sub = derive_seed(seed, {static_cast<std::uint64_t>(k)});
    {
      const SemanticInstance in = random_semantic_instance(rng);
      const LossReport rep = semantic_infonce_unchecked(in.points, in.bank, in.labels, in.cfg);
      auto f = [&](const Eigen::MatrixXd &p) {
        return semantic_infonce_unchecked(p, in.bank, in.labels, in.cfg).value;
      };
      scr.max_error = std::max(scr.max_error, finite_diff_check(f, in.points, rep.grad, h, 50, sub));
      ++scr.configurations;
    }
    {
      StcrInstance in = random_stcr_instance(rng);
      in.cfg.stop_gradient_through_fusion = false;
      const FusionResult fus = fusion_features_unchecked(in.grid, in.pixel, in.point, in.text,
                                                         in.labels, in.cfg);
      const LossReport rep = stcr_loss_unchecked(in.point, in.text, fus, in.cfg);
      auto f = [&](const Eigen::MatrixXd &p) {
        const FusionResult fp =
            fusion_features_unchecked(in.grid, in.pixel, p, in.text, in.labels, in.cfg);
        return stcr_loss_unchecked(p, in.text, fp, in.cfg).value;
      };
      full.max_error = std::max(full.max_error, finite_diff_check(f, in.point, rep.grad, h, 50, sub));
      ++full.configurations;

      LossConfig sg = in.cfg;
      sg.stop_gradient_through_fusion = true;
      const LossReport rep_sg = stcr_loss_unchecked(in.point, in.text, fus, sg);
      auto f_sg = [&](const Eigen::MatrixXd &p) {
        return stcr_loss_unchecked(p, in.text, fus, sg).value;
      };
      stop.max_error =
          std::max(stop.max_error, finite_diff_check(f_sg, in.point, rep_sg.grad, h, 50, sub));
      ++stop.configurations;
    }
    {
      std::uniform_int_distribution<int> msize(1, 30), csize(2, 5), dsize(2, 8);
      std::uniform_real_distribution<double> temp(0.3, 2.0);
      const int M = msize(rng), C = csize(rng), D = dsize(rng);
      const Eigen::MatrixXd p = random_unit_rows(rng, M, D);
      const Eigen::MatrixXd x = random_unit_rows(rng, M, D);
      const Eigen::MatrixXd t = random_unit_rows(rng, C, D);
      const double tau = temp(rng);
      const LossReport rep = kl_distill_loss_unchecked(p, x, t, tau);
      auto f = [&](const Eigen::MatrixXd &pp) {
        return kl_distill_loss_unchecked(pp, x, t, tau).value;
      };
      kl.max_error = std::max(kl.max_error, finite_diff_check(f, p, rep.grad, h, 50, sub));
      ++kl.configurations;
    }
    {
      std::uniform_int_distribution<int> nsize(1, 12), hsize(2, 10), dsize(2, 6);
      const int N = nsize(rng), H = hsize(rng), D = dsize(rng);
      const EncoderParams params = init_encoder(H, D, sub);
      std::normal_distribution<double> normal(0.0, 2.0);
      Eigen::MatrixXd pts(N, 3), gs(N, D), gt(N, D);
      for (auto *m : {&pts, &gs, &gt})
        for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = normal(rng);
      const ForwardResult fw = forward(params, pts);
      const EncoderParams grads = backward(params, fw.cache, gs, gt);
      for (std::size_t b = 0; b < EncoderParams::kBlocks; ++b) {
        auto f = [&](const Eigen::MatrixXd &block) {
          EncoderParams q = params;
          q.blocks[b] = block;
          const ForwardResult r = forward(q, pts);
          return (r.feats_s.cwiseProduct(gs)).sum() + (r.feats_t.cwiseProduct(gt)).sum();
        };
        model.max_error = std::max(
            model.max_error, finite_diff_check(f, params.blocks[b], grads.blocks[b], h, 50, sub + b));
      }
      ++model.configurations;
    }
  }
  return {scr, full, stop, kl, model};
}

inline double relative_difference(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-300});
  return a == b ? 0.0 : std::abs(a - b) / denom;
}

struct LossCheckResult {
  std::vector<CheckLine> lines;
  double max_weight_sum_deviation = 0.0; // |sum(a+b) - 1| over all cells
  double min_weight = 1.0;
  std::size_t cells = 0;
};

/// Stabilized losses against the naive reference loops on random small
/// instances (M <= 30, C <= 5, at most 8 cells).
inline LossCheckResult run_losscheck(std::uint64_t seed, int instances = 1000) {
  Rng rng(seed);
  LossCheckResult out;
  CheckLine scr{"semantic_infonce"}, fus{"fusion_features"}, stcr{"stcr_loss"},
      kl{"kl_distill_loss"};
  for (int k = 0; k < instances; ++k) {
    {
      const SemanticInstance in = random_semantic_instance(rng);
      const double fast = semantic_infonce(in.points, in.bank, in.labels, in.cfg).value;
      const double slow = reference::semantic_infonce(in.points, in.bank, in.labels, in.cfg.tau,
                                                      in.cfg.include_positives_in_denominator);
      scr.max_error = std::max(scr.max_error, relative_difference(fast, slow));
      ++scr.configurations;
    }
    {
      const StcrInstance in = random_stcr_instance(rng);
      const FusionResult f =
          fusion_features(in.grid, in.pixel, in.point, in.text, in.labels, in.cfg);
      const auto naive =
          reference::fusion(in.grid, in.pixel, in.point, in.text, in.labels, in.cfg.lambda);
      double worst = naive.size() == f.cells.size() ? 0.0 : 1.0;
      for (const auto &cell : f.cells) {
        double sum = 0.0;
        for (std::size_t m = 0; m < cell.members.size(); ++m) {
          sum += cell.a[m] + cell.b[m];
          out.min_weight = std::min({out.min_weight, cell.a[m], cell.b[m]});
        }
        out.max_weight_sum_deviation = std::max(out.max_weight_sum_deviation, std::abs(sum - 1.0));
        ++out.cells;
        const auto it = naive.find(cell.index);
        if (it == naive.end()) {
          worst = 1.0;
          continue;
        }
        for (std::size_t m = 0; m < cell.members.size(); ++m) {
          worst = std::max({worst, relative_difference(cell.a[m], it->second.a[m]),
                            relative_difference(cell.b[m], it->second.b[m])});
        }
        const double scale = std::max(it->second.centre.norm(), 1e-300);
        worst = std::max(worst, (cell.centre - it->second.centre).norm() / scale);
      }
      fus.max_error = std::max(fus.max_error, worst);
      ++fus.configurations;

      const double fast = stcr_loss(in.grid, in.pixel, in.point, in.text, in.labels, f, in.cfg).value;
      const double slow =
          reference::stcr(in.grid, in.pixel, in.point, in.text, in.labels, in.cfg.lambda);
      stcr.max_error = std::max(stcr.max_error, relative_difference(fast, slow));
      ++stcr.configurations;
    }
    {
      std::uniform_int_distribution<int> msize(1, 30), csize(2, 5), dsize(2, 8);
      std::uniform_real_distribution<double> temp(0.3, 2.0);
      const int M = msize(rng), C = csize(rng), D = dsize(rng);
      const Eigen::MatrixXd p = random_unit_rows(rng, M, D);
      const Eigen::MatrixXd x = random_unit_rows(rng, M, D);
      const Eigen::MatrixXd t = random_unit_rows(rng, C, D);
      const double tau = temp(rng);
      const double fast = kl_distill_loss(p, x, t, tau).value;
      const double slow = reference::kl_distill(p, x, t, tau);
      kl.max_error = std::max(kl.max_error, relative_difference(fast, slow));
      ++kl.configurations;
    }
  }
  out.lines = {scr, fus, stcr, kl};
  return out;
}

} // namespace clip2scene::checks
