#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clip2scene/error.hpp"
#include "clip2scene/geom.hpp"
#include "clip2scene/pairs.hpp"
#include "clip2scene/rng.hpp"

namespace clip2scene {

struct LossConfig {
  double tau = 0.5;    // semantic contrastive temperature
  double lambda = 1.0; // fusion attention temperature
  // Adds the positives to the contrastive denominator (standard InfoNCE form).
  bool include_positives_in_denominator = false;
  // Treats the fusion centres as constants when differentiating.
  bool stop_gradient_through_fusion = false;

  void validate() const {
    require_config(tau > 0, "loss.tau must be positive");
    require_config(lambda > 0, "loss.lambda must be positive");
  }
};

struct LossReport {
  double value = 0.0;
  Eigen::MatrixXd grad; // same shape as the point features
  std::vector<int> skipped_classes;
  std::size_t skipped_cells = 0;
};

namespace detail {

inline void check_unit_rows(const Eigen::MatrixXd &m, const std::vector<int> *active,
                            const char *what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (active && (*active)[static_cast<std::size_t>(i)] < 0) continue;
    const double dev = std::abs(m.row(i).norm() - 1.0);
    require_valid(dev <= 1e-6, std::string(what) + " row " + std::to_string(i) +
                                   " is not unit-norm");
  }
}

// log(sum(exp(v[idx]))) with the max subtracted.
inline double log_sum_exp(const Eigen::VectorXd &v, const std::vector<std::size_t> &idx) {
  double m = -std::numeric_limits<double>::infinity();
  for (auto i : idx) m = std::max(m, v[static_cast<Eigen::Index>(i)]);
  double s = 0.0;
  for (auto i : idx) s += std::exp(v[static_cast<Eigen::Index>(i)] - m);
  return m + std::log(s);
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

} // namespace detail

/// Semantic contrastive loss over text anchors:
///
///   L = -sum_c log( sum_{label(i)=c} exp(<t_c,p_i>/tau)
///                   / sum_{label(j)!=c} exp(<t_c,p_j>/tau) )
///
/// Entries labeled -1 are ignored. A class with no positives or no negatives
/// contributes nothing and is listed in `skipped_classes`. No input
/// validation; see semantic_infonce.
inline LossReport semantic_infonce_unchecked(const Eigen::MatrixXd &point_feats,
                                             const Eigen::MatrixXd &text_bank,
                                             const std::vector<int> &labels,
                                             const LossConfig &cfg) {
  const int C = static_cast<int>(text_bank.rows());
  LossReport rep;
  rep.grad = Eigen::MatrixXd::Zero(point_feats.rows(), point_feats.cols());
  const ContrastiveSets sets = select_contrastive_sets(labels, C);
  const Eigen::MatrixXd logits = point_feats * text_bank.transpose() / cfg.tau;
  for (int c = 0; c < C; ++c) {
    const auto &pos = sets.positives[static_cast<std::size_t>(c)];
    const auto &neg = sets.negatives[static_cast<std::size_t>(c)];
    if (pos.empty() || neg.empty()) {
      rep.skipped_classes.push_back(c);
      continue;
    }
    std::vector<std::size_t> den = neg;
    if (cfg.include_positives_in_denominator) {
      den.insert(den.end(), pos.begin(), pos.end());
      std::sort(den.begin(), den.end());
    }
    const Eigen::VectorXd s = logits.col(c);
    const double lse_pos = detail::log_sum_exp(s, pos);
    const double lse_den = detail::log_sum_exp(s, den);
    rep.value -= lse_pos - lse_den;

    const Eigen::RowVectorXd t = text_bank.row(c) / cfg.tau;
    for (auto i : pos) {
      const auto r = static_cast<Eigen::Index>(i);
      rep.grad.row(r) -= std::exp(s[r] - lse_pos) * t;
    }
    for (auto j : den) {
      const auto r = static_cast<Eigen::Index>(j);
      rep.grad.row(r) += std::exp(s[r] - lse_den) * t;
    }
  }
  return rep;
}

inline LossReport semantic_infonce(const Eigen::MatrixXd &point_feats,
                                   const Eigen::MatrixXd &text_bank,
                                   const std::vector<int> &labels,
                                   const LossConfig &cfg) {
  cfg.validate();
  require_valid(labels.size() == static_cast<std::size_t>(point_feats.rows()),
                "semantic_infonce: label count mismatch");
  require_valid(point_feats.cols() == text_bank.cols(),
                "semantic_infonce: feature dimension mismatch");
  for (int l : labels)
    require_valid(l >= -1 && l < text_bank.rows(), "semantic_infonce: label out of range");
  detail::check_unit_rows(point_feats, &labels, "point feature");
  detail::check_unit_rows(text_bank, nullptr, "text embedding");
  return semantic_infonce_unchecked(point_feats, text_bank, labels, cfg);
}

/// Attention-weighted fusion of one grid cell.
struct FusionCell {
  CellIndex index{};
  std::vector<std::size_t> members; // labeled entry indices in the cell
  std::vector<double> a;            // pixel weights, parallel to members
  std::vector<double> b;            // point weights, parallel to members
  Eigen::VectorXd centre;           // f_n
};

struct FusionResult {
  std::vector<FusionCell> cells; // non-empty, non-skipped cells in grid order
  std::size_t skipped_cells = 0; // cells whose members are all unlabeled
};

/// Per-cell fusion centre f_n = sum a_m x_m + b_m p_m with
///
///   a_m = exp(<x_m,t_m>/lambda) / Z,  b_m = exp(<p_m,t_m>/lambda) / Z,
///   Z   = sum over cell members of both exponentials,
///
/// so the weights of a cell form one softmax over 2|cell| logits. t_m is the
/// embedding of the class assigned to member m; unlabeled members are left
/// out of the cell.
inline FusionResult fusion_features_unchecked(const GridPartition &grid,
                                              const Eigen::MatrixXd &pixel_feats,
                                              const Eigen::MatrixXd &point_feats,
                                              const Eigen::MatrixXd &text_feats,
                                              const std::vector<int> &labels,
                                              const LossConfig &cfg) {
  FusionResult out;
  const Eigen::Index D = point_feats.cols();
  for (const auto &[index, members] : grid.cells) {
    FusionCell cell;
    cell.index = index;
    for (const auto &m : members)
      if (labels[m.index] >= 0) cell.members.push_back(m.index);
    if (cell.members.empty()) {
      ++out.skipped_cells;
      continue;
    }
    const std::size_t n = cell.members.size();
    std::vector<double> la(n), lb(n);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      const auto r = static_cast<Eigen::Index>(cell.members[k]);
      la[k] = pixel_feats.row(r).dot(text_feats.row(r)) / cfg.lambda;
      lb[k] = point_feats.row(r).dot(text_feats.row(r)) / cfg.lambda;
      mx = std::max({mx, la[k], lb[k]});
    }
    double z = 0.0;
    cell.a.resize(n);
    cell.b.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      cell.a[k] = std::exp(la[k] - mx);
      cell.b[k] = std::exp(lb[k] - mx);
      z += cell.a[k] + cell.b[k];
    }
    cell.centre = Eigen::VectorXd::Zero(D);
    for (std::size_t k = 0; k < n; ++k) {
      cell.a[k] /= z;
      cell.b[k] /= z;
      const auto r = static_cast<Eigen::Index>(cell.members[k]);
      cell.centre += cell.a[k] * pixel_feats.row(r).transpose() +
                     cell.b[k] * point_feats.row(r).transpose();
    }
    out.cells.push_back(std::move(cell));
  }
  return out;
}

namespace detail {
inline void check_stcr_inputs(const GridPartition &grid, const Eigen::MatrixXd &pixel_feats,
                              const Eigen::MatrixXd &point_feats,
                              const Eigen::MatrixXd &text_feats,
                              const std::vector<int> &labels) {
  const auto M = point_feats.rows();
  require_valid(pixel_feats.rows() == M && text_feats.rows() == M &&
                    labels.size() == static_cast<std::size_t>(M),
                "spatial-temporal loss: row count mismatch");
  require_valid(pixel_feats.cols() == point_feats.cols() &&
                    text_feats.cols() == point_feats.cols(),
                "spatial-temporal loss: feature dimension mismatch");
  for (const auto &[idx, members] : grid.cells)
    for (const auto &m : members)
      require_valid(m.index < static_cast<std::size_t>(M),
                    "grid member index out of range");
  check_unit_rows(pixel_feats, &labels, "pixel feature");
  check_unit_rows(point_feats, &labels, "point feature");
  check_unit_rows(text_feats, &labels, "text embedding");
}
} // namespace detail

inline FusionResult fusion_features(const GridPartition &grid,
                                    const Eigen::MatrixXd &pixel_feats,
                                    const Eigen::MatrixXd &point_feats,
                                    const Eigen::MatrixXd &text_feats,
                                    const std::vector<int> &labels,
                                    const LossConfig &cfg) {
  cfg.validate();
  detail::check_stcr_inputs(grid, pixel_feats, point_feats, text_feats, labels);
  return fusion_features_unchecked(grid, pixel_feats, point_feats, text_feats, labels,
                                   cfg);
}

/// Spatial-temporal consistency loss
///
///   L = sum_n sum_{m in g_n} (1 - sigmoid(<p_m, f_n>)) / N
///
/// with N the number of cells in `fusion`. Unless
/// cfg.stop_gradient_through_fusion is set, the gradient also flows through
/// f_n (both its p_m terms and the attention weights b_m).
inline LossReport stcr_loss_unchecked(const Eigen::MatrixXd &point_feats,
                                      const Eigen::MatrixXd &text_feats,
                                      const FusionResult &fusion,
                                      const LossConfig &cfg) {
  require_valid(!fusion.cells.empty(), "spatial-temporal loss: no non-empty cells");
  LossReport rep;
  rep.skipped_cells = fusion.skipped_cells;
  rep.grad = Eigen::MatrixXd::Zero(point_feats.rows(), point_feats.cols());
  const double inv_n = 1.0 / static_cast<double>(fusion.cells.size());
  for (const auto &cell : fusion.cells) {
    const Eigen::VectorXd &f = cell.centre;
    Eigen::VectorXd grad_f = Eigen::VectorXd::Zero(f.size());
    double cell_sum = 0.0;
    for (std::size_t k = 0; k < cell.members.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(cell.members[k]);
      const double s = detail::sigmoid(point_feats.row(r).dot(f));
      cell_sum += 1.0 - s;
      const double ds = s * (1.0 - s);
      rep.grad.row(r) -= inv_n * ds * f.transpose();
      grad_f -= inv_n * ds * point_feats.row(r).transpose();
    }
    rep.value += cell_sum * inv_n;
    if (cfg.stop_gradient_through_fusion) continue;
    for (std::size_t k = 0; k < cell.members.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(cell.members[k]);
      const double b = cell.b[k];
      const double through_logit =
          b * grad_f.dot(point_feats.row(r).transpose() - f) / cfg.lambda;
      rep.grad.row(r) += b * grad_f.transpose() + through_logit * text_feats.row(r);
    }
  }
  return rep;
}

inline LossReport stcr_loss(const GridPartition &grid, const Eigen::MatrixXd &pixel_feats,
                            const Eigen::MatrixXd &point_feats,
                            const Eigen::MatrixXd &text_feats,
                            const std::vector<int> &labels, const FusionResult &fusion,
                            const LossConfig &cfg) {
  cfg.validate();
  detail::check_stcr_inputs(grid, pixel_feats, point_feats, text_feats, labels);
  require_valid(fusion.cells.size() + fusion.skipped_cells == grid.cell_count(),
                "fusion result does not match the grid");
  return stcr_loss_unchecked(point_feats, text_feats, fusion, cfg);
}

/// Fusion followed by the consistency loss in one call.
inline LossReport stcr_objective(const GridPartition &grid,
                                 const Eigen::MatrixXd &pixel_feats,
                                 const Eigen::MatrixXd &point_feats,
                                 const Eigen::MatrixXd &text_feats,
                                 const std::vector<int> &labels, const LossConfig &cfg) {
  const FusionResult fusion =
      fusion_features(grid, pixel_feats, point_feats, text_feats, labels, cfg);
  return stcr_loss_unchecked(point_feats, text_feats, fusion, cfg);
}

/// Mean over pairs of KL(softmax(<x,t>/tau) || softmax(<p,t>/tau)).
inline LossReport kl_distill_loss_unchecked(const Eigen::MatrixXd &point_feats,
                                            const Eigen::MatrixXd &pixel_feats,
                                            const Eigen::MatrixXd &text_bank, double tau) {
  LossReport rep;
  const Eigen::Index M = point_feats.rows();
  rep.grad = Eigen::MatrixXd::Zero(M, point_feats.cols());
  if (M == 0) return rep;
  const Eigen::MatrixXd sp = point_feats * text_bank.transpose() / tau;
  const Eigen::MatrixXd sx = pixel_feats * text_bank.transpose() / tau;
  auto log_softmax = [](const Eigen::RowVectorXd &s) {
    const double m = s.maxCoeff();
    const double lse = m + std::log((s.array() - m).exp().sum());
    return Eigen::RowVectorXd(s.array() - lse);
  };
  // With d = sx - sp and u = d - E_q[d]: KL = log(E_q[exp(-u)]) =
  // log1p(E_q[phi(u)]), phi(u) = exp(-u) - 1 + u >= 0. No cancellation when
  // the two distributions nearly coincide.
  auto phi = [](double u) {
    if (std::abs(u) >= 0.1) return std::expm1(-u) + u;
    double term = u * u / 2.0, sum = 0.0;
    for (int k = 3; k <= 14 && term != 0.0; ++k) {
      sum += term;
      term *= -u / k;
    }
    return sum;
  };
  const Eigen::MatrixXd diff = (pixel_feats - point_feats) * text_bank.transpose() / tau;
  for (Eigen::Index i = 0; i < M; ++i) {
    const Eigen::RowVectorXd lq = log_softmax(sx.row(i));
    const Eigen::RowVectorXd lr = log_softmax(sp.row(i));
    const Eigen::RowVectorXd q = lq.array().exp();
    const Eigen::RowVectorXd r = lr.array().exp();
    const double qsum = q.sum();
    const Eigen::RowVectorXd u = diff.row(i).array() - diff.row(i).dot(q) / qsum;
    if (u.maxCoeff() - u.minCoeff() < 40.0) {
      double e = 0.0;
      for (Eigen::Index c = 0; c < u.size(); ++c) e += q[c] * phi(u[c]);
      rep.value += std::log1p(e / qsum);
    } else {
      rep.value += (q.array() * (lq - lr).array()).sum();
    }
    rep.grad.row(i) = (r - q) * text_bank / tau;
  }
  rep.value /= static_cast<double>(M);
  rep.grad /= static_cast<double>(M);
  return rep;
}

inline LossReport kl_distill_loss(const Eigen::MatrixXd &point_feats,
                                  const Eigen::MatrixXd &pixel_feats,
                                  const Eigen::MatrixXd &text_bank, double tau) {
  require_config(tau > 0, "kl tau must be positive");
  require_valid(point_feats.rows() == pixel_feats.rows() &&
                    point_feats.cols() == pixel_feats.cols() &&
                    point_feats.cols() == text_bank.cols(),
                "kl_distill_loss: shape mismatch");
  detail::check_unit_rows(point_feats, nullptr, "point feature");
  detail::check_unit_rows(pixel_feats, nullptr, "pixel feature");
  detail::check_unit_rows(text_bank, nullptr, "text embedding");
  return kl_distill_loss_unchecked(point_feats, pixel_feats, text_bank, tau);
}

/// Mixed relative error used by the gradient checks: the difference is
/// scaled by the larger of the two values and the analytic gradient's
/// max-norm, so near-zero coordinates of a non-trivial gradient are judged
/// against the gradient's overall scale.
inline double gradient_relative_error(double analytic, double numeric, double scale) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), scale, 1e-12});
  return std::abs(analytic - numeric) / denom;
}

/// Central-difference check of an analytic gradient. `objective` maps a
/// matrix shaped like `x` to a scalar; up to `samples` distinct coordinates
/// are probed (all of them when x is smaller). Returns the max relative error.
template <class Objective>
double finite_diff_check(Objective &&objective, const Eigen::MatrixXd &x,
                         const Eigen::MatrixXd &analytic, double h, int samples = 50,
                         std::uint64_t seed = 0) {
  require_config(h > 0, "finite difference step must be positive");
  require_valid(analytic.rows() == x.rows() && analytic.cols() == x.cols(),
                "finite_diff_check: gradient shape mismatch");
  const auto total = static_cast<std::size_t>(x.size());
  std::vector<std::size_t> coords(total);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (total > static_cast<std::size_t>(samples)) {
    Rng rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<std::size_t>(samples));
  }
  const double scale = analytic.size() ? analytic.cwiseAbs().maxCoeff() : 0.0;
  double worst = 0.0;
  Eigen::MatrixXd probe = x;
  for (auto flat : coords) {
    const auto r = static_cast<Eigen::Index>(flat) % x.rows();
    const auto c = static_cast<Eigen::Index>(flat) / x.rows();
    const double orig = probe(r, c);
    probe(r, c) = orig + h;
    const double fp = objective(probe);
    probe(r, c) = orig - h;
    const double fm = objective(probe);
    probe(r, c) = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, gradient_relative_error(analytic(r, c), numeric, scale));
  }
  return worst;
}

} // namespace clip2scene
