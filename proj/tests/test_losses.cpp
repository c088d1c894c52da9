#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clip2scene/checks.hpp"
#include "clip2scene/losses.hpp"
#include "clip2scene/reference.hpp"
#include "test_support.hpp"

using namespace clip2scene;
using test_support::unit_rows;

namespace {

Eigen::MatrixXd rows2(std::initializer_list<std::initializer_list<double>> v) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()),
                    static_cast<Eigen::Index>(v.begin()->size()));
  Eigen::Index i = 0;
  for (const auto &r : v) {
    Eigen::Index j = 0;
    for (double x : r) m(i, j++) = x;
    ++i;
  }
  return m;
}

GridPartition grid_of(const PointCloud &pts, double cell = 1.0) {
  std::vector<PointRef> refs;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) refs.push_back({1, static_cast<std::size_t>(i)});
  return partition_grid(pts, refs, cell);
}

Eigen::MatrixXd text_rows(const Eigen::MatrixXd &bank, const std::vector<int> &labels) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), bank.cols());
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) t.row(static_cast<Eigen::Index>(i)) = bank.row(labels[i]);
  return t;
}

} // namespace

// ---- semantic contrastive loss ----

TEST(SemanticLoss, TwoClassWorkedExample) {
  const Eigen::MatrixXd t = rows2({{1, 0}, {0, 1}});
  const Eigen::MatrixXd p = rows2({{1, 0}, {0, 1}});
  LossConfig cfg;
  cfg.tau = 0.5;
  const LossReport r = semantic_infonce(p, t, {0, 1}, cfg);
  EXPECT_EQ(r.value, -4.0);
  EXPECT_TRUE(r.skipped_classes.empty());
}

TEST(SemanticLoss, SingleClassContributesNothing) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd t = unit_rows(rng, 3, 4);
  const Eigen::MatrixXd p = unit_rows(rng, 5, 4);
  const LossReport r = semantic_infonce(p, t, {1, 1, 1, -1, 1}, LossConfig{});
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.grad.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NE(std::find(r.skipped_classes.begin(), r.skipped_classes.end(), 1),
            r.skipped_classes.end());
}

TEST(SemanticLoss, RejectsNonUnitRows) {
  std::mt19937_64 rng(2);
  Eigen::MatrixXd p = unit_rows(rng, 4, 3);
  const Eigen::MatrixXd t = unit_rows(rng, 2, 3);
  p.row(2) *= 2.0;
  EXPECT_THROW(semantic_infonce(p, t, {0, 1, 0, 1}, LossConfig{}), ValidationError);
  Eigen::MatrixXd tb = t;
  tb.row(0) *= 0.5;
  EXPECT_THROW(semantic_infonce(unit_rows(rng, 4, 3), tb, {0, 1, 0, 1}, LossConfig{}),
               ValidationError);
}

TEST(SemanticLoss, RejectsBadLabelsAndShapes) {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd p = unit_rows(rng, 3, 4), t = unit_rows(rng, 2, 4);
  EXPECT_THROW(semantic_infonce(p, t, {0, 2, 1}, LossConfig{}), ValidationError);
  EXPECT_THROW(semantic_infonce(p, t, {0, 1}, LossConfig{}), ValidationError);
  EXPECT_THROW(semantic_infonce(p, unit_rows(rng, 2, 5), {0, 1, 0}, LossConfig{}),
               ValidationError);
  LossConfig bad;
  bad.tau = 0.0;
  EXPECT_THROW(semantic_infonce(p, t, {0, 1, 0}, bad), ConfigError);
}

TEST(SemanticLoss, MatchesNaiveOracle) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd p = unit_rows(rng, 20, 8), t = unit_rows(rng, 3, 8);
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) labels.push_back(i % 7 == 6 ? -1 : i % 3);
  for (bool incl : {false, true}) {
    LossConfig cfg;
    cfg.tau = 0.3;
    cfg.include_positives_in_denominator = incl;
    const double got = semantic_infonce(p, t, labels, cfg).value;
    const double want = reference::semantic_infonce(p, t, labels, cfg.tau, incl);
    EXPECT_NEAR(got, want, 1e-10 * std::max(1.0, std::abs(want))) << "incl=" << incl;
  }
}

TEST(SemanticLoss, PermutationInvariant) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd p = unit_rows(rng, 12, 5), t = unit_rows(rng, 4, 5);
  std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3, -1, 0, 1, 2};
  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd pp(12, 5);
  std::vector<int> pl(12);
  for (int i = 0; i < 12; ++i) {
    pp.row(i) = p.row(perm[static_cast<std::size_t>(i)]);
    pl[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  const LossReport a = semantic_infonce(p, t, labels, LossConfig{});
  const LossReport b = semantic_infonce(pp, t, pl, LossConfig{});
  EXPECT_NEAR(a.value, b.value, 1e-12);
  for (int i = 0; i < 12; ++i)
    EXPECT_LT((b.grad.row(i) - a.grad.row(perm[static_cast<std::size_t>(i)])).norm(), 1e-12);
}

TEST(SemanticLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd p = unit_rows(rng, 10, 6), t = unit_rows(rng, 3, 6);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, -1, 1, 2};
  for (bool incl : {false, true}) {
    LossConfig cfg;
    cfg.include_positives_in_denominator = incl;
    const LossReport r = semantic_infonce(p, t, labels, cfg);
    auto f = [&](const Eigen::MatrixXd &x) {
      return semantic_infonce_unchecked(x, t, labels, cfg).value;
    };
    EXPECT_LE(finite_diff_check(f, p, r.grad, 1e-6, 60), 1e-6) << "incl=" << incl;
  }
}

TEST(SemanticLoss, UnlabeledRowsGetNoGradient) {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd p = unit_rows(rng, 6, 4), t = unit_rows(rng, 2, 4);
  const LossReport r = semantic_infonce(p, t, {0, -1, 1, -1, 0, 1}, LossConfig{});
  EXPECT_EQ(r.grad.row(1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.grad.row(3).cwiseAbs().maxCoeff(), 0.0);
}

// ---- fusion ----

TEST(Fusion, SingleMemberSplitsEvenlyWhenFeaturesCoincide) {
  PointCloud pts(1, 3);
  pts << 0.5, 0.5, 0.5;
  const Eigen::MatrixXd x = rows2({{0.6, 0.8}});
  const FusionResult f = fusion_features(grid_of(pts), x, x, x, {0}, LossConfig{});
  ASSERT_EQ(f.cells.size(), 1u);
  EXPECT_DOUBLE_EQ(f.cells[0].a[0], 0.5);
  EXPECT_DOUBLE_EQ(f.cells[0].b[0], 0.5);
  EXPECT_LT((f.cells[0].centre - x.row(0).transpose()).norm(), 1e-15);
}

TEST(Fusion, WeightsFormAConvexCombinationForAnyTemperature) {
  std::mt19937_64 rng(8);
  for (double lambda : {0.05, 0.3, 1.0, 7.0}) {
    for (int rep = 0; rep < 10; ++rep) {
      Rng r(static_cast<std::uint64_t>(rep) * 31 + 5);
      checks::StcrInstance inst = checks::random_stcr_instance(r);
      inst.cfg.lambda = lambda;
      const FusionResult f = fusion_features(inst.grid, inst.pixel, inst.point, inst.text,
                                             inst.labels, inst.cfg);
      for (const auto &c : f.cells) {
        double s = 0.0;
        for (std::size_t k = 0; k < c.members.size(); ++k) {
          EXPECT_GT(c.a[k], 0.0);
          EXPECT_GT(c.b[k], 0.0);
          s += c.a[k] + c.b[k];
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
  }
}

TEST(Fusion, ThreeMemberCellMatchesOracle) {
  std::mt19937_64 rng(9);
  PointCloud pts(3, 3);
  pts << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.9, 0.1, 0.7;
  const Eigen::MatrixXd x = unit_rows(rng, 3, 4), p = unit_rows(rng, 3, 4),
                        bank = unit_rows(rng, 2, 4);
  const std::vector<int> labels{0, 1, 1};
  const Eigen::MatrixXd t = text_rows(bank, labels);
  const GridPartition g = grid_of(pts);
  LossConfig cfg;
  cfg.lambda = 0.4;
  const FusionResult f = fusion_features(g, x, p, t, labels, cfg);
  const auto naive = reference::fusion(g, x, p, t, labels, cfg.lambda);
  ASSERT_EQ(f.cells.size(), 1u);
  ASSERT_EQ(naive.size(), 1u);
  const auto &nc = naive.begin()->second;
  ASSERT_EQ(f.cells[0].members, nc.members);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(f.cells[0].a[k], nc.a[k], 1e-14);
    EXPECT_NEAR(f.cells[0].b[k], nc.b[k], 1e-14);
  }
  EXPECT_LT((f.cells[0].centre - nc.centre).norm(), 1e-14);
}

TEST(Fusion, AllUnlabeledCellIsSkipped) {
  PointCloud pts(3, 3);
  pts << 0.5, 0.5, 0.5, 0.6, 0.6, 0.6, 3.5, 0.5, 0.5;
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd x = unit_rows(rng, 3, 3), p = unit_rows(rng, 3, 3),
                        bank = unit_rows(rng, 2, 3);
  const std::vector<int> labels{-1, -1, 1};
  const FusionResult f =
      fusion_features(grid_of(pts), x, p, text_rows(bank, labels), labels, LossConfig{});
  EXPECT_EQ(f.cells.size(), 1u);
  EXPECT_EQ(f.skipped_cells, 1u);
  EXPECT_EQ(f.cells[0].members, std::vector<std::size_t>{2});
}

// ---- spatial-temporal consistency loss ----

TEST(StcrLoss, SingleAlignedMember) {
  PointCloud pts(1, 3);
  pts << 0.5, 0.5, 0.5;
  const Eigen::MatrixXd x = rows2({{1, 0, 0}});
  const LossReport r = stcr_objective(grid_of(pts), x, x, x, {0}, LossConfig{});
  EXPECT_NEAR(r.value, 0.2689414, 1e-7);
  EXPECT_NEAR(r.value, 1.0 - 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(StcrLoss, MemberTermVanishesForLargeAgreement) {
  // Unit features bound <p,f> by 1; the large-score limit is probed through
  // a scaled centre on the unchecked path.
  FusionResult f;
  FusionCell c;
  c.members = {0};
  c.a = {0.5};
  c.b = {0.5};
  c.centre = Eigen::Vector2d(60.0, 0.0);
  f.cells.push_back(c);
  const Eigen::MatrixXd p = rows2({{1, 0}});
  const LossReport r = stcr_loss_unchecked(p, p, f, LossConfig{});
  EXPECT_LT(r.value, 1e-25);
  EXPECT_GE(r.value, 0.0);
}

TEST(StcrLoss, PositiveAndMatchesOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(100 + s);
    const checks::StcrInstance inst = checks::random_stcr_instance(rng);
    const LossReport r =
        stcr_objective(inst.grid, inst.pixel, inst.point, inst.text, inst.labels, inst.cfg);
    const double want =
        reference::stcr(inst.grid, inst.pixel, inst.point, inst.text, inst.labels, inst.cfg.lambda);
    EXPECT_GT(r.value, 0.0);
    EXPECT_NEAR(r.value, want, 1e-10 * std::max(1.0, std::abs(want))) << "seed " << s;
  }
}

TEST(StcrLoss, TwoCellOracle) {
  PointCloud pts(4, 3);
  pts << 0.2, 0.2, 0.2, 0.7, 0.3, 0.1, 1.5, 0.2, 0.2, 1.1, 0.9, 0.4;
  std::mt19937_64 rng(11);
  const Eigen::MatrixXd x = unit_rows(rng, 4, 5), p = unit_rows(rng, 4, 5),
                        bank = unit_rows(rng, 3, 5);
  const std::vector<int> labels{0, 2, 1, 1};
  const Eigen::MatrixXd t = text_rows(bank, labels);
  const GridPartition g = grid_of(pts);
  ASSERT_EQ(g.cell_count(), 2u);
  LossConfig cfg;
  cfg.lambda = 0.7;
  const double got = stcr_objective(g, x, p, t, labels, cfg).value;
  EXPECT_NEAR(got, reference::stcr(g, x, p, t, labels, cfg.lambda), 1e-12);
}

TEST(StcrLoss, NoLabeledCellsIsAnError) {
  PointCloud pts(2, 3);
  pts << 0.5, 0.5, 0.5, 2.5, 0.5, 0.5;
  std::mt19937_64 rng(12);
  const Eigen::MatrixXd x = unit_rows(rng, 2, 3), p = unit_rows(rng, 2, 3);
  const Eigen::MatrixXd t = Eigen::MatrixXd::Zero(2, 3);
  EXPECT_THROW(stcr_objective(grid_of(pts), x, p, t, {-1, -1}, LossConfig{}), ValidationError);
}

TEST(StcrLoss, GradientMatchesFiniteDifferencesInBothModes) {
  for (bool stop : {false, true}) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      Rng rng(200 + s);
      checks::StcrInstance inst = checks::random_stcr_instance(rng);
      inst.cfg.stop_gradient_through_fusion = stop;
      const FusionResult fixed = fusion_features(inst.grid, inst.pixel, inst.point, inst.text,
                                                 inst.labels, inst.cfg);
      const LossReport r = stcr_loss_unchecked(inst.point, inst.text, fixed, inst.cfg);
      auto f = [&](const Eigen::MatrixXd &pt) {
        if (stop) return stcr_loss_unchecked(pt, inst.text, fixed, inst.cfg).value;
        const FusionResult fr = fusion_features_unchecked(inst.grid, inst.pixel, pt, inst.text,
                                                          inst.labels, inst.cfg);
        return stcr_loss_unchecked(pt, inst.text, fr, inst.cfg).value;
      };
      EXPECT_LE(finite_diff_check(f, inst.point, r.grad, 1e-6), 1e-6)
          << "stop=" << stop << " seed " << s;
    }
  }
}

TEST(StcrLoss, StopGradientChangesOnlyTheGradient) {
  Rng rng(300);
  checks::StcrInstance inst = checks::random_stcr_instance(rng);
  const LossReport full =
      stcr_objective(inst.grid, inst.pixel, inst.point, inst.text, inst.labels, inst.cfg);
  inst.cfg.stop_gradient_through_fusion = true;
  const LossReport stop =
      stcr_objective(inst.grid, inst.pixel, inst.point, inst.text, inst.labels, inst.cfg);
  EXPECT_EQ(full.value, stop.value);
  EXPECT_GT((full.grad - stop.grad).cwiseAbs().maxCoeff(), 0.0);
}

// ---- distillation ----

TEST(KlDistill, IdenticalInputsGiveZero) {
  std::mt19937_64 rng(13);
  const Eigen::MatrixXd x = unit_rows(rng, 7, 4), t = unit_rows(rng, 3, 4);
  const LossReport r = kl_distill_loss(x, x, t, 0.5);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(KlDistill, SingleClassBankGivesZero) {
  std::mt19937_64 rng(14);
  const Eigen::MatrixXd x = unit_rows(rng, 5, 4), p = unit_rows(rng, 5, 4),
                        t = unit_rows(rng, 1, 4);
  const LossReport r = kl_distill_loss(p, x, t, 0.5);
  EXPECT_NEAR(r.value, 0.0, 1e-15);
  EXPECT_LT(r.grad.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(KlDistill, NonNegativeAndMatchesOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(400 + s);
    const Eigen::MatrixXd x = unit_rows(rng, 9, 6), t = unit_rows(rng, 4, 6);
    // Near-coincident pairs exercise the cancellation-prone regime.
    Eigen::MatrixXd p = x + (s % 2 ? 1e-4 : 1.0) * test_support::gaussian(rng, 9, 6);
    p.rowwise().normalize();
    const double tau = 0.2 + 0.1 * static_cast<double>(s % 5);
    const double got = kl_distill_loss(p, x, t, tau).value;
    const double want = reference::kl_distill(p, x, t, tau);
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, want, 1e-10 * std::max(1e-3, std::abs(want))) << "seed " << s;
  }
}

TEST(KlDistill, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(15);
  const Eigen::MatrixXd x = unit_rows(rng, 8, 5), p = unit_rows(rng, 8, 5),
                        t = unit_rows(rng, 3, 5);
  const LossReport r = kl_distill_loss(p, x, t, 0.4);
  auto f = [&](const Eigen::MatrixXd &q) { return kl_distill_loss_unchecked(q, x, t, 0.4).value; };
  EXPECT_LE(finite_diff_check(f, p, r.grad, 1e-6), 1e-6);
}

// ---- finite-difference helper ----

TEST(FiniteDiff, ErrorMetricAndArguments) {
  EXPECT_DOUBLE_EQ(gradient_relative_error(2.0, 1.0, 0.0), 0.5);
  EXPECT_DOUBLE_EQ(gradient_relative_error(1e-9, 0.0, 1.0), 1e-9);
  EXPECT_EQ(gradient_relative_error(0.0, 0.0, 0.0), 0.0);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 2);
  auto sq = [](const Eigen::MatrixXd &m) { return m.squaredNorm(); };
  EXPECT_LT(finite_diff_check(sq, x, 2.0 * x, 1e-5), 1e-9);
  EXPECT_GT(finite_diff_check(sq, x, 3.0 * x, 1e-5), 0.3);
  EXPECT_THROW(finite_diff_check(sq, x, x, 0.0), ConfigError);
  EXPECT_THROW(finite_diff_check(sq, x, Eigen::MatrixXd::Ones(3, 2), 1e-5), ValidationError);
}
