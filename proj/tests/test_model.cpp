#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "clip2scene/losses.hpp"
#include "clip2scene/model.hpp"
#include "test_support.hpp"

using namespace clip2scene;

namespace {

Eigen::MatrixXd random_points(std::mt19937_64 &rng, Eigen::Index n) {
  return 2.0 * test_support::gaussian(rng, n, 3);
}

// Scalar probe: a fixed linear functional of both heads' outputs.
double probe_loss(const EncoderParams &p, const Eigen::MatrixXd &pts, const Eigen::MatrixXd &gs,
                  const Eigen::MatrixXd &gt) {
  const ForwardResult r = forward(p, pts);
  return (r.feats_s.cwiseProduct(gs)).sum() + (r.feats_t.cwiseProduct(gt)).sum();
}

} // namespace

TEST(Encoder, InitShapesAndDeterminism) {
  const EncoderParams a = init_encoder(8, 5, 3), b = init_encoder(8, 5, 3), c = init_encoder(8, 5, 4);
  const auto shapes = EncoderParams::shapes(8, 5);
  ASSERT_EQ(a.blocks.size(), static_cast<std::size_t>(EncoderParams::kBlocks));
  bool differs = false;
  for (std::size_t k = 0; k < a.blocks.size(); ++k) {
    EXPECT_EQ(a.blocks[k].rows(), shapes[k].first);
    EXPECT_EQ(a.blocks[k].cols(), shapes[k].second);
    EXPECT_EQ(a.blocks[k], b.blocks[k]);
    differs = differs || a.blocks[k] != c.blocks[k];
  }
  EXPECT_TRUE(differs);
  EXPECT_THROW(init_encoder(0, 4, 0), ConfigError);
  EXPECT_THROW(init_encoder(4, 1, 0), ConfigError);
}

TEST(Encoder, OutputsAreUnitRows) {
  std::mt19937_64 rng(1);
  const EncoderParams p = init_encoder(16, 6, 1);
  const ForwardResult r = forward(p, random_points(rng, 40));
  for (Eigen::Index i = 0; i < 40; ++i) {
    EXPECT_NEAR(r.feats_s.row(i).norm(), 1.0, 1e-9);
    EXPECT_NEAR(r.feats_t.row(i).norm(), 1.0, 1e-9);
  }
}

TEST(Encoder, ZeroWeightsGiveDegenerateZeroRows) {
  EncoderParams p = zeros_like(init_encoder(4, 3, 0));
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd pts = random_points(rng, 5);
  const ForwardResult r = forward(p, pts);
  EXPECT_EQ(r.feats_s.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.feats_t.cwiseAbs().maxCoeff(), 0.0);
  for (bool d : r.cache.head_s.degenerate) EXPECT_TRUE(d);
  const EncoderParams g =
      backward(p, r.cache, Eigen::MatrixXd::Ones(5, 3), Eigen::MatrixXd::Ones(5, 3));
  for (const auto &b : g.blocks) EXPECT_EQ(b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Encoder, DuplicatedRowsGiveIdenticalOutputs) {
  std::mt19937_64 rng(3);
  Eigen::MatrixXd pts = random_points(rng, 4);
  pts.row(3) = pts.row(1);
  const ForwardResult r = forward(init_encoder(8, 4, 2), pts);
  EXPECT_EQ(r.feats_s.row(1), r.feats_s.row(3));
  EXPECT_EQ(r.feats_t.row(1), r.feats_t.row(3));
}

TEST(Encoder, RejectsWrongInputWidth) {
  EXPECT_THROW(forward(init_encoder(4, 3, 0), Eigen::MatrixXd::Zero(2, 4)), ValidationError);
}

TEST(EncoderBackward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(4);
  const EncoderParams p = init_encoder(8, 4, 5);
  const ForwardResult r = forward(p, random_points(rng, 6));
  const EncoderParams g = backward(p, r.cache, Eigen::MatrixXd::Zero(6, 4), Eigen::MatrixXd::Zero(6, 4));
  for (const auto &b : g.blocks) EXPECT_EQ(b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(EncoderBackward, HeadsAreIndependent) {
  std::mt19937_64 rng(5);
  const EncoderParams p = init_encoder(8, 4, 6);
  const ForwardResult r = forward(p, random_points(rng, 6));
  const EncoderParams g =
      backward(p, r.cache, test_support::gaussian(rng, 6, 4), Eigen::MatrixXd::Zero(6, 4));
  EXPECT_EQ(g[EncoderParams::HeadTW].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g[EncoderParams::HeadTB].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(g[EncoderParams::HeadSW].cwiseAbs().maxCoeff(), 0.0);
}

TEST(EncoderBackward, ShapeMismatchIsRejected) {
  std::mt19937_64 rng(6);
  const EncoderParams p = init_encoder(8, 4, 0);
  const ForwardResult r = forward(p, random_points(rng, 6));
  EXPECT_THROW(backward(p, r.cache, Eigen::MatrixXd::Zero(5, 4), Eigen::MatrixXd::Zero(6, 4)),
               ValidationError);
  EXPECT_THROW(backward(p, r.cache, Eigen::MatrixXd::Zero(6, 4), Eigen::MatrixXd::Zero(6, 3)),
               ValidationError);
}

TEST(EncoderBackward, EveryBlockMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    std::mt19937_64 rng(10 + s);
    EncoderParams p = init_encoder(8, 4, s);
    const Eigen::MatrixXd pts = random_points(rng, 7);
    const Eigen::MatrixXd gs = test_support::gaussian(rng, 7, 4),
                          gt = test_support::gaussian(rng, 7, 4);
    const ForwardResult r = forward(p, pts);
    const EncoderParams g = backward(p, r.cache, gs, gt);
    for (std::size_t b = 0; b < EncoderParams::kBlocks; ++b) {
      auto f = [&](const Eigen::MatrixXd &blk) {
        EncoderParams q = p;
        q.blocks[b] = blk;
        return probe_loss(q, pts, gs, gt);
      };
      EXPECT_LE(finite_diff_check(f, p.blocks[b], g.blocks[b], 1e-6), 1e-6)
          << block_name(b) << " seed " << s;
    }
  }
}

TEST(Optimizer, CosineSchedule) {
  EXPECT_NEAR(cosine_lr(0.2, 0, 100), 0.2, 1e-12);
  EXPECT_NEAR(cosine_lr(0.2, 50, 100), 0.1, 1e-12);
  EXPECT_NEAR(cosine_lr(0.2, 100, 100), 0.0, 1e-12);
  EXPECT_EQ(cosine_lr(0.2, 5, 0), 0.2);
}

TEST(Optimizer, MomentumUpdateByHand) {
  ParamBlocks params{Eigen::MatrixXd::Constant(1, 2, 1.0)};
  const ParamBlocks grad{Eigen::MatrixXd::Constant(1, 2, 0.5)};
  OptimState opt;
  opt.base_lr = 0.1;
  opt.momentum = 0.9;
  opt.total_steps = 0; // constant lr
  sgd_step(params, grad, opt);
  // v = 0.5, w = 1 - 0.05
  EXPECT_NEAR(params[0](0, 0), 0.95, 1e-15);
  sgd_step(params, grad, opt);
  // v = 0.9 * 0.5 + 0.5 = 0.95, w = 0.95 - 0.095
  EXPECT_NEAR(params[0](0, 1), 0.855, 1e-15);
  EXPECT_EQ(opt.step, 2);
  EXPECT_THROW(sgd_step(params, ParamBlocks{}, opt), ValidationError);
}

TEST(Checkpoint, RoundTripAndHeader) {
  test_support::TempDir dir("ckpt");
  const EncoderParams p = init_encoder(5, 3, 42);
  const std::string path = dir.str("ckpt.f32");
  save_checkpoint(path, p, 7);
  const std::string bytes = test_support::read_file(path);
  ASSERT_EQ(bytes.substr(0, bytes.find('\n') + 1), "5 3 42 7\n");
  std::size_t floats = 0;
  for (const auto &[r, c] : EncoderParams::shapes(5, 3)) floats += static_cast<std::size_t>(r * c);
  EXPECT_EQ(bytes.size(), std::string("5 3 42 7\n").size() + 4 * floats);

  // First stored value is w1(0,0) as little-endian float32.
  const float w00 = static_cast<float>(p[EncoderParams::W1](0, 0));
  unsigned char le[4];
  std::uint32_t u;
  std::memcpy(&u, &w00, 4);
  for (int i = 0; i < 4; ++i) le[i] = static_cast<unsigned char>(u >> (8 * i));
  EXPECT_EQ(std::memcmp(bytes.data() + 9, le, 4), 0);

  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.epoch, 7);
  EXPECT_EQ(ck.params.hidden, 5);
  EXPECT_EQ(ck.params.dim, 3);
  EXPECT_EQ(ck.params.seed, 42u);
  for (std::size_t b = 0; b < p.blocks.size(); ++b)
    EXPECT_EQ(ck.params.blocks[b], p.blocks[b].cast<float>().cast<double>()) << block_name(b);
}

TEST(Checkpoint, RejectsMalformedFiles) {
  test_support::TempDir dir("ckpt_bad");
  {
    std::ofstream(dir.str("a.f32")) << "not a header\n";
  }
  EXPECT_THROW(load_checkpoint(dir.str("a.f32")), ValidationError);
  save_checkpoint(dir.str("b.f32"), init_encoder(3, 2, 0), 1);
  {
    std::ofstream(dir.str("b.f32"), std::ios::app | std::ios::binary) << "xx";
  }
  EXPECT_THROW(load_checkpoint(dir.str("b.f32")), ValidationError);
  EXPECT_THROW(load_checkpoint(dir.str("missing.f32")), ValidationError);
}
