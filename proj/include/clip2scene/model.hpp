#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clip2scene/binary_io.hpp"
#include "clip2scene/error.hpp"
#include "clip2scene/rng.hpp"

namespace clip2scene {

// Flat list of parameter blocks; biases are stored as column vectors.
using ParamBlocks = std::vector<Eigen::MatrixXd>;

/// Per-point encoder: 3 -> H -> H (ReLU) backbone followed by two separate
/// linear projection heads to D. Head S feeds the semantic contrastive loss,
/// head T the spatial-temporal loss.
struct EncoderParams {
  enum Block : std::size_t { W1, B1, W2, B2, HeadSW, HeadSB, HeadTW, HeadTB, kBlocks };

  int hidden = 64;
  int dim = 16;
  std::uint64_t seed = 0;
  ParamBlocks blocks;

  Eigen::MatrixXd &operator[](Block b) { return blocks[b]; }
  const Eigen::MatrixXd &operator[](Block b) const { return blocks[b]; }

  static std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes(int hidden, int dim) {
    return {{hidden, 3}, {hidden, 1}, {hidden, hidden}, {hidden, 1},
            {dim, hidden}, {dim, 1},   {dim, hidden},    {dim, 1}};
  }
};

inline const char *block_name(std::size_t b) {
  static const char *names[] = {"backbone.w1", "backbone.b1", "backbone.w2",
                                "backbone.b2", "head_s.w",    "head_s.b",
                                "head_t.w",    "head_t.b"};
  return b < EncoderParams::kBlocks ? names[b] : "?";
}

inline Eigen::MatrixXd uniform_matrix(Rng &rng, Eigen::Index rows, Eigen::Index cols,
                                      double bound) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = u(rng);
  return m;
}

inline EncoderParams init_encoder(int hidden, int dim, std::uint64_t seed) {
  require_config(hidden >= 1 && dim >= 2, "model.hidden >= 1 and dim >= 2 required");
  EncoderParams p;
  p.hidden = hidden;
  p.dim = dim;
  p.seed = seed;
  Rng rng(seed);
  const auto shapes = EncoderParams::shapes(hidden, dim);
  for (std::size_t b = 0; b < EncoderParams::kBlocks; ++b) {
    const auto [rows, cols] = shapes[b];
    const bool bias = cols == 1;
    const double fan_in = b == EncoderParams::W1 ? 3.0 : hidden;
    const double bound = bias ? 0.1 : std::sqrt((b < 4 ? 6.0 : 3.0) / fan_in);
    p.blocks.push_back(uniform_matrix(rng, rows, cols, bound));
  }
  return p;
}

inline EncoderParams zeros_like(const EncoderParams &p) {
  EncoderParams z = p;
  for (auto &b : z.blocks) b.setZero();
  return z;
}

struct BackboneCache {
  Eigen::MatrixXd input;  // N x 3
  Eigen::MatrixXd pre1;   // N x H
  Eigen::MatrixXd act1;   // N x H
  Eigen::MatrixXd pre2;   // N x H
  Eigen::MatrixXd act2;   // N x H
};

struct HeadCache {
  Eigen::MatrixXd out;        // N x D, normalized (zero rows when degenerate)
  Eigen::VectorXd norm;       // pre-normalization row norms
  std::vector<bool> degenerate;
};

struct ForwardCache {
  BackboneCache backbone;
  HeadCache head_s;
  HeadCache head_t;
};

struct ForwardResult {
  Eigen::MatrixXd feats_s;
  Eigen::MatrixXd feats_t;
  ForwardCache cache;
};

// Rows with pre-normalization norm below this are emitted as zeros.
inline constexpr double kNormEpsilon = 1e-12;

inline BackboneCache backbone_forward(const ParamBlocks &blocks,
                                      const Eigen::MatrixXd &points) {
  require_valid(points.cols() == 3, "encoder input must be N x 3");
  BackboneCache c;
  c.input = points;
  c.pre1 = points * blocks[EncoderParams::W1].transpose();
  c.pre1.rowwise() += blocks[EncoderParams::B1].col(0).transpose();
  c.act1 = c.pre1.cwiseMax(0.0);
  c.pre2 = c.act1 * blocks[EncoderParams::W2].transpose();
  c.pre2.rowwise() += blocks[EncoderParams::B2].col(0).transpose();
  c.act2 = c.pre2.cwiseMax(0.0);
  return c;
}

// Gradients of the four backbone blocks given dL/d(act2).
inline void backbone_backward(const ParamBlocks &blocks, const BackboneCache &c,
                              const Eigen::MatrixXd &grad_act2, ParamBlocks &grads) {
  const Eigen::MatrixXd d2 = grad_act2.cwiseProduct(
      (c.pre2.array() > 0.0).cast<double>().matrix());
  grads[EncoderParams::W2] = d2.transpose() * c.act1;
  grads[EncoderParams::B2] = d2.colwise().sum().transpose();
  const Eigen::MatrixXd d1 = (d2 * blocks[EncoderParams::W2])
                                 .cwiseProduct((c.pre1.array() > 0.0).cast<double>().matrix());
  grads[EncoderParams::W1] = d1.transpose() * c.input;
  grads[EncoderParams::B1] = d1.colwise().sum().transpose();
}

inline HeadCache head_forward(const Eigen::MatrixXd &w, const Eigen::MatrixXd &b,
                              const Eigen::MatrixXd &act) {
  HeadCache h;
  Eigen::MatrixXd z = act * w.transpose();
  z.rowwise() += b.col(0).transpose();
  h.norm = z.rowwise().norm();
  h.degenerate.assign(static_cast<std::size_t>(z.rows()), false);
  h.out = z;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (h.norm[i] < kNormEpsilon) {
      h.degenerate[static_cast<std::size_t>(i)] = true;
      h.out.row(i).setZero();
    } else {
      h.out.row(i) /= h.norm[i];
    }
  }
  return h;
}

// dL/dz for y = z / |z|: (g - y <y,g>) / |z|, zero on degenerate rows.
inline Eigen::MatrixXd normalize_backward(const HeadCache &h, const Eigen::MatrixXd &grad) {
  Eigen::MatrixXd dz(grad.rows(), grad.cols());
  for (Eigen::Index i = 0; i < grad.rows(); ++i) {
    if (h.degenerate[static_cast<std::size_t>(i)]) {
      dz.row(i).setZero();
      continue;
    }
    const double yg = h.out.row(i).dot(grad.row(i));
    dz.row(i) = (grad.row(i) - yg * h.out.row(i)) / h.norm[i];
  }
  return dz;
}

inline ForwardResult forward(const EncoderParams &params, const Eigen::MatrixXd &points) {
  ForwardResult r;
  r.cache.backbone = backbone_forward(params.blocks, points);
  r.cache.head_s = head_forward(params[EncoderParams::HeadSW],
                                params[EncoderParams::HeadSB], r.cache.backbone.act2);
  r.cache.head_t = head_forward(params[EncoderParams::HeadTW],
                                params[EncoderParams::HeadTB], r.cache.backbone.act2);
  r.feats_s = r.cache.head_s.out;
  r.feats_t = r.cache.head_t.out;
  return r;
}

/// Exact parameter gradients for upstream gradients on both heads' outputs.
inline EncoderParams backward(const EncoderParams &params, const ForwardCache &cache,
                              const Eigen::MatrixXd &grad_s, const Eigen::MatrixXd &grad_t) {
  const Eigen::Index n = cache.backbone.input.rows();
  require_valid(grad_s.rows() == n && grad_s.cols() == params.dim,
                "backward: head_s gradient shape mismatch");
  require_valid(grad_t.rows() == n && grad_t.cols() == params.dim,
                "backward: head_t gradient shape mismatch");
  require_valid(cache.backbone.act2.cols() == params.hidden,
                "backward: cache does not match parameters");
  EncoderParams g = zeros_like(params);
  const Eigen::MatrixXd dzs = normalize_backward(cache.head_s, grad_s);
  const Eigen::MatrixXd dzt = normalize_backward(cache.head_t, grad_t);
  const Eigen::MatrixXd &act2 = cache.backbone.act2;
  g[EncoderParams::HeadSW] = dzs.transpose() * act2;
  g[EncoderParams::HeadSB] = dzs.colwise().sum().transpose();
  g[EncoderParams::HeadTW] = dzt.transpose() * act2;
  g[EncoderParams::HeadTB] = dzt.colwise().sum().transpose();
  const Eigen::MatrixXd d_act2 =
      dzs * params[EncoderParams::HeadSW] + dzt * params[EncoderParams::HeadTW];
  backbone_backward(params.blocks, cache.backbone, d_act2, g.blocks);
  return g;
}

inline double cosine_lr(double base_lr, double step, double total_steps) {
  if (total_steps <= 0) return base_lr;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * step / total_steps));
}

/// Momentum SGD with a cosine learning-rate schedule over `total_steps`.
struct OptimState {
  double base_lr = 0.05;
  double momentum = 0.9;
  long step = 0;
  long total_steps = 1;
  ParamBlocks velocity;

  double lr() const {
    return cosine_lr(base_lr, static_cast<double>(step), static_cast<double>(total_steps));
  }
};

inline void sgd_step(ParamBlocks &params, const ParamBlocks &grads, OptimState &opt) {
  require_valid(params.size() == grads.size(), "sgd_step: block count mismatch");
  if (opt.velocity.empty()) {
    for (const auto &p : params) opt.velocity.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
  }
  const double lr = opt.lr();
  for (std::size_t b = 0; b < params.size(); ++b) {
    require_valid(params[b].rows() == grads[b].rows() && params[b].cols() == grads[b].cols(),
                  "sgd_step: block shape mismatch");
    opt.velocity[b] = opt.momentum * opt.velocity[b] + grads[b];
    params[b] -= lr * opt.velocity[b];
  }
  ++opt.step;
}

inline void sgd_step(EncoderParams &params, const EncoderParams &grads, OptimState &opt) {
  sgd_step(params.blocks, grads.blocks, opt);
}

// ckpt.f32: text header line "H D seed epoch", then every block as
// little-endian float32, row-major, in declared block order.
inline void save_checkpoint(const std::string &path, const EncoderParams &params, int epoch) {
  std::ofstream out(path, std::ios::binary);
  require_valid(static_cast<bool>(out), "cannot write checkpoint " + path);
  out << params.hidden << ' ' << params.dim << ' ' << params.seed << ' ' << epoch << '\n';
  for (const auto &b : params.blocks) write_matrix_f32(out, b);
  require_valid(static_cast<bool>(out), "failed writing checkpoint " + path);
}

struct Checkpoint {
  EncoderParams params;
  int epoch = 0;
};

inline Checkpoint load_checkpoint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  require_valid(static_cast<bool>(in), "cannot read checkpoint " + path);
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  Checkpoint ck;
  hs >> ck.params.hidden >> ck.params.dim >> ck.params.seed >> ck.epoch;
  require_valid(static_cast<bool>(hs) && ck.params.hidden > 0 && ck.params.dim > 0,
                "malformed checkpoint header in " + path);
  for (const auto &[rows, cols] : EncoderParams::shapes(ck.params.hidden, ck.params.dim))
    ck.params.blocks.push_back(read_matrix_f32(in, rows, cols));
  in.peek();
  require_valid(in.eof(), "trailing data in checkpoint " + path);
  return ck;
}

} // namespace clip2scene
