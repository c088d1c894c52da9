#pragma once

// Straightforward reference evaluations used as oracles by the test suite
// and the `losscheck` command. Deliberately naive: explicit loops, no
// log-sum-exp stabilization, no shared code with losses.hpp.

#include <cmath>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "clip2scene/geom.hpp"

namespace clip2scene::reference {

inline double dot(const Eigen::MatrixXd &a, Eigen::Index i, const Eigen::MatrixXd &b,
                  Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index d = 0; d < a.cols(); ++d) s += a(i, d) * b(j, d);
  return s;
}

inline double semantic_infonce(const Eigen::MatrixXd &p, const Eigen::MatrixXd &t,
                               const std::vector<int> &labels, double tau,
                               bool include_positives = false) {
  double loss = 0.0;
  for (Eigen::Index c = 0; c < t.rows(); ++c) {
    double num = 0.0, den = 0.0;
    int npos = 0, nneg = 0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const int l = labels[static_cast<std::size_t>(i)];
      if (l < 0) continue;
      const double e = std::exp(dot(t, c, p, i) / tau);
      if (l == c) {
        num += e;
        ++npos;
        if (include_positives) den += e;
      } else {
        den += e;
        ++nneg;
      }
    }
    if (npos == 0 || nneg == 0) continue;
    loss -= std::log(num / den);
  }
  return loss;
}

struct NaiveCell {
  std::vector<std::size_t> members;
  std::vector<double> a, b;
  Eigen::VectorXd centre;
};

// Cells keyed by voxel index, members in insertion order.
inline std::map<CellIndex, NaiveCell> fusion(const GridPartition &grid,
                                             const Eigen::MatrixXd &x,
                                             const Eigen::MatrixXd &p,
                                             const Eigen::MatrixXd &t,
                                             const std::vector<int> &labels,
                                             double lambda) {
  std::map<CellIndex, NaiveCell> out;
  for (const auto &[idx, members] : grid.cells) {
    NaiveCell cell;
    for (const auto &m : members)
      if (labels[m.index] >= 0) cell.members.push_back(m.index);
    if (cell.members.empty()) continue;
    double z = 0.0;
    for (auto m : cell.members) {
      const auto r = static_cast<Eigen::Index>(m);
      z += std::exp(dot(x, r, t, r) / lambda) + std::exp(dot(p, r, t, r) / lambda);
    }
    cell.centre = Eigen::VectorXd::Zero(p.cols());
    for (auto m : cell.members) {
      const auto r = static_cast<Eigen::Index>(m);
      const double a = std::exp(dot(x, r, t, r) / lambda) / z;
      const double b = std::exp(dot(p, r, t, r) / lambda) / z;
      cell.a.push_back(a);
      cell.b.push_back(b);
      for (Eigen::Index d = 0; d < p.cols(); ++d)
        cell.centre[d] += a * x(r, d) + b * p(r, d);
    }
    out.emplace(idx, std::move(cell));
  }
  return out;
}

inline double stcr(const GridPartition &grid, const Eigen::MatrixXd &x,
                   const Eigen::MatrixXd &p, const Eigen::MatrixXd &t,
                   const std::vector<int> &labels, double lambda) {
  const auto cells = fusion(grid, x, p, t, labels, lambda);
  double total = 0.0;
  for (const auto &[idx, cell] : cells)
    for (auto m : cell.members) {
      double z = 0.0;
      for (Eigen::Index d = 0; d < p.cols(); ++d)
        z += p(static_cast<Eigen::Index>(m), d) * cell.centre[d];
      total += 1.0 - 1.0 / (1.0 + std::exp(-z));
    }
  return total / static_cast<double>(cells.size());
}

// Long double so the oracle's own rounding stays far below the tolerance
// when the two distributions nearly coincide.
inline double kl_distill(const Eigen::MatrixXd &p, const Eigen::MatrixXd &x,
                         const Eigen::MatrixXd &t, double tau) {
  using ld = long double;
  auto ldot = [](const Eigen::MatrixXd &a, Eigen::Index i, const Eigen::MatrixXd &b,
                 Eigen::Index c) {
    ld s = 0;
    for (Eigen::Index k = 0; k < a.cols(); ++k) s += static_cast<ld>(a(i, k)) * b(c, k);
    return s;
  };
  ld total = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    ld zq = 0, zr = 0;
    for (Eigen::Index c = 0; c < t.rows(); ++c) {
      zq += std::exp(ldot(x, i, t, c) / tau);
      zr += std::exp(ldot(p, i, t, c) / tau);
    }
    for (Eigen::Index c = 0; c < t.rows(); ++c) {
      const ld q = std::exp(ldot(x, i, t, c) / tau) / zq;
      const ld r = std::exp(ldot(p, i, t, c) / tau) / zr;
      total += q * std::log(q / r);
    }
  }
  return p.rows() ? static_cast<double>(total / p.rows()) : 0.0;
}

} // namespace clip2scene::reference
