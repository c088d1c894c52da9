#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "clip2scene/error.hpp"

namespace clip2scene {

inline void write_f32_le(std::ostream &out, double value) {
  const float f = static_cast<float>(value);
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, sizeof bits);
  const std::array<char, 4> bytes{static_cast<char>(bits & 0xFF),
                                  static_cast<char>((bits >> 8) & 0xFF),
                                  static_cast<char>((bits >> 16) & 0xFF),
                                  static_cast<char>((bits >> 24) & 0xFF)};
  out.write(bytes.data(), 4);
}

inline double read_f32_le(std::istream &in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char *>(b.data()), 4);
  require_valid(in.gcount() == 4, "unexpected end of float32 data");
  const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                             (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) |
                             (static_cast<std::uint32_t>(b[3]) << 24);
  float f = 0.0f;
  std::memcpy(&f, &bits, sizeof f);
  return static_cast<double>(f);
}

// Row-major float32 dump of a matrix.
inline void write_matrix_f32(std::ostream &out, const Eigen::MatrixXd &m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) write_f32_le(out, m(r, c));
}

inline Eigen::MatrixXd read_matrix_f32(std::istream &in, Eigen::Index rows,
                                       Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = read_f32_le(in);
  return m;
}

} // namespace clip2scene
