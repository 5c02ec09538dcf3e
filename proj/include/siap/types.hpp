#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>

namespace siap {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// A single (row, col) cell of an m x n grid.
struct Entry {
  Index row = 0;
  Index col = 0;
  friend bool operator==(const Entry&, const Entry&) = default;
  friend auto operator<=>(const Entry& a, const Entry& b) {
    if (auto c = a.col <=> b.col; c != 0) return c;
    return a.row <=> b.row;
  }
};

}  // namespace siap
