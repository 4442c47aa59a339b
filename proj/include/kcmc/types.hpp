#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace kcmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Raised for violated preconditions and unrecoverable numerical failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Direction { lower, upper };

inline const char* to_string(Direction d) { return d == Direction::lower ? "lower" : "upper"; }

inline Direction parse_direction(const std::string& s) {
  if (s == "lower") return Direction::lower;
  if (s == "upper") return Direction::upper;
  throw Error("unknown direction '" + s + "' (expected lower|upper)");
}

inline double mean(const Vector& v) { return v.size() == 0 ? 0.0 : v.mean(); }

}  // namespace kcmc
