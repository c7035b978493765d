#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace l1mbrl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a caller breaks a documented precondition (dimension
/// mismatch, non-finite input).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised for invalid user configuration (unknown env, bad parameter).
/// `path` is a JSON-pointer-like location when the error came from a file.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what, std::string path = {})
      : std::runtime_error(what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Raised when ensemble training produces a non-finite loss.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string& what, int member)
      : std::runtime_error(what), member_(member) {}
  int member() const noexcept { return member_; }

 private:
  int member_;
};

/// Axis-aligned box [lower, upper].
struct Box {
  Vector lower;
  Vector upper;

  Eigen::Index dim() const { return lower.size(); }
  bool contains(const Vector& v) const;
  Vector clamp(const Vector& v) const;
  Vector center() const { return 0.5 * (lower + upper); }
};

Box make_box(const Vector& lower, const Vector& upper);
Box symmetric_box(const Vector& half_width);

void require_dim(const Vector& v, Eigen::Index n, const char* what);
void require_finite(const Vector& v, const char* what);

/// Seeded generator. The engine is std::mt19937_64 (fully specified by the
/// standard); the real-valued draws are computed here rather than through
/// std::*_distribution, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  /// Independent child stream keyed by `tags`.
  static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  Vector uniform(const Box& box);
  /// Uniform on [-half, half] per component.
  Vector uniform_symmetric(Eigen::Index n, double half);
  /// Uniform index in [0, n).
  std::size_t index(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

}  // namespace l1mbrl
