#include "l1mbrl/common.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace l1mbrl {

bool Box::contains(const Vector& v) const {
  if (v.size() != lower.size()) return false;
  return ((v.array() >= lower.array()) && (v.array() <= upper.array())).all();
}

Vector Box::clamp(const Vector& v) const {
  return v.cwiseMax(lower).cwiseMin(upper);
}

Box make_box(const Vector& lower, const Vector& upper) {
  if (lower.size() != upper.size() || lower.size() == 0)
    throw ContractViolation("box bounds must be non-empty and of equal size");
  if ((lower.array() > upper.array()).any())
    throw ContractViolation("box lower bound exceeds upper bound");
  if (!lower.allFinite() || !upper.allFinite())
    throw ContractViolation("box bounds must be finite");
  return Box{lower, upper};
}

Box symmetric_box(const Vector& half_width) {
  return make_box(-half_width, half_width);
}

void require_dim(const Vector& v, Eigen::Index n, const char* what) {
  if (v.size() != n)
    throw ContractViolation(std::string(what) + ": expected dimension " +
                            std::to_string(n) + ", got " +
                            std::to_string(v.size()));
}

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite())
    throw ContractViolation(std::string(what) + ": non-finite entry");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

Rng Rng::stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(seed);
  for (auto t : tags) h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return Rng(h);
}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

Vector Rng::uniform(const Box& box) {
  Vector v(box.dim());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v[i] = uniform(box.lower[i], box.upper[i]);
  return v;
}

Vector Rng::uniform_symmetric(Eigen::Index n, double half) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = uniform(-half, half);
  return v;
}

std::size_t Rng::index(std::size_t n) {
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace l1mbrl
