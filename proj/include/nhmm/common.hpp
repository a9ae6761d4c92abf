#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace nhmm {

using Vec = std::vector<double>;

// Thrown when the particle filter loses all probability mass at some step.
class degenerate_filter_error : public std::runtime_error {
 public:
  degenerate_filter_error(std::size_t step)
      : std::runtime_error("particle filter degenerated: all weights underflowed at step " +
                           std::to_string(step)),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

class unsupported_model_error : public std::runtime_error {
 public:
  explicit unsupported_model_error(const std::string& msg) : std::runtime_error(msg) {}
};

class degenerate_statistics_error : public std::runtime_error {
 public:
  explicit degenerate_statistics_error(const std::string& msg) : std::runtime_error(msg) {}
};

class parse_error : public std::runtime_error {
 public:
  parse_error(const std::string& msg, std::size_t line)
      : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class invalid_data_error : public std::runtime_error {
 public:
  explicit invalid_data_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double neg_inf() { return -std::numeric_limits<double>::infinity(); }

// log(sum_i exp(x_i)); returns -inf on an empty or all -inf input.
inline double log_sum_exp(const Vec& x) {
  double m = neg_inf();
  for (double v : x)
    if (v > m) m = v;
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

// splitmix64 finalizer; used to derive independent child seeds so that
// per-trajectory streams do not depend on scheduling order.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline Rng child_rng(std::uint64_t master_seed, std::uint64_t index) {
  return Rng(mix_seed(master_seed, index));
}

}  // namespace nhmm
