#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>

#include "nhmm/common.hpp"

namespace nhmm {

inline constexpr double kLogTwoPi = 1.8378770664093454836;

// Diagonal Gaussian parameterized by mean and per-dimension log-variance.
struct DiagGaussian {
  Vec mean;
  Vec log_var;

  std::size_t dim() const { return mean.size(); }
};

inline double gauss_logpdf(const DiagGaussian& g, const Vec& y) {
  if (y.size() != g.mean.size()) throw std::invalid_argument("gauss_logpdf: dim mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    double lv = g.log_var[k];
    double r = y[k] - g.mean[k];
    s += -0.5 * (kLogTwoPi + lv + r * r * std::exp(-lv));
  }
  return s;
}

inline Vec gauss_sample(const DiagGaussian& g, Rng& rng) {
  Vec x(g.dim());
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t k = 0; k < x.size(); ++k)
    x[k] = g.mean[k] + std::exp(0.5 * g.log_var[k]) * n(rng);
  return x;
}

// Gradients of gauss_logpdf with respect to (mean, log_var).
inline std::pair<Vec, Vec> gauss_logpdf_grad(const DiagGaussian& g, const Vec& y) {
  if (y.size() != g.mean.size()) throw std::invalid_argument("gauss_logpdf_grad: dim mismatch");
  Vec gm(y.size()), glv(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    double inv_var = std::exp(-g.log_var[k]);
    double r = y[k] - g.mean[k];
    gm[k] = r * inv_var;
    glv[k] = 0.5 * (r * r * inv_var - 1.0);
  }
  return {std::move(gm), std::move(glv)};
}

}  // namespace nhmm
