#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "nhmm/common.hpp"
#include "nhmm/gaussian.hpp"
#include "nhmm/model.hpp"

namespace nhmm {

struct SmcOptions {
  // resample at every step (the default) or only when ESS drops below
  // ess_fraction * N
  bool adaptive_resampling = false;
  double ess_fraction = 0.5;
};

struct SmcResult {
  // paths[i][t]: latent state of particle i at time t, after the final
  // resampling pass
  std::vector<std::vector<Vec>> paths;
  Vec final_weights;       // normalized, pre-resampling weights at time T
  Vec loglik_increments;   // T+1 entries, log of the mean unnormalized weight
  // ancestor_table[t][i]: pre-resampling index copied by post-resampling
  // particle i at time t (identity rows when a step skipped resampling)
  std::vector<std::vector<std::size_t>> ancestor_table;
  // states[t][i]: freshly propagated (pre-resampling) particle states
  std::vector<std::vector<Vec>> states;
  // step_weights[t]: normalized weights of states[t] after the time-t update
  std::vector<Vec> step_weights;

  std::size_t n_particles() const { return final_weights.size(); }
  std::size_t horizon() const { return loglik_increments.empty() ? 0 : loglik_increments.size() - 1; }
};

inline std::vector<std::size_t> resample_multinomial(const Vec& weights, std::size_t n_out,
                                                     Rng& rng) {
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w))
      throw std::invalid_argument("resample_multinomial: weights must be finite and >= 0");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("resample_multinomial: weights must sum to 1");
  Vec cum(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    cum[i] = acc;
  }
  cum.back() = 1.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::size_t> idx(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    double v = u(rng);
    idx[k] = static_cast<std::size_t>(
        std::lower_bound(cum.begin(), cum.end(), v) - cum.begin());
  }
  return idx;
}

inline double effective_sample_size(const Vec& weights) {
  double s = 0.0;
  for (double w : weights) s += w * w;
  return s > 0.0 ? 1.0 / s : 0.0;
}

// Bootstrap filter: propose from the transition model, weight by the emission
// density, resample full paths. Weights are carried in log space.
inline SmcResult bootstrap_filter(const NeuralHmm& m, const std::vector<Vec>& y, std::size_t n,
                                  Rng& rng, const SmcOptions& opts = {}) {
  if (n < 1) throw std::invalid_argument("bootstrap_filter: need at least one particle");
  if (y.empty()) throw std::invalid_argument("bootstrap_filter: empty observation sequence");
  for (const Vec& yt : y)
    if (yt.size() != m.d_o)
      throw std::invalid_argument("bootstrap_filter: observation dim mismatch");
  check_model_shapes(m);

  const std::size_t T = y.size() - 1;
  SmcResult r;
  r.paths.assign(n, {});
  r.states.assign(T + 1, std::vector<Vec>(n));
  r.ancestor_table.assign(T + 1, std::vector<std::size_t>(n));
  r.loglik_increments.assign(T + 1, 0.0);
  r.step_weights.assign(T + 1, Vec(n));

  Vec log_w(n, -std::log(static_cast<double>(n)));  // carried normalized weights
  Vec lw(n);
  Vec weights(n);

  for (std::size_t t = 0; t <= T; ++t) {
    Vec we = obs_window(y, t, m.tau_e, m.d_o);
    for (std::size_t i = 0; i < n; ++i) {
      Vec x;
      if (t == 0) {
        x = gauss_sample(m.init_dist, rng);
      } else {
        Vec wt = obs_window(y, t, m.tau_t, m.d_o);
        x = gauss_sample(transition_dist(m, r.paths[i].back(), wt), rng);
      }
      lw[i] = gauss_logpdf(emission_dist(m, x, we), y[t]) + log_w[i];
      r.states[t][i] = x;
      r.paths[i].push_back(std::move(x));
    }
    double norm = log_sum_exp(lw);
    if (!std::isfinite(norm)) throw degenerate_filter_error(t);
    r.loglik_increments[t] = norm;
    for (std::size_t i = 0; i < n; ++i) weights[i] = std::exp(lw[i] - norm);
    r.step_weights[t] = weights;

    bool resample = !opts.adaptive_resampling ||
                    effective_sample_size(weights) < opts.ess_fraction * static_cast<double>(n);
    if (t == T) r.final_weights = weights;
    if (resample) {
      auto idx = resample_multinomial(weights, n, rng);
      std::vector<std::vector<Vec>> next(n);
      for (std::size_t i = 0; i < n; ++i) next[i] = r.paths[idx[i]];
      r.paths = std::move(next);
      r.ancestor_table[t] = idx;
      std::fill(log_w.begin(), log_w.end(), -std::log(static_cast<double>(n)));
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        r.ancestor_table[t][i] = i;
        log_w[i] = lw[i] - norm;
      }
    }
  }
  return r;
}

inline double estimate_loglik(const SmcResult& r) {
  double s = 0.0;
  for (double v : r.loglik_increments) s += v;
  return s;
}

// Particle estimate of the EM surrogate objective: final-weight-averaged
// complete-data log density of the stored paths under a candidate parameter
// (the fixed initial-distribution term is left out).
inline double q_hat(const NeuralHmm& candidate, const SmcResult& r, const std::vector<Vec>& y) {
  if (y.size() != r.horizon() + 1) throw std::invalid_argument("q_hat: horizon mismatch");
  const std::size_t T = r.horizon();
  double total = 0.0;
  for (std::size_t i = 0; i < r.n_particles(); ++i) {
    const auto& path = r.paths[i];
    if (path.size() != T + 1) throw std::invalid_argument("q_hat: path length mismatch");
    double s = gauss_logpdf(emission_dist(candidate, path[0], obs_window(y, 0, candidate.tau_e, candidate.d_o)), y[0]);
    for (std::size_t t = 1; t <= T; ++t) {
      s += gauss_logpdf(
          emission_dist(candidate, path[t], obs_window(y, t, candidate.tau_e, candidate.d_o)),
          y[t]);
      s += gauss_logpdf(
          transition_dist(candidate, path[t - 1], obs_window(y, t, candidate.tau_t, candidate.d_o)),
          path[t]);
    }
    total += r.final_weights[i] * s;
  }
  return total;
}

// Debug dump; paths truncated to at most max_steps time steps.
inline nlohmann::json smc_result_to_json(const SmcResult& r, std::size_t max_steps = 25) {
  nlohmann::json j;
  j["n_particles"] = r.n_particles();
  j["horizon"] = r.horizon();
  j["final_weights"] = r.final_weights;
  j["loglik_increments"] = r.loglik_increments;
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& p : r.paths) {
    nlohmann::json pj = nlohmann::json::array();
    for (std::size_t t = 0; t < p.size() && t < max_steps; ++t) pj.push_back(p[t]);
    paths.push_back(std::move(pj));
  }
  j["paths"] = std::move(paths);
  j["truncated_to"] = max_steps;
  return j;
}

}  // namespace nhmm
