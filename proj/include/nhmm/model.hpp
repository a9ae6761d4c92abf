#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nhmm/common.hpp"
#include "nhmm/gaussian.hpp"
#include "nhmm/nn.hpp"

namespace nhmm {

// Continuous-latent HMM whose transition and emission distribution parameters
// are produced by dense nets. tau_e / tau_t are the observation-memory window
// lengths of the higher-order variant; both zero gives the plain first-order
// model.
struct NeuralHmm {
  std::size_t d_h = 1;
  std::size_t d_o = 1;
  std::size_t tau_e = 0;
  std::size_t tau_t = 0;
  Mlp f_net;  // input d_h + tau_t*d_o, output 2*d_h (mean, log_var)
  Mlp g_net;  // input d_h + tau_e*d_o, output 2*d_o
  DiagGaussian init_dist;
  // net log-variance outputs are clamped to this range before use
  double log_var_min = -10.0;
  double log_var_max = 10.0;

  bool is_vanilla() const { return f_net.depth() == 0 && g_net.depth() == 0; }
};

inline void check_model_shapes(const NeuralHmm& m) {
  if (m.f_net.input_dim() != m.d_h + m.tau_t * m.d_o || m.f_net.output_dim() != 2 * m.d_h)
    throw std::invalid_argument("NeuralHmm: transition net dims inconsistent");
  if (m.g_net.input_dim() != m.d_h + m.tau_e * m.d_o || m.g_net.output_dim() != 2 * m.d_o)
    throw std::invalid_argument("NeuralHmm: emission net dims inconsistent");
  if (m.init_dist.dim() != m.d_h)
    throw std::invalid_argument("NeuralHmm: init distribution dim mismatch");
}

// Flattened window of the tau observations y[end-tau .. end-1], zero-padded on
// the left when end < tau.
inline Vec obs_window(const std::vector<Vec>& y, std::size_t end, std::size_t tau,
                      std::size_t d_o) {
  Vec w(tau * d_o, 0.0);
  for (std::size_t k = 0; k < tau; ++k) {
    // slot k holds y[end - tau + k]
    std::size_t pos = end + k;  // == (end - tau + k) + tau, avoids unsigned wrap
    if (pos < tau) continue;
    std::size_t idx = pos - tau;
    if (idx >= y.size()) throw std::invalid_argument("obs_window: index past sequence end");
    std::copy(y[idx].begin(), y[idx].end(), w.begin() + static_cast<std::ptrdiff_t>(k * d_o));
  }
  return w;
}

inline DiagGaussian split_head(const NeuralHmm& m, const Vec& out, std::size_t d) {
  DiagGaussian g;
  g.mean.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d));
  g.log_var.assign(out.begin() + static_cast<std::ptrdiff_t>(d), out.end());
  for (double& lv : g.log_var) lv = std::clamp(lv, m.log_var_min, m.log_var_max);
  return g;
}

// Distribution of x_{t+1} given x_t (and the transition window when tau_t > 0).
inline DiagGaussian transition_dist(const NeuralHmm& m, const Vec& x, const Vec& window = {}) {
  if (x.size() != m.d_h) throw std::invalid_argument("transition_dist: latent dim mismatch");
  if (window.size() != m.tau_t * m.d_o)
    throw std::invalid_argument("transition_dist: window length mismatch");
  Vec in;
  in.reserve(x.size() + window.size());
  in.insert(in.end(), x.begin(), x.end());
  in.insert(in.end(), window.begin(), window.end());
  return split_head(m, mlp_forward(m.f_net, in), m.d_h);
}

// Distribution of y_t given x_t (and the strictly-past emission window).
inline DiagGaussian emission_dist(const NeuralHmm& m, const Vec& x, const Vec& window = {}) {
  if (x.size() != m.d_h) throw std::invalid_argument("emission_dist: latent dim mismatch");
  if (window.size() != m.tau_e * m.d_o)
    throw std::invalid_argument("emission_dist: window length mismatch");
  Vec in;
  in.reserve(x.size() + window.size());
  in.insert(in.end(), x.begin(), x.end());
  in.insert(in.end(), window.begin(), window.end());
  return split_head(m, mlp_forward(m.g_net, in), m.d_o);
}

inline DiagGaussian standard_normal(std::size_t d) {
  DiagGaussian g;
  g.mean.assign(d, 0.0);
  g.log_var.assign(d, 0.0);
  return g;
}

inline NeuralHmm make_neural_hmm(std::size_t d_h, std::size_t d_o, std::size_t depth,
                                 std::size_t hidden_width, std::uint64_t seed,
                                 std::size_t tau_e = 0, std::size_t tau_t = 0) {
  if (d_h < 1 || d_o < 1) throw std::invalid_argument("make_neural_hmm: dims must be >= 1");
  NeuralHmm m;
  m.d_h = d_h;
  m.d_o = d_o;
  m.tau_e = tau_e;
  m.tau_t = tau_t;
  std::vector<std::size_t> f_sizes{d_h + tau_t * d_o};
  std::vector<std::size_t> g_sizes{d_h + tau_e * d_o};
  for (std::size_t k = 0; k < depth; ++k) {
    f_sizes.push_back(hidden_width);
    g_sizes.push_back(hidden_width);
  }
  f_sizes.push_back(2 * d_h);
  g_sizes.push_back(2 * d_o);
  m.f_net = mlp_init(f_sizes, mix_seed(seed, 1));
  m.g_net = mlp_init(g_sizes, mix_seed(seed, 2));
  m.init_dist = standard_normal(d_h);
  return m;
}

// Depth-0 model: affine transition/emission means with constant (state
// independent) unit variances, i.e. a linear-Gaussian state-space model.
inline NeuralHmm make_vanilla(std::size_t d_h, std::size_t d_o, std::uint64_t seed) {
  NeuralHmm m = make_neural_hmm(d_h, d_o, 0, 0, seed);
  // zero the log-variance weight rows so variance does not depend on the state
  auto zero_log_var_rows = [](Mlp& net, std::size_t d) {
    std::size_t in = net.layer_sizes[0];
    for (std::size_t i = d; i < 2 * d; ++i)
      for (std::size_t j = 0; j < in; ++j) net.weights[0][i * in + j] = 0.0;
  };
  zero_log_var_rows(m.f_net, d_h);
  zero_log_var_rows(m.g_net, d_o);
  return m;
}

struct SimResult {
  std::vector<Vec> latents;       // x_0 .. x_T
  std::vector<Vec> observations;  // y_0 .. y_T
};

// Ancestral sampling for T+1 steps.
inline SimResult simulate(const NeuralHmm& m, std::size_t T, Rng& rng) {
  check_model_shapes(m);
  SimResult r;
  r.latents.reserve(T + 1);
  r.observations.reserve(T + 1);
  Vec x = gauss_sample(m.init_dist, rng);
  for (std::size_t t = 0; t <= T; ++t) {
    Vec we = obs_window(r.observations, t, m.tau_e, m.d_o);
    Vec y = gauss_sample(emission_dist(m, x, we), rng);
    r.latents.push_back(x);
    r.observations.push_back(std::move(y));
    if (t < T) {
      Vec wt = obs_window(r.observations, t + 1, m.tau_t, m.d_o);
      x = gauss_sample(transition_dist(m, x, wt), rng);
    }
  }
  return r;
}

inline nlohmann::json model_to_json(const NeuralHmm& m) {
  nlohmann::json j;
  j["d_h"] = m.d_h;
  j["d_o"] = m.d_o;
  j["tau_e"] = m.tau_e;
  j["tau_t"] = m.tau_t;
  j["f_net"] = mlp_to_json(m.f_net);
  j["g_net"] = mlp_to_json(m.g_net);
  j["init_mean"] = m.init_dist.mean;
  j["init_log_var"] = m.init_dist.log_var;
  j["log_var_min"] = m.log_var_min;
  j["log_var_max"] = m.log_var_max;
  return j;
}

inline NeuralHmm model_from_json(const nlohmann::json& j) {
  NeuralHmm m;
  m.d_h = j.at("d_h").get<std::size_t>();
  m.d_o = j.at("d_o").get<std::size_t>();
  m.tau_e = j.at("tau_e").get<std::size_t>();
  m.tau_t = j.at("tau_t").get<std::size_t>();
  m.f_net = mlp_from_json(j.at("f_net"));
  m.g_net = mlp_from_json(j.at("g_net"));
  m.init_dist.mean = j.at("init_mean").get<Vec>();
  m.init_dist.log_var = j.at("init_log_var").get<Vec>();
  m.log_var_min = j.value("log_var_min", -10.0);
  m.log_var_max = j.value("log_var_max", 10.0);
  check_model_shapes(m);
  return m;
}

}  // namespace nhmm
