#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "nhmm/common.hpp"

namespace nhmm {

// Dense feed-forward net: tanh on hidden layers, identity on the output
// layer. depth() == 0 is a single affine map.
struct Mlp {
  std::vector<std::size_t> layer_sizes;
  // weights[k] is row-major (layer_sizes[k+1] x layer_sizes[k])
  std::vector<std::vector<double>> weights;
  std::vector<Vec> biases;

  std::size_t depth() const { return layer_sizes.size() - 2; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t n_layers() const { return layer_sizes.size() - 1; }
};

// Per-layer gradients, shape-congruent with an Mlp.
struct ParamGrad {
  std::vector<std::vector<double>> weights;
  std::vector<Vec> biases;

  void scale(double a) {
    for (auto& w : weights)
      for (double& v : w) v *= a;
    for (auto& b : biases)
      for (double& v : b) v *= a;
  }

  void add(const ParamGrad& other) {
    for (std::size_t k = 0; k < weights.size(); ++k) {
      for (std::size_t i = 0; i < weights[k].size(); ++i) weights[k][i] += other.weights[k][i];
      for (std::size_t i = 0; i < biases[k].size(); ++i) biases[k][i] += other.biases[k][i];
    }
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& w : weights)
      for (double v : w) s += v * v;
    for (const auto& b : biases)
      for (double v : b) s += v * v;
    return s;
  }

  bool is_finite() const {
    for (const auto& w : weights)
      for (double v : w)
        if (!std::isfinite(v)) return false;
    for (const auto& b : biases)
      for (double v : b)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

inline ParamGrad zero_grad(const Mlp& net) {
  ParamGrad g;
  g.weights.reserve(net.n_layers());
  g.biases.reserve(net.n_layers());
  for (std::size_t k = 0; k < net.n_layers(); ++k) {
    g.weights.emplace_back(net.weights[k].size(), 0.0);
    g.biases.emplace_back(net.biases[k].size(), 0.0);
  }
  return g;
}

enum class OptScheme { sgd, adam };

struct OptimizerState {
  double learning_rate = 1e-3;
  OptScheme scheme = OptScheme::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step_count = 0;
  // first/second moment accumulators, allocated lazily to the net's shape
  std::vector<std::vector<double>> m_w, v_w;
  std::vector<Vec> m_b, v_b;
};

inline OptimizerState make_optimizer(double learning_rate, OptScheme scheme) {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  OptimizerState s;
  s.learning_rate = learning_rate;
  s.scheme = scheme;
  return s;
}

inline Mlp mlp_init(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw std::invalid_argument("mlp_init: need at least 2 layer sizes");
  for (std::size_t s : layer_sizes)
    if (s < 1) throw std::invalid_argument("mlp_init: layer sizes must be >= 1");
  Mlp net;
  net.layer_sizes = layer_sizes;
  Rng rng = make_rng(seed);
  for (std::size_t k = 0; k + 1 < layer_sizes.size(); ++k) {
    std::size_t fan_in = layer_sizes[k], fan_out = layer_sizes[k + 1];
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(fan_out * fan_in);
    for (double& v : w) v = u(rng);
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(fan_out, 0.0);
  }
  return net;
}

inline Vec mlp_forward(const Mlp& net, const Vec& x) {
  if (x.size() != net.input_dim()) throw std::invalid_argument("mlp_forward: input dim mismatch");
  if (!all_finite(x)) throw std::invalid_argument("mlp_forward: non-finite input");
  Vec a = x;
  for (std::size_t k = 0; k < net.n_layers(); ++k) {
    std::size_t in = net.layer_sizes[k], out = net.layer_sizes[k + 1];
    Vec z(out);
    const auto& w = net.weights[k];
    for (std::size_t i = 0; i < out; ++i) {
      double s = net.biases[k][i];
      for (std::size_t j = 0; j < in; ++j) s += w[i * in + j] * a[j];
      z[i] = s;
    }
    if (k + 1 < net.n_layers())
      for (double& v : z) v = std::tanh(v);
    a = std::move(z);
  }
  return a;
}

// Gradient of <upstream, mlp_forward(net, x)> with respect to every parameter
// and to x.
inline std::pair<ParamGrad, Vec> mlp_backward(const Mlp& net, const Vec& x, const Vec& upstream) {
  if (x.size() != net.input_dim()) throw std::invalid_argument("mlp_backward: input dim mismatch");
  if (upstream.size() != net.output_dim())
    throw std::invalid_argument("mlp_backward: upstream dim mismatch");

  // forward with cached activations (post-nonlinearity, per layer boundary)
  std::vector<Vec> acts;
  acts.reserve(net.n_layers() + 1);
  acts.push_back(x);
  for (std::size_t k = 0; k < net.n_layers(); ++k) {
    std::size_t in = net.layer_sizes[k], out = net.layer_sizes[k + 1];
    Vec z(out);
    const auto& w = net.weights[k];
    for (std::size_t i = 0; i < out; ++i) {
      double s = net.biases[k][i];
      for (std::size_t j = 0; j < in; ++j) s += w[i * in + j] * acts[k][j];
      z[i] = s;
    }
    if (k + 1 < net.n_layers())
      for (double& v : z) v = std::tanh(v);
    acts.push_back(std::move(z));
  }

  ParamGrad grad = zero_grad(net);
  Vec delta = upstream;  // d loss / d (layer output, post-activation)
  for (std::size_t k = net.n_layers(); k-- > 0;) {
    std::size_t in = net.layer_sizes[k], out = net.layer_sizes[k + 1];
    // back through tanh on hidden layers (output layer is identity)
    if (k + 1 < net.n_layers()) {
      for (std::size_t i = 0; i < out; ++i) {
        double a = acts[k + 1][i];  // tanh(z)
        delta[i] *= 1.0 - a * a;
      }
    }
    const auto& w = net.weights[k];
    auto& gw = grad.weights[k];
    for (std::size_t i = 0; i < out; ++i) {
      grad.biases[k][i] = delta[i];
      for (std::size_t j = 0; j < in; ++j) gw[i * in + j] = delta[i] * acts[k][j];
    }
    Vec prev(in, 0.0);
    for (std::size_t i = 0; i < out; ++i)
      for (std::size_t j = 0; j < in; ++j) prev[j] += delta[i] * w[i * in + j];
    delta = std::move(prev);
  }
  return {std::move(grad), std::move(delta)};
}

inline void optimizer_step(Mlp& net, const ParamGrad& grad, OptimizerState& state) {
  if (grad.weights.size() != net.n_layers())
    throw std::invalid_argument("optimizer_step: grad shape mismatch");
  for (std::size_t k = 0; k < net.n_layers(); ++k) {
    if (grad.weights[k].size() != net.weights[k].size() ||
        grad.biases[k].size() != net.biases[k].size())
      throw std::invalid_argument("optimizer_step: grad shape mismatch");
    for (double v : grad.weights[k])
      if (!std::isfinite(v))
        throw numeric_error("optimizer_step: non-finite weight gradient in layer " +
                            std::to_string(k));
    for (double v : grad.biases[k])
      if (!std::isfinite(v))
        throw numeric_error("optimizer_step: non-finite bias gradient in layer " +
                            std::to_string(k));
  }

  if (state.scheme == OptScheme::sgd) {
    for (std::size_t k = 0; k < net.n_layers(); ++k) {
      for (std::size_t i = 0; i < net.weights[k].size(); ++i)
        net.weights[k][i] -= state.learning_rate * grad.weights[k][i];
      for (std::size_t i = 0; i < net.biases[k].size(); ++i)
        net.biases[k][i] -= state.learning_rate * grad.biases[k][i];
    }
    ++state.step_count;
    return;
  }

  if (state.m_w.empty()) {
    for (std::size_t k = 0; k < net.n_layers(); ++k) {
      state.m_w.emplace_back(net.weights[k].size(), 0.0);
      state.v_w.emplace_back(net.weights[k].size(), 0.0);
      state.m_b.emplace_back(net.biases[k].size(), 0.0);
      state.v_b.emplace_back(net.biases[k].size(), 0.0);
    }
  }
  ++state.step_count;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  auto update = [&](double& p, double g, double& m, double& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    p -= state.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + state.eps);
  };
  for (std::size_t k = 0; k < net.n_layers(); ++k) {
    for (std::size_t i = 0; i < net.weights[k].size(); ++i)
      update(net.weights[k][i], grad.weights[k][i], state.m_w[k][i], state.v_w[k][i]);
    for (std::size_t i = 0; i < net.biases[k].size(); ++i)
      update(net.biases[k][i], grad.biases[k][i], state.m_b[k][i], state.v_b[k][i]);
  }
}

inline nlohmann::json mlp_to_json(const Mlp& net) {
  nlohmann::json j;
  j["layer_sizes"] = net.layer_sizes;
  j["weights"] = net.weights;
  j["biases"] = net.biases;
  j["activation"] = "tanh";
  return j;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp net;
  net.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  net.weights = j.at("weights").get<std::vector<std::vector<double>>>();
  net.biases = j.at("biases").get<std::vector<Vec>>();
  if (net.layer_sizes.size() < 2 || net.weights.size() != net.n_layers() ||
      net.biases.size() != net.n_layers())
    throw invalid_data_error("mlp_from_json: inconsistent layer structure");
  for (std::size_t k = 0; k < net.n_layers(); ++k) {
    if (net.weights[k].size() != net.layer_sizes[k] * net.layer_sizes[k + 1] ||
        net.biases[k].size() != net.layer_sizes[k + 1])
      throw invalid_data_error("mlp_from_json: weight shape mismatch at layer " +
                               std::to_string(k));
  }
  return net;
}

}  // namespace nhmm
