#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nhmm/common.hpp"
#include "nhmm/data.hpp"
#include "nhmm/gaussian.hpp"
#include "nhmm/linalg.hpp"
#include "nhmm/model.hpp"
#include "nhmm/nn.hpp"
#include "nhmm/parallel.hpp"
#include "nhmm/smc.hpp"

namespace nhmm {

enum class MStepScheme { automatic, sgd, closed_form };

struct TrainConfig {
  std::size_t n_em_iters = 50;
  std::size_t n_sgd_steps_per_m = 50;
  std::size_t minibatch_samples = 256;  // 0 = full batch
  double learning_rate = 1e-2;
  std::size_t particle_count = 128;
  double trajectory_fraction = 1.0;  // rho, fraction filtered per E-step
  std::size_t fine_tune_iters = 0;   // full-dataset iterations appended at the end
  std::uint64_t seed = 0;
  OptScheme optimizer = OptScheme::adam;
  MStepScheme m_step = MStepScheme::automatic;
  double grad_clip_norm = 10.0;
  std::size_t n_threads = 1;
  SmcOptions smc;

  void validate() const {
    if (!(trajectory_fraction > 0.0) || trajectory_fraction > 1.0)
      throw std::invalid_argument("TrainConfig: trajectory_fraction must be in (0,1]");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (particle_count < 1) throw std::invalid_argument("TrainConfig: particle_count must be >= 1");
  }
};

struct IterationRecord {
  std::size_t iteration = 0;
  double loglik = 0.0;  // estimated total log-likelihood on the evaluation subset
  double q_before = 0.0;
  double q_after = 0.0;
  double seconds = 0.0;
  double fraction = 1.0;
};

using TrainHistory = std::vector<IterationRecord>;

// One pooled (particle, time) training sample from an E-step filter run.
struct TrainingSample {
  Vec y;        // observation at time t
  Vec x;        // particle state at time t
  Vec x_prev;   // particle state at t-1; empty at t = 0 (no transition term)
  Vec win_e;    // emission window, length tau_e * d_o
  Vec win_t;    // transition window, length tau_t * d_o
  double weight = 0.0;  // final particle weight
};

struct SampleLossGrad {
  double value = 0.0;
  ParamGrad f_grad;
  ParamGrad g_grad;
};

// Weighted per-sample term of the surrogate objective and its exact gradients
// with respect to both nets. The clamp on net log-variance outputs propagates
// a zero gradient where active.
inline SampleLossGrad sample_loss_grad(const NeuralHmm& m, const TrainingSample& s) {
  if (s.y.size() != m.d_o || s.x.size() != m.d_h)
    throw std::invalid_argument("sample_loss_grad: sample dims mismatch");
  SampleLossGrad out;
  out.f_grad = zero_grad(m.f_net);
  out.g_grad = zero_grad(m.g_net);

  auto term = [&](const Mlp& net, const Vec& state, const Vec& window, const Vec& target,
                  std::size_t d, ParamGrad& grad) {
    Vec in;
    in.reserve(state.size() + window.size());
    in.insert(in.end(), state.begin(), state.end());
    in.insert(in.end(), window.begin(), window.end());
    Vec raw = mlp_forward(net, in);
    DiagGaussian g = split_head(m, raw, d);
    double logp = gauss_logpdf(g, target);
    auto [gm, glv] = gauss_logpdf_grad(g, target);
    Vec upstream(2 * d);
    for (std::size_t k = 0; k < d; ++k) {
      upstream[k] = s.weight * gm[k];
      bool clamped = raw[d + k] < m.log_var_min || raw[d + k] > m.log_var_max;
      upstream[d + k] = clamped ? 0.0 : s.weight * glv[k];
    }
    auto [pg, ig] = mlp_backward(net, in, upstream);
    (void)ig;
    grad.add(pg);
    return logp;
  };

  double value = term(m.g_net, s.x, s.win_e, s.y, m.d_o, out.g_grad);
  if (!s.x_prev.empty()) {
    if (s.x_prev.size() != m.d_h)
      throw std::invalid_argument("sample_loss_grad: predecessor dim mismatch");
    value += term(m.f_net, s.x_prev, s.win_t, s.x, m.d_h, out.f_grad);
  }
  out.value = s.weight * value;
  if (!std::isfinite(out.value)) throw numeric_error("sample_loss_grad: non-finite loss value");
  return out;
}

// Exact weighted-least-squares M-step for the depth-0 (affine Gaussian)
// model: regress particle states on their predecessors (transition) and
// observations on states (emission); variances are weighted mean squared
// residuals floored at exp(log_var_min).
inline NeuralHmm closed_form_m_step(const NeuralHmm& m, const std::vector<SmcResult>& filters,
                                    const std::vector<std::vector<Vec>>& obs_seqs,
                                    double ridge = 1e-8) {
  if (!m.is_vanilla() || m.tau_e != 0 || m.tau_t != 0)
    throw unsupported_model_error("closed_form_m_step: model must be depth-0 and memoryless");
  if (filters.size() != obs_seqs.size())
    throw std::invalid_argument("closed_form_m_step: filters/observations mismatch");

  auto weighted_affine_fit = [&](std::size_t in_dim, std::size_t out_dim, auto&& for_each_sample) {
    // normal equations over z = [input; 1]
    std::size_t p = in_dim + 1;
    Mat gram(p, p);
    Mat rhs(p, out_dim);
    double wsum = 0.0;
    for_each_sample([&](const Vec& in, const Vec& target, double w) {
      Vec z(p);
      std::copy(in.begin(), in.end(), z.begin());
      z[in_dim] = 1.0;
      for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = 0; b <= a; ++b) gram(a, b) += w * z[a] * z[b];
        for (std::size_t k = 0; k < out_dim; ++k) rhs(a, k) += w * z[a] * target[k];
      }
      wsum += w;
    });
    for (std::size_t a = 0; a < p; ++a) {
      for (std::size_t b = a + 1; b < p; ++b) gram(a, b) = gram(b, a);
      gram(a, a) += ridge;
    }
    if (!(wsum > 0.0))
      throw degenerate_statistics_error("closed_form_m_step: zero total weight");
    Mat l;
    try {
      l = cholesky(gram);
    } catch (const numeric_error&) {
      throw degenerate_statistics_error("closed_form_m_step: singular normal equations");
    }
    Mat coef = cholesky_solve_mat(l, rhs);  // p x out_dim
    // residual variance per output dimension
    Vec var(out_dim, 0.0);
    for_each_sample([&](const Vec& in, const Vec& target, double w) {
      for (std::size_t k = 0; k < out_dim; ++k) {
        double pred = coef(in_dim, k);
        for (std::size_t a = 0; a < in_dim; ++a) pred += coef(a, k) * in[a];
        double r = target[k] - pred;
        var[k] += w * r * r;
      }
    });
    double floor = std::exp(m.log_var_min);
    for (double& v : var) v = std::clamp(v / wsum, floor, std::exp(m.log_var_max));
    return std::make_pair(coef, var);
  };

  auto transition_samples = [&](auto&& fn) {
    for (std::size_t j = 0; j < filters.size(); ++j) {
      const SmcResult& r = filters[j];
      for (std::size_t i = 0; i < r.n_particles(); ++i)
        for (std::size_t t = 1; t <= r.horizon(); ++t)
          fn(r.paths[i][t - 1], r.paths[i][t], r.final_weights[i]);
    }
  };
  auto emission_samples = [&](auto&& fn) {
    for (std::size_t j = 0; j < filters.size(); ++j) {
      const SmcResult& r = filters[j];
      for (std::size_t i = 0; i < r.n_particles(); ++i)
        for (std::size_t t = 0; t <= r.horizon(); ++t)
          fn(r.paths[i][t], obs_seqs[j][t], r.final_weights[i]);
    }
  };

  NeuralHmm next = m;
  auto install = [](Mlp& net, const Mat& coef, const Vec& var) {
    std::size_t in = net.input_dim();
    std::size_t d = var.size();
    for (std::size_t k = 0; k < d; ++k) {
      for (std::size_t a = 0; a < in; ++a) net.weights[0][k * in + a] = coef(a, k);
      net.biases[0][k] = coef(in, k);
      net.biases[0][d + k] = std::log(var[k]);
      for (std::size_t a = 0; a < in; ++a) net.weights[0][(d + k) * in + a] = 0.0;
    }
  };
  auto [tc, tv] = weighted_affine_fit(m.d_h, m.d_h, transition_samples);
  install(next.f_net, tc, tv);
  auto [ec, ev] = weighted_affine_fit(m.d_h, m.d_o, emission_samples);
  install(next.g_net, ec, ev);
  return next;
}

namespace detail {

// Fixed-chunk gradient reduction: partials are accumulated per 512-sample
// chunk and summed in chunk order, so the result does not depend on the
// thread count.
constexpr std::size_t kGradChunk = 512;

struct PooledSample {
  std::size_t traj = 0;  // index into the selected filter list
  std::size_t particle = 0;
  std::size_t t = 0;
};

inline TrainingSample make_sample(const NeuralHmm& m, const SmcResult& r,
                                  const std::vector<Vec>& y, const PooledSample& ps) {
  TrainingSample s;
  s.y = y[ps.t];
  s.x = r.paths[ps.particle][ps.t];
  if (ps.t > 0) s.x_prev = r.paths[ps.particle][ps.t - 1];
  s.win_e = obs_window(y, ps.t, m.tau_e, m.d_o);
  s.win_t = ps.t > 0 ? obs_window(y, ps.t, m.tau_t, m.d_o) : Vec(m.tau_t * m.d_o, 0.0);
  s.weight = r.final_weights[ps.particle];
  return s;
}

}  // namespace detail

struct EmIterationResult {
  NeuralHmm model;
  IterationRecord record;
};

// One EM iteration: particle-filter a random trajectory subset, then ascend
// the weighted surrogate objective with minibatch gradient steps.
inline EmIterationResult em_sgd_iteration(const NeuralHmm& m, const Dataset& data,
                                          const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("em_sgd_iteration: empty dataset");
  if (data.feature_dim != m.d_o)
    throw std::invalid_argument("em_sgd_iteration: dataset dim does not match model d_o");
  auto t_start = std::chrono::steady_clock::now();

  const std::size_t k_total = data.size();
  std::size_t n_sel = static_cast<std::size_t>(
      std::ceil(cfg.trajectory_fraction * static_cast<double>(k_total)));
  n_sel = std::clamp<std::size_t>(n_sel, 1, k_total);
  std::vector<std::size_t> order(k_total);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> selected(order.begin(),
                                    order.begin() + static_cast<std::ptrdiff_t>(n_sel));
  std::sort(selected.begin(), selected.end());

  std::uint64_t filter_seed = rng();
  std::vector<SmcResult> filters(n_sel);
  parallel_for(n_sel, cfg.n_threads, [&](std::size_t k) {
    Rng frng = child_rng(filter_seed, selected[k]);
    filters[k] = bootstrap_filter(m, data.trajectories[selected[k]].observations,
                                  cfg.particle_count, frng, cfg.smc);
  });

  auto sum_q = [&](const NeuralHmm& model) {
    Vec partial(n_sel);
    parallel_for(n_sel, cfg.n_threads, [&](std::size_t k) {
      partial[k] = q_hat(model, filters[k], data.trajectories[selected[k]].observations);
    });
    return std::accumulate(partial.begin(), partial.end(), 0.0);
  };

  IterationRecord rec;
  rec.fraction = cfg.trajectory_fraction;
  rec.q_before = sum_q(m);

  // pooled (trajectory, particle, time) triples
  std::vector<detail::PooledSample> pool;
  for (std::size_t k = 0; k < n_sel; ++k) {
    const SmcResult& r = filters[k];
    for (std::size_t i = 0; i < r.n_particles(); ++i)
      for (std::size_t t = 0; t <= r.horizon(); ++t) pool.push_back({k, i, t});
  }

  NeuralHmm model = m;
  OptimizerState f_opt = make_optimizer(cfg.learning_rate, cfg.optimizer);
  OptimizerState g_opt = make_optimizer(cfg.learning_rate, cfg.optimizer);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  bool full_batch = cfg.minibatch_samples == 0 || cfg.minibatch_samples >= pool.size();

  for (std::size_t step = 0; step < cfg.n_sgd_steps_per_m; ++step) {
    std::vector<detail::PooledSample> batch;
    if (full_batch) {
      batch = pool;
    } else {
      batch.resize(cfg.minibatch_samples);
      for (auto& b : batch) b = pool[pick(rng)];
    }
    std::size_t n_chunks = (batch.size() + detail::kGradChunk - 1) / detail::kGradChunk;
    std::vector<ParamGrad> f_parts(n_chunks), g_parts(n_chunks);
    parallel_for(n_chunks, cfg.n_threads, [&](std::size_t c) {
      ParamGrad fg = zero_grad(model.f_net);
      ParamGrad gg = zero_grad(model.g_net);
      std::size_t lo = c * detail::kGradChunk;
      std::size_t hi = std::min(batch.size(), lo + detail::kGradChunk);
      for (std::size_t b = lo; b < hi; ++b) {
        const auto& ps = batch[b];
        TrainingSample s = detail::make_sample(model, filters[ps.traj],
                                               data.trajectories[selected[ps.traj]].observations,
                                               ps);
        SampleLossGrad slg = sample_loss_grad(model, s);
        fg.add(slg.f_grad);
        gg.add(slg.g_grad);
      }
      f_parts[c] = std::move(fg);
      g_parts[c] = std::move(gg);
    });
    ParamGrad f_grad = zero_grad(model.f_net);
    ParamGrad g_grad = zero_grad(model.g_net);
    for (std::size_t c = 0; c < n_chunks; ++c) {
      f_grad.add(f_parts[c]);
      g_grad.add(g_parts[c]);
    }
    // ascent: optimizer descends, so negate; clip the joint global norm
    f_grad.scale(-1.0);
    g_grad.scale(-1.0);
    double norm = std::sqrt(f_grad.squared_norm() + g_grad.squared_norm());
    if (cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm) {
      double s = cfg.grad_clip_norm / norm;
      f_grad.scale(s);
      g_grad.scale(s);
    }
    optimizer_step(model.f_net, f_grad, f_opt);
    optimizer_step(model.g_net, g_grad, g_opt);
  }

  rec.q_after = sum_q(model);
  rec.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(model), rec};
}

// Closed-form EM iteration for the vanilla model.
inline EmIterationResult em_closed_form_iteration(const NeuralHmm& m, const Dataset& data,
                                                  const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("em_closed_form_iteration: empty dataset");
  auto t_start = std::chrono::steady_clock::now();

  const std::size_t k_total = data.size();
  std::size_t n_sel = static_cast<std::size_t>(
      std::ceil(cfg.trajectory_fraction * static_cast<double>(k_total)));
  n_sel = std::clamp<std::size_t>(n_sel, 1, k_total);
  std::vector<std::size_t> order(k_total);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> selected(order.begin(),
                                    order.begin() + static_cast<std::ptrdiff_t>(n_sel));
  std::sort(selected.begin(), selected.end());

  std::uint64_t filter_seed = rng();
  std::vector<SmcResult> filters(n_sel);
  std::vector<std::vector<Vec>> obs(n_sel);
  parallel_for(n_sel, cfg.n_threads, [&](std::size_t k) {
    obs[k] = data.trajectories[selected[k]].observations;
    Rng frng = child_rng(filter_seed, selected[k]);
    filters[k] = bootstrap_filter(m, obs[k], cfg.particle_count, frng, cfg.smc);
  });

  IterationRecord rec;
  rec.fraction = cfg.trajectory_fraction;
  auto sum_q = [&](const NeuralHmm& model) {
    double s = 0.0;
    for (std::size_t k = 0; k < n_sel; ++k) s += q_hat(model, filters[k], obs[k]);
    return s;
  };
  rec.q_before = sum_q(m);
  NeuralHmm model = closed_form_m_step(m, filters, obs);
  rec.q_after = sum_q(model);
  rec.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(model), rec};
}

struct TrainResult {
  NeuralHmm model;
  TrainHistory history;
};

inline TrainResult train(const NeuralHmm& m, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  NeuralHmm model = m;
  TrainHistory history;
  std::size_t total = cfg.n_em_iters + cfg.fine_tune_iters;
  if (total == 0) return {std::move(model), std::move(history)};
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (data.feature_dim != m.d_o)
    throw std::invalid_argument("train: dataset dim does not match model d_o");

  bool closed =
      cfg.m_step == MStepScheme::closed_form ||
      (cfg.m_step == MStepScheme::automatic && m.is_vanilla() && m.tau_e == 0 && m.tau_t == 0);

  // fixed held-in evaluation subset for the per-iteration likelihood trace
  std::vector<std::size_t> eval_idx(data.size());
  std::iota(eval_idx.begin(), eval_idx.end(), 0);
  {
    Rng erng = child_rng(cfg.seed, 0x9d5ULL);
    std::shuffle(eval_idx.begin(), eval_idx.end(), erng);
    eval_idx.resize(std::min<std::size_t>(eval_idx.size(), 8));
    std::sort(eval_idx.begin(), eval_idx.end());
  }
  std::uint64_t eval_seed = mix_seed(cfg.seed, 0xe7a1ULL);

  Rng rng = make_rng(mix_seed(cfg.seed, 0x7a11ULL));
  for (std::size_t it = 0; it < total; ++it) {
    TrainConfig iter_cfg = cfg;
    if (it >= cfg.n_em_iters) iter_cfg.trajectory_fraction = 1.0;
    EmIterationResult res = closed ? em_closed_form_iteration(model, data, iter_cfg, rng)
                                   : em_sgd_iteration(model, data, iter_cfg, rng);
    model = std::move(res.model);
    res.record.iteration = it;

    Vec eval_ll(eval_idx.size());
    parallel_for(eval_idx.size(), cfg.n_threads, [&](std::size_t k) {
      Rng frng = child_rng(mix_seed(eval_seed, it), eval_idx[k]);
      SmcResult r = bootstrap_filter(model, data.trajectories[eval_idx[k]].observations,
                                     cfg.particle_count, frng, cfg.smc);
      eval_ll[k] = estimate_loglik(r);
    });
    res.record.loglik = std::accumulate(eval_ll.begin(), eval_ll.end(), 0.0);
    history.push_back(res.record);
  }
  return {std::move(model), std::move(history)};
}

inline void save_history_csv(const TrainHistory& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw invalid_data_error("save_history_csv: cannot open '" + path + "'");
  out << "iteration,loglik,q_before,q_after,seconds,fraction\n";
  char buf[256];
  for (const auto& r : h) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.6f,%.17g\n", r.iteration, r.loglik,
                  r.q_before, r.q_after, r.seconds, r.fraction);
    out << buf;
  }
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.n_em_iters = j.value("n_em_iters", c.n_em_iters);
  c.n_sgd_steps_per_m = j.value("n_sgd_steps_per_m", c.n_sgd_steps_per_m);
  c.minibatch_samples = j.value("minibatch_samples", c.minibatch_samples);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.particle_count = j.value("particle_count", c.particle_count);
  c.trajectory_fraction = j.value("trajectory_fraction", c.trajectory_fraction);
  c.fine_tune_iters = j.value("fine_tune_iters", c.fine_tune_iters);
  c.seed = j.value("seed", c.seed);
  std::string opt = j.value("optimizer", std::string("adam"));
  if (opt == "adam")
    c.optimizer = OptScheme::adam;
  else if (opt == "sgd")
    c.optimizer = OptScheme::sgd;
  else
    throw invalid_data_error("TrainConfig: unknown optimizer '" + opt + "'");
  std::string ms = j.value("m_step", std::string("auto"));
  if (ms == "auto")
    c.m_step = MStepScheme::automatic;
  else if (ms == "sgd")
    c.m_step = MStepScheme::sgd;
  else if (ms == "closed_form")
    c.m_step = MStepScheme::closed_form;
  else
    throw invalid_data_error("TrainConfig: unknown m_step '" + ms + "'");
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  c.n_threads = j.value("threads", c.n_threads);
  c.smc.adaptive_resampling = j.value("adaptive_resampling", false);
  c.smc.ess_fraction = j.value("ess_fraction", 0.5);
  c.validate();
  return c;
}

}  // namespace nhmm
