#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "nhmm/common.hpp"
#include "nhmm/data.hpp"
#include "nhmm/model.hpp"
#include "nhmm/parallel.hpp"
#include "nhmm/smc.hpp"

namespace nhmm {

struct PredictionReport {
  std::vector<double> per_trajectory_mean;
  double mean = 0.0;
  double std_dev = 0.0;
  std::size_t particle_count = 0;
  std::size_t skipped = 0;  // trajectories with no step to predict
  std::string model_descriptor;
};

struct PredOptions {
  bool squared = false;     // report mean squared error instead of distance
  bool sample_point = false;  // sample the predictive draw instead of taking means
  std::size_t n_threads = 1;
};

// One-step-ahead prediction error: after filtering y_{0:t}, push every
// particle through the transition and emission means and average with the
// filtering weights to predict y_{t+1}.
inline PredictionReport one_step_error(const NeuralHmm& m, const Dataset& data, std::size_t n,
                                       std::uint64_t seed, const PredOptions& opts = {}) {
  if (data.feature_dim != m.d_o)
    throw std::invalid_argument("one_step_error: dataset dim does not match model d_o");
  PredictionReport rep;
  rep.particle_count = n;
  rep.per_trajectory_mean.assign(data.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<char> skipped(data.size(), 0);

  parallel_for(data.size(), opts.n_threads, [&](std::size_t j) {
    const auto& y = data.trajectories[j].observations;
    if (y.size() < 2) {
      skipped[j] = 1;
      return;
    }
    Rng rng = child_rng(seed, j);
    SmcResult r = bootstrap_filter(m, y, n, rng);
    Rng prng = child_rng(mix_seed(seed, 0x9e1), j);
    std::size_t T = y.size() - 1;
    double err_sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      Vec wt = obs_window(y, t + 1, m.tau_t, m.d_o);
      Vec we = obs_window(y, t + 1, m.tau_e, m.d_o);
      Vec pred(m.d_o, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        DiagGaussian td = transition_dist(m, r.states[t][i], wt);
        Vec xn = opts.sample_point ? gauss_sample(td, prng) : td.mean;
        DiagGaussian ed = emission_dist(m, xn, we);
        Vec yn = opts.sample_point ? gauss_sample(ed, prng) : ed.mean;
        double w = r.step_weights[t][i];
        for (std::size_t k = 0; k < m.d_o; ++k) pred[k] += w * yn[k];
      }
      double d2 = 0.0;
      for (std::size_t k = 0; k < m.d_o; ++k) {
        double rr = pred[k] - y[t + 1][k];
        d2 += rr * rr;
      }
      err_sum += opts.squared ? d2 : std::sqrt(d2);
    }
    rep.per_trajectory_mean[j] = err_sum / static_cast<double>(T);
  });

  std::vector<double> vals;
  for (std::size_t j = 0; j < data.size(); ++j) {
    if (skipped[j]) {
      ++rep.skipped;
      continue;
    }
    vals.push_back(rep.per_trajectory_mean[j]);
  }
  if (!vals.empty()) {
    rep.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    double ss = 0.0;
    for (double v : vals) ss += (v - rep.mean) * (v - rep.mean);
    rep.std_dev = std::sqrt(ss / static_cast<double>(vals.size()));
  }
  return rep;
}

enum class LatentExtraction { max_weight_path, weighted_mean_path };

struct LatentPath {
  std::vector<Vec> states;  // length T+1
  LatentExtraction method = LatentExtraction::max_weight_path;
};

inline LatentPath extract_latents(const NeuralHmm& m, const Trajectory& traj, std::size_t n,
                                  Rng& rng,
                                  LatentExtraction method = LatentExtraction::max_weight_path) {
  SmcResult r = bootstrap_filter(m, traj.observations, n, rng);
  LatentPath out;
  out.method = method;
  std::size_t T = r.horizon();
  if (method == LatentExtraction::max_weight_path) {
    std::size_t best = static_cast<std::size_t>(
        std::max_element(r.final_weights.begin(), r.final_weights.end()) -
        r.final_weights.begin());
    out.states = r.paths[best];
  } else {
    out.states.assign(T + 1, Vec(m.d_h, 0.0));
    for (std::size_t i = 0; i < r.n_particles(); ++i)
      for (std::size_t t = 0; t <= T; ++t)
        for (std::size_t k = 0; k < m.d_h; ++k)
          out.states[t][k] += r.final_weights[i] * r.paths[i][t][k];
  }
  return out;
}

struct KMeansResult {
  std::vector<std::size_t> labels;
  std::vector<Vec> centroids;
  double inertia = 0.0;
};

namespace detail {

inline double sq_dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    double r = a[k] - b[k];
    s += r * r;
  }
  return s;
}

}  // namespace detail

// Lloyd iteration with distance-weighted seeding; assignment ties go to the
// lowest centroid index, an emptied cluster is reseeded at the farthest point.
inline KMeansResult kmeans(const std::vector<Vec>& points, std::size_t k, std::uint64_t seed,
                           std::size_t max_iters = 100) {
  if (points.empty() || k < 1 || k > points.size())
    throw std::invalid_argument("kmeans: need 1 <= k <= #points");
  Rng rng = make_rng(seed);
  std::vector<Vec> centroids;
  centroids.reserve(k);
  {
    std::uniform_int_distribution<std::size_t> u(0, points.size() - 1);
    centroids.push_back(points[u(rng)]);
    Vec d2(points.size());
    while (centroids.size() < k) {
      double total = 0.0;
      for (std::size_t p = 0; p < points.size(); ++p) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& c : centroids) best = std::min(best, detail::sq_dist(points[p], c));
        d2[p] = best;
        total += best;
      }
      if (total <= 0.0) {
        // all remaining points coincide with a centroid
        centroids.push_back(points[u(rng)]);
        continue;
      }
      std::uniform_real_distribution<double> ur(0.0, total);
      double v = ur(rng), acc = 0.0;
      std::size_t chosen = points.size() - 1;
      for (std::size_t p = 0; p < points.size(); ++p) {
        acc += d2[p];
        if (v <= acc) {
          chosen = p;
          break;
        }
      }
      centroids.push_back(points[chosen]);
    }
  }

  KMeansResult res;
  res.labels.assign(points.size(), 0);
  for (std::size_t it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (std::size_t p = 0; p < points.size(); ++p) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        double d = detail::sq_dist(points[p], centroids[c]);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      if (arg != res.labels[p]) {
        res.labels[p] = arg;
        changed = true;
      }
    }
    std::vector<Vec> sums(k, Vec(points[0].size(), 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t p = 0; p < points.size(); ++p) {
      ++counts[res.labels[p]];
      for (std::size_t d = 0; d < points[p].size(); ++d) sums[res.labels[p]][d] += points[p][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // reseed at the point farthest from its centroid
        double worst = -1.0;
        std::size_t far = 0;
        for (std::size_t p = 0; p < points.size(); ++p) {
          double d = detail::sq_dist(points[p], centroids[res.labels[p]]);
          if (d > worst) {
            worst = d;
            far = p;
          }
        }
        centroids[c] = points[far];
        changed = true;
      } else {
        for (std::size_t d = 0; d < sums[c].size(); ++d)
          centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
      }
    }
    if (!changed && it > 0) break;
  }
  res.centroids = centroids;
  res.inertia = 0.0;
  for (std::size_t p = 0; p < points.size(); ++p)
    res.inertia += detail::sq_dist(points[p], centroids[res.labels[p]]);
  return res;
}

struct PcaResult {
  std::vector<Vec> projected;       // mean-centered scores, one row per point
  std::vector<Vec> components;      // orthonormal rows, length = input dim
  Vec explained_variance;           // eigenvalues, descending
};

// Top principal components of the sample covariance via power iteration with
// deflation. Returns fewer components if the covariance degenerates.
inline PcaResult pca(const std::vector<Vec>& points, std::size_t n_components,
                     double tol = 1e-10, std::size_t max_iters = 10000) {
  if (points.empty()) throw std::invalid_argument("pca: no points");
  std::size_t d = points[0].size();
  if (n_components > d || n_components > points.size())
    throw std::invalid_argument("pca: n_components must be <= dim and <= #points");

  Vec mean(d, 0.0);
  for (const auto& p : points)
    for (std::size_t k = 0; k < d; ++k) mean[k] += p[k];
  for (double& v : mean) v /= static_cast<double>(points.size());

  std::vector<Vec> centered(points.size(), Vec(d));
  for (std::size_t p = 0; p < points.size(); ++p)
    for (std::size_t k = 0; k < d; ++k) centered[p][k] = points[p][k] - mean[k];

  std::vector<Vec> cov(d, Vec(d, 0.0));
  for (const auto& c : centered)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a][b] += c[a] * c[b];
  for (auto& row : cov)
    for (double& v : row) v /= static_cast<double>(points.size());

  PcaResult res;
  Rng rng = make_rng(12345);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t comp = 0; comp < n_components; ++comp) {
    Vec v(d);
    for (double& x : v) x = nd(rng);
    double lambda = 0.0;
    for (std::size_t it = 0; it < max_iters; ++it) {
      Vec w(d, 0.0);
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) w[a] += cov[a][b] * v[b];
      double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
      if (norm < 1e-14) {
        lambda = 0.0;
        break;
      }
      for (double& x : w) x /= norm;
      double diff = 0.0;
      for (std::size_t a = 0; a < d; ++a) diff = std::max(diff, std::abs(std::abs(w[a]) - std::abs(v[a])));
      v = w;
      lambda = norm;
      if (diff < tol) break;
    }
    if (lambda < 1e-12) break;  // degenerate covariance: stop with fewer components
    res.components.push_back(v);
    res.explained_variance.push_back(lambda);
    // deflate
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a][b] -= lambda * v[a] * v[b];
  }

  res.projected.assign(points.size(), Vec(res.components.size()));
  for (std::size_t p = 0; p < points.size(); ++p)
    for (std::size_t c = 0; c < res.components.size(); ++c)
      res.projected[p][c] = std::inner_product(centered[p].begin(), centered[p].end(),
                                               res.components[c].begin(), 0.0);
  return res;
}

// Best k=2 label agreement after optimal label permutation.
inline double binary_cluster_agreement(const std::vector<std::size_t>& labels,
                                       const std::vector<std::size_t>& truth) {
  if (labels.size() != truth.size() || labels.empty())
    throw std::invalid_argument("binary_cluster_agreement: size mismatch");
  std::size_t same = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if ((labels[i] != 0) == (truth[i] != 0)) ++same;
  double a = static_cast<double>(same) / static_cast<double>(labels.size());
  return std::max(a, 1.0 - a);
}

}  // namespace nhmm
