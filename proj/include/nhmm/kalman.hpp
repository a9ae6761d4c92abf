#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "nhmm/common.hpp"
#include "nhmm/gaussian.hpp"
#include "nhmm/linalg.hpp"
#include "nhmm/model.hpp"

namespace nhmm {

// x_{t+1} = A x_t + b + w,  w ~ N(0, diag(q_var))
// y_t     = C x_t + d + v,  v ~ N(0, diag(r_var))
// x_0 ~ N(init_mean, diag(init_var))
struct LinearGaussianModel {
  Mat a;
  Vec b;
  Vec q_var;
  Mat c;
  Vec d;
  Vec r_var;
  Vec init_mean;
  Vec init_var;

  std::size_t d_h() const { return init_mean.size(); }
  std::size_t d_o() const { return d.size(); }
};

inline void check_lg_shapes(const LinearGaussianModel& lg) {
  std::size_t dh = lg.d_h(), dob = lg.d_o();
  if (lg.a.rows != dh || lg.a.cols != dh || lg.b.size() != dh || lg.q_var.size() != dh ||
      lg.c.rows != dob || lg.c.cols != dh || lg.r_var.size() != dob || lg.init_var.size() != dh)
    throw std::invalid_argument("LinearGaussianModel: inconsistent shapes");
  for (double v : lg.q_var)
    if (!(v > 0.0)) throw std::invalid_argument("LinearGaussianModel: q_var must be > 0");
  for (double v : lg.r_var)
    if (!(v > 0.0)) throw std::invalid_argument("LinearGaussianModel: r_var must be > 0");
  for (double v : lg.init_var)
    if (!(v > 0.0)) throw std::invalid_argument("LinearGaussianModel: init_var must be > 0");
}

// Extract the affine maps of a depth-0 model. Requires state-independent
// noise, i.e. zero weight rows for the log-variance outputs.
inline LinearGaussianModel from_vanilla(const NeuralHmm& m) {
  if (!m.is_vanilla() || m.tau_e != 0 || m.tau_t != 0)
    throw unsupported_model_error("from_vanilla: model is not a depth-0, memoryless HMM");
  auto extract = [&](const Mlp& net, std::size_t d, Mat& mat, Vec& off, Vec& var) {
    std::size_t in = net.input_dim();
    mat = Mat(d, in);
    off.resize(d);
    var.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < in; ++j) mat(i, j) = net.weights[0][i * in + j];
      off[i] = net.biases[0][i];
    }
    for (std::size_t i = d; i < 2 * d; ++i) {
      for (std::size_t j = 0; j < in; ++j)
        if (net.weights[0][i * in + j] != 0.0)
          throw unsupported_model_error("from_vanilla: state-dependent variance");
      double lv = std::clamp(net.biases[0][i], m.log_var_min, m.log_var_max);
      var[i - d] = std::exp(lv);
    }
  };
  LinearGaussianModel lg;
  extract(m.f_net, m.d_h, lg.a, lg.b, lg.q_var);
  extract(m.g_net, m.d_o, lg.c, lg.d, lg.r_var);
  lg.init_mean = m.init_dist.mean;
  lg.init_var.resize(m.d_h);
  for (std::size_t i = 0; i < m.d_h; ++i) lg.init_var[i] = std::exp(m.init_dist.log_var[i]);
  check_lg_shapes(lg);
  return lg;
}

inline NeuralHmm to_vanilla(const LinearGaussianModel& lg) {
  check_lg_shapes(lg);
  NeuralHmm m = make_vanilla(lg.d_h(), lg.d_o(), 0);
  auto fill = [](Mlp& net, const Mat& mat, const Vec& off, const Vec& var) {
    std::size_t d = off.size(), in = net.input_dim();
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < in; ++j) net.weights[0][i * in + j] = mat(i, j);
      net.biases[0][i] = off[i];
      net.biases[0][d + i] = std::log(var[i]);
    }
    for (std::size_t i = d; i < 2 * d; ++i)
      for (std::size_t j = 0; j < in; ++j) net.weights[0][i * in + j] = 0.0;
  };
  fill(m.f_net, lg.a, lg.b, lg.q_var);
  fill(m.g_net, lg.c, lg.d, lg.r_var);
  m.init_dist.mean = lg.init_mean;
  m.init_dist.log_var.resize(lg.d_h());
  for (std::size_t i = 0; i < lg.d_h(); ++i) m.init_dist.log_var[i] = std::log(lg.init_var[i]);
  return m;
}

// Exact log p(y_{0:T}) via the innovations form of the Kalman filter.
inline double kalman_loglik(const LinearGaussianModel& lg, const std::vector<Vec>& y) {
  check_lg_shapes(lg);
  if (y.empty()) throw std::invalid_argument("kalman_loglik: empty observation sequence");
  std::size_t dh = lg.d_h(), dob = lg.d_o();
  for (const Vec& yt : y)
    if (yt.size() != dob) throw std::invalid_argument("kalman_loglik: observation dim mismatch");

  Vec mean = lg.init_mean;
  Mat cov(dh, dh);
  for (std::size_t i = 0; i < dh; ++i) cov(i, i) = lg.init_var[i];

  double loglik = 0.0;
  Mat ct = transpose(lg.c);
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (t > 0) {
      mean = mat_vec(lg.a, mean);
      for (std::size_t i = 0; i < dh; ++i) mean[i] += lg.b[i];
      cov = mat_mul(mat_mul(lg.a, cov), transpose(lg.a));
      for (std::size_t i = 0; i < dh; ++i) cov(i, i) += lg.q_var[i];
    }
    // innovation
    Vec pred = mat_vec(lg.c, mean);
    Vec innov(dob);
    for (std::size_t i = 0; i < dob; ++i) innov[i] = y[t][i] - pred[i] - lg.d[i];
    Mat pct = mat_mul(cov, ct);
    Mat s = mat_mul(lg.c, pct);
    for (std::size_t i = 0; i < dob; ++i) s(i, i) += lg.r_var[i];
    Mat l = cholesky(s);  // throws numeric_error on a non-PD innovation covariance
    Vec sv = cholesky_solve(l, innov);
    double quad = 0.0;
    for (std::size_t i = 0; i < dob; ++i) quad += innov[i] * sv[i];
    loglik += -0.5 * (static_cast<double>(dob) * kLogTwoPi + log_det_from_cholesky(l) + quad);
    // update
    Mat gain = transpose(cholesky_solve_mat(l, transpose(pct)));  // P C' S^-1
    Vec corr = mat_vec(gain, innov);
    for (std::size_t i = 0; i < dh; ++i) mean[i] += corr[i];
    Mat kc = mat_mul(gain, lg.c);
    Mat ikc = Mat::identity(dh);
    for (std::size_t i = 0; i < dh; ++i)
      for (std::size_t j = 0; j < dh; ++j) ikc(i, j) -= kc(i, j);
    cov = mat_mul(ikc, cov);
    // symmetrize against drift
    for (std::size_t i = 0; i < dh; ++i)
      for (std::size_t j = i + 1; j < dh; ++j) {
        double v = 0.5 * (cov(i, j) + cov(j, i));
        cov(i, j) = v;
        cov(j, i) = v;
      }
  }
  return loglik;
}

}  // namespace nhmm
