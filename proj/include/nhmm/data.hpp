#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nhmm/common.hpp"

namespace nhmm {

struct LatentRecord {
  std::size_t target_idx = 0;
  Vec sampled_point;  // the Gaussian draw the step moved toward
};

struct Trajectory {
  std::string id;
  std::vector<Vec> observations;  // y_0 .. y_T
  std::vector<LatentRecord> latents;  // empty unless synthetic

  std::size_t horizon() const { return observations.empty() ? 0 : observations.size() - 1; }
};

struct SyntheticConfig {
  std::size_t n_targets = 5;
  std::size_t feature_dim = 2;
  double sigma = 0.5;    // std of the draw around the current target
  double epsilon = 1.0;  // arrival radius triggering a target switch
  std::size_t steps = 200;       // T, so each trajectory has T+1 observations
  std::size_t n_trajectories = 50;
  double box_lo = 0.0;
  double box_hi = 10.0;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  std::size_t feature_dim = 0;
  std::string provenance;
  std::vector<Vec> targets;  // synthetic target positions, when known

  std::size_t size() const { return trajectories.size(); }
  bool empty() const { return trajectories.empty(); }
};

// Bouncing-particle process: a point moves by unit steps toward a noisy draw
// around its current target; reaching the target (within epsilon) resamples
// the target uniformly.
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_targets < 1 || cfg.feature_dim < 1 || !(cfg.sigma > 0.0) || !(cfg.epsilon > 0.0))
    throw std::invalid_argument("generate_synthetic: invalid config");
  if (!(cfg.box_hi > cfg.box_lo))
    throw std::invalid_argument("generate_synthetic: empty target box");

  std::size_t d = cfg.feature_dim;
  Rng target_rng = child_rng(cfg.seed, 0);
  std::uniform_real_distribution<double> box(cfg.box_lo, cfg.box_hi);
  std::vector<Vec> targets(cfg.n_targets, Vec(d));
  for (auto& tgt : targets)
    for (double& v : tgt) v = box(target_rng);

  Dataset data;
  data.feature_dim = d;
  data.provenance = "synthetic";
  data.targets = targets;
  data.trajectories.resize(cfg.n_trajectories);
  for (std::size_t j = 0; j < cfg.n_trajectories; ++j) {
    Rng rng = child_rng(cfg.seed, j + 1);
    std::uniform_real_distribution<double> ubox(cfg.box_lo, cfg.box_hi);
    std::uniform_int_distribution<std::size_t> utgt(0, cfg.n_targets - 1);
    std::normal_distribution<double> noise(0.0, cfg.sigma);

    Trajectory traj;
    traj.id = "traj" + std::to_string(j);
    Vec y(d);
    for (double& v : y) v = ubox(rng);
    std::size_t tgt = utgt(rng);
    traj.observations.push_back(y);
    for (std::size_t t = 0; t < cfg.steps; ++t) {
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double r = y[k] - targets[tgt][k];
        dist += r * r;
      }
      if (std::sqrt(dist) <= cfg.epsilon) tgt = utgt(rng);
      Vec x(d);
      double norm = 0.0;
      do {
        norm = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          x[k] = targets[tgt][k] + noise(rng);
          double r = x[k] - y[k];
          norm += r * r;
        }
        norm = std::sqrt(norm);
      } while (norm == 0.0);  // probability-zero coincidence; redraw
      traj.latents.push_back({tgt, x});
      for (std::size_t k = 0; k < d; ++k) y[k] += (x[k] - y[k]) / norm;
      traj.observations.push_back(y);
    }
    data.trajectories[j] = std::move(traj);
  }
  return data;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw parse_error("non-numeric field '" + s + "'", line);
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

// Header: traj_id,t,y0..y{d-1}[,target_idx,x0..x{d-1}]; rows sorted by
// (traj_id, t).
inline void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw invalid_data_error("save_csv: cannot open '" + path + "'");
  bool with_latents =
      !data.trajectories.empty() &&
      std::all_of(data.trajectories.begin(), data.trajectories.end(),
                  [](const Trajectory& t) { return !t.latents.empty(); });
  out << "traj_id,t";
  for (std::size_t k = 0; k < data.feature_dim; ++k) out << ",y" << k;
  if (with_latents) {
    out << ",target_idx";
    for (std::size_t k = 0; k < data.feature_dim; ++k) out << ",x" << k;
  }
  out << "\n";
  for (const auto& traj : data.trajectories) {
    for (std::size_t t = 0; t < traj.observations.size(); ++t) {
      out << traj.id << ',' << t;
      for (double v : traj.observations[t]) out << ',' << detail::format_double(v);
      if (with_latents) {
        // latents[t] describes the step from t to t+1; last row repeats none
        if (t < traj.latents.size()) {
          out << ',' << traj.latents[t].target_idx;
          for (double v : traj.latents[t].sampled_point) out << ',' << detail::format_double(v);
        } else {
          out << ",-1";
          for (std::size_t k = 0; k < data.feature_dim; ++k) out << ",0";
        }
      }
      out << "\n";
    }
  }
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_data_error("load_csv: cannot open '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  Dataset data;
  data.provenance = path;
  bool with_latents = false;
  std::size_t d = 0;
  if (!std::getline(in, line)) return data;  // empty file: empty dataset
  ++lineno;
  {
    auto cols = detail::split_csv_line(line);
    if (cols.size() < 3 || cols[0] != "traj_id" || cols[1] != "t")
      throw parse_error("bad header", lineno);
    std::size_t k = 2;
    while (k < cols.size() && cols[k] == "y" + std::to_string(k - 2)) ++k;
    d = k - 2;
    if (d == 0) throw parse_error("no observation columns", lineno);
    if (k < cols.size()) {
      if (cols[k] != "target_idx" || cols.size() != 2 + d + 1 + d)
        throw parse_error("bad latent columns", lineno);
      with_latents = true;
    }
  }
  data.feature_dim = d;
  Trajectory* cur = nullptr;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cols = detail::split_csv_line(line);
    std::size_t expect = 2 + d + (with_latents ? 1 + d : 0);
    if (cols.size() != expect)
      throw parse_error("expected " + std::to_string(expect) + " columns, got " +
                            std::to_string(cols.size()),
                        lineno);
    if (cur == nullptr || cur->id != cols[0]) {
      data.trajectories.emplace_back();
      cur = &data.trajectories.back();
      cur->id = cols[0];
    }
    std::size_t t = static_cast<std::size_t>(detail::parse_double(cols[1], lineno));
    if (t != cur->observations.size())
      throw parse_error("rows for trajectory '" + cols[0] + "' not consecutive in t", lineno);
    Vec y(d);
    for (std::size_t k = 0; k < d; ++k) y[k] = detail::parse_double(cols[2 + k], lineno);
    cur->observations.push_back(std::move(y));
    if (with_latents) {
      double ti = detail::parse_double(cols[2 + d], lineno);
      if (ti >= 0) {
        LatentRecord rec;
        rec.target_idx = static_cast<std::size_t>(ti);
        rec.sampled_point.resize(d);
        for (std::size_t k = 0; k < d; ++k)
          rec.sampled_point[k] = detail::parse_double(cols[3 + d + k], lineno);
        cur->latents.push_back(std::move(rec));
      }
    }
  }
  return data;
}

inline std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double test_fraction,
                                                    std::uint64_t seed) {
  if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
    throw std::invalid_argument("train_test_split: fraction must be in (0,1)");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(data.size())));
  n_test = std::min(n_test, data.size());
  Dataset train, test;
  train.feature_dim = test.feature_dim = data.feature_dim;
  train.provenance = data.provenance + ":train";
  test.provenance = data.provenance + ":test";
  std::vector<bool> in_test(data.size(), false);
  for (std::size_t k = 0; k < n_test; ++k) in_test[idx[k]] = true;
  for (std::size_t j = 0; j < data.size(); ++j)
    (in_test[j] ? test : train).trajectories.push_back(data.trajectories[j]);
  return {std::move(train), std::move(test)};
}

}  // namespace nhmm
