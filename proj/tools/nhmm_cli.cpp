// Command-line driver: dataset generation, training, evaluation sweeps, and
// latent-state analysis, all emitting plain CSV/JSON.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nhmm/nhmm.hpp"

using namespace nhmm;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string out_path(const std::string& path) {
  const char* base = std::getenv("NHMM_OUT_DIR");
  if (base == nullptr || path.empty() || std::filesystem::path(path).is_absolute()) return path;
  std::filesystem::create_directories(base);
  return (std::filesystem::path(base) / path).string();
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw invalid_data_error("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_data_error("cannot open '" + path + "'");
  json j;
  in >> j;
  return j;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct ModelArgs {
  std::size_t depth = 3;
  std::size_t d_h = 2;
  std::size_t width = 16;
  std::size_t tau_e = 0;
  std::size_t tau_t = 0;
};

void add_model_flags(CLI::App* cmd, ModelArgs& a) {
  cmd->add_option("--depth", a.depth, "hidden layers per net (0 = affine vanilla model)");
  cmd->add_option("--dh", a.d_h, "latent dimension");
  cmd->add_option("--width", a.width, "hidden layer width");
  cmd->add_option("--tau-e", a.tau_e, "emission observation-memory window");
  cmd->add_option("--tau-t", a.tau_t, "transition observation-memory window");
}

void add_train_flags(CLI::App* cmd, TrainConfig& c, std::string& config_path,
                     std::string& optimizer, std::string& m_step) {
  cmd->add_option("--config", config_path, "JSON config file; explicit flags override it");
  cmd->add_option("--em-iters", c.n_em_iters, "EM iterations at the given fraction");
  cmd->add_option("--sgd-steps", c.n_sgd_steps_per_m, "gradient steps per M-step");
  cmd->add_option("--batch", c.minibatch_samples, "minibatch size (0 = full batch)");
  cmd->add_option("--lr", c.learning_rate, "learning rate");
  cmd->add_option("--particles", c.particle_count, "particle count N");
  cmd->add_option("--fraction", c.trajectory_fraction, "fraction of trajectories per E-step");
  cmd->add_option("--fine-tune-iters", c.fine_tune_iters, "full-dataset iterations at the end");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--threads", c.n_threads, "worker threads");
  cmd->add_option("--optimizer", optimizer, "sgd | adam")->check(CLI::IsMember({"sgd", "adam"}));
  cmd->add_option("--m-step", m_step, "auto | sgd | closed_form")
      ->check(CLI::IsMember({"auto", "sgd", "closed_form"}));
}

TrainConfig resolve_train_config(const CLI::App* cmd, TrainConfig flags,
                                 const std::string& config_path, const std::string& optimizer,
                                 const std::string& m_step) {
  TrainConfig c = flags;
  if (!config_path.empty()) {
    c = train_config_from_json(read_json_file(config_path));
    // flags given on the command line win over the config file
    auto set = [&](const std::string& name) { return cmd->count(name) > 0; };
    if (set("--em-iters")) c.n_em_iters = flags.n_em_iters;
    if (set("--sgd-steps")) c.n_sgd_steps_per_m = flags.n_sgd_steps_per_m;
    if (set("--batch")) c.minibatch_samples = flags.minibatch_samples;
    if (set("--lr")) c.learning_rate = flags.learning_rate;
    if (set("--particles")) c.particle_count = flags.particle_count;
    if (set("--fraction")) c.trajectory_fraction = flags.trajectory_fraction;
    if (set("--fine-tune-iters")) c.fine_tune_iters = flags.fine_tune_iters;
    if (set("--seed")) c.seed = flags.seed;
    if (set("--threads")) c.n_threads = flags.n_threads;
  }
  if (cmd->count("--optimizer") || config_path.empty())
    c.optimizer = optimizer == "sgd" ? OptScheme::sgd : OptScheme::adam;
  if (cmd->count("--m-step") || config_path.empty()) {
    if (m_step == "sgd")
      c.m_step = MStepScheme::sgd;
    else if (m_step == "closed_form")
      c.m_step = MStepScheme::closed_form;
    else
      c.m_step = MStepScheme::automatic;
  }
  return c;
}

NeuralHmm build_model(const ModelArgs& a, std::size_t d_o, std::uint64_t seed) {
  if (a.depth == 0 && a.tau_e == 0 && a.tau_t == 0) {
    NeuralHmm m = make_vanilla(a.d_h, d_o, seed);
    return m;
  }
  return make_neural_hmm(a.d_h, d_o, a.depth, a.width, seed, a.tau_e, a.tau_t);
}

void save_latents_csv(const std::string& path, const std::string& traj_id, const LatentPath& lp,
                      const std::vector<std::size_t>* labels,
                      const std::vector<Vec>* projected) {
  std::ofstream out(path);
  if (!out) throw invalid_data_error("cannot open '" + path + "'");
  std::size_t d = lp.states.empty() ? 0 : lp.states[0].size();
  std::size_t pd = projected && !projected->empty() ? (*projected)[0].size() : 0;
  out << "traj_id,t";
  for (std::size_t k = 0; k < d; ++k) out << ",z" << k;
  for (std::size_t k = 0; k < pd; ++k) out << ",pc" << k;
  if (labels) out << ",label";
  out << "\n";
  for (std::size_t t = 0; t < lp.states.size(); ++t) {
    out << traj_id << ',' << t;
    for (double v : lp.states[t]) out << ',' << fmt(v);
    for (std::size_t k = 0; k < pd; ++k) out << ',' << fmt((*projected)[t][k]);
    if (labels) out << ',' << (*labels)[t];
    out << "\n";
  }
}

int cmd_generate(const SyntheticConfig& cfg, const std::string& out) {
  Dataset data = generate_synthetic(cfg);
  std::string csv = out_path(out);
  save_csv(data, csv);
  json sidecar;
  sidecar["n_targets"] = cfg.n_targets;
  sidecar["feature_dim"] = cfg.feature_dim;
  sidecar["sigma"] = cfg.sigma;
  sidecar["epsilon"] = cfg.epsilon;
  sidecar["steps"] = cfg.steps;
  sidecar["n_trajectories"] = cfg.n_trajectories;
  sidecar["box_lo"] = cfg.box_lo;
  sidecar["box_hi"] = cfg.box_hi;
  sidecar["seed"] = cfg.seed;
  sidecar["targets"] = data.targets;
  write_json_file(sidecar, csv + ".json");
  std::cout << "wrote " << csv << " (" << data.size() << " trajectories)\n";
  return kExitOk;
}

int cmd_train(const std::string& data_path, const ModelArgs& margs, const TrainConfig& cfg,
              const std::string& model_out, const std::string& history_out) {
  Dataset data = load_csv(data_path);
  if (data.empty()) throw invalid_data_error("dataset '" + data_path + "' is empty");
  NeuralHmm m = build_model(margs, data.feature_dim, cfg.seed);
  TrainResult r = train(m, data, cfg);
  write_json_file(model_to_json(r.model), out_path(model_out));
  save_history_csv(r.history, out_path(history_out));
  std::cout << "trained " << (cfg.n_em_iters + cfg.fine_tune_iters) << " iterations; model -> "
            << out_path(model_out) << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& data_path, const ModelArgs& margs, const TrainConfig& base_cfg,
             const std::string& sweep, const std::vector<double>& values,
             const std::vector<std::uint64_t>& seeds, const std::string& out,
             double test_fraction) {
  if (values.empty()) throw CLI::ValidationError("--values", "sweep list must be non-empty");
  Dataset data = load_csv(data_path);
  if (data.empty()) throw invalid_data_error("dataset '" + data_path + "' is empty");

  std::ofstream csv(out_path(out));
  if (!csv) throw invalid_data_error("cannot open '" + out_path(out) + "'");
  csv << "sweep_var,value,metric,mean,std,seed\n";
  for (double value : values) {
    for (std::uint64_t seed : seeds) {
      ModelArgs ma = margs;
      TrainConfig cfg = base_cfg;
      cfg.seed = seed;
      if (sweep == "depth")
        ma.depth = static_cast<std::size_t>(value);
      else if (sweep == "dh")
        ma.d_h = static_cast<std::size_t>(value);
      else if (sweep == "particles")
        cfg.particle_count = static_cast<std::size_t>(value);
      else if (sweep == "fraction")
        cfg.trajectory_fraction = value;
      else
        throw CLI::ValidationError("--sweep", "unknown sweep variable '" + sweep + "'");

      auto [train_set, test_set] = train_test_split(data, test_fraction, seed);
      NeuralHmm m = build_model(ma, data.feature_dim, seed);
      TrainResult r = train(m, train_set, cfg);

      PredOptions popts;
      popts.n_threads = cfg.n_threads;
      PredictionReport rep =
          one_step_error(r.model, test_set, cfg.particle_count, mix_seed(seed, 0xe7a1), popts);
      csv << sweep << ',' << fmt(value) << ",one_step_error," << fmt(rep.mean) << ','
          << fmt(rep.std_dev) << ',' << seed << "\n";

      Vec lls(test_set.size());
      parallel_for(test_set.size(), cfg.n_threads, [&](std::size_t j) {
        Rng rng = child_rng(mix_seed(seed, 0x11e1d), j);
        lls[j] = estimate_loglik(bootstrap_filter(r.model, test_set.trajectories[j].observations,
                                                  cfg.particle_count, rng, cfg.smc));
      });
      double mean_ll = 0.0, sd_ll = 0.0;
      for (double v : lls) mean_ll += v;
      mean_ll /= static_cast<double>(lls.size());
      for (double v : lls) sd_ll += (v - mean_ll) * (v - mean_ll);
      sd_ll = std::sqrt(sd_ll / static_cast<double>(lls.size()));
      csv << sweep << ',' << fmt(value) << ",heldout_loglik," << fmt(mean_ll) << ','
          << fmt(sd_ll) << ',' << seed << "\n";
    }
  }
  std::cout << "wrote " << out_path(out) << "\n";
  return kExitOk;
}

const Trajectory& find_trajectory(const Dataset& data, const std::string& id) {
  for (const auto& t : data.trajectories)
    if (t.id == id) return t;
  throw invalid_data_error("trajectory '" + id + "' not found in dataset");
}

int cmd_latents(const std::string& model_path, const std::string& data_path,
                const std::string& traj_id, std::size_t particles, std::uint64_t seed,
                const std::string& method, const std::string& out) {
  NeuralHmm m = model_from_json(read_json_file(model_path));
  Dataset data = load_csv(data_path);
  if (data.feature_dim != m.d_o)
    throw invalid_data_error("model d_o=" + std::to_string(m.d_o) +
                             " does not match dataset feature_dim=" +
                             std::to_string(data.feature_dim));
  const Trajectory& traj = find_trajectory(data, traj_id);
  Rng rng = make_rng(seed);
  LatentPath lp = extract_latents(m, traj, particles, rng,
                                  method == "mean" ? LatentExtraction::weighted_mean_path
                                                   : LatentExtraction::max_weight_path);
  save_latents_csv(out_path(out), traj_id, lp, nullptr, nullptr);
  std::cout << "wrote " << out_path(out) << " (" << lp.states.size() << " rows)\n";
  return kExitOk;
}

int cmd_cluster(const std::string& model_path, const std::string& data_path,
                const std::string& traj_id, std::size_t particles, std::uint64_t seed,
                std::size_t k, std::size_t pca_components, const std::string& out) {
  NeuralHmm m = model_from_json(read_json_file(model_path));
  Dataset data = load_csv(data_path);
  if (data.feature_dim != m.d_o)
    throw invalid_data_error("model d_o=" + std::to_string(m.d_o) +
                             " does not match dataset feature_dim=" +
                             std::to_string(data.feature_dim));
  const Trajectory& traj = find_trajectory(data, traj_id);
  Rng rng = make_rng(seed);
  LatentPath lp = extract_latents(m, traj, particles, rng);
  KMeansResult km = kmeans(lp.states, k, mix_seed(seed, 0xc1u));
  std::vector<Vec> projected;
  if (pca_components > 0) {
    PcaResult pr = pca(lp.states, std::min(pca_components, m.d_h));
    projected = pr.projected;
  }
  save_latents_csv(out_path(out), traj_id, lp, &km.labels,
                   pca_components > 0 ? &projected : nullptr);
  std::cout << "wrote " << out_path(out) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-latent neural HMM trainer and analysis toolkit"};
  app.require_subcommand(1);

  // generate
  SyntheticConfig gen_cfg;
  std::string gen_out = "dataset.csv";
  auto* gen = app.add_subcommand("generate", "generate a synthetic bouncing-targets dataset");
  gen->add_option("--targets", gen_cfg.n_targets, "number of targets")->check(CLI::PositiveNumber);
  gen->add_option("--dim", gen_cfg.feature_dim, "feature dimension")->check(CLI::PositiveNumber);
  gen->add_option("--sigma", gen_cfg.sigma, "target noise std");
  gen->add_option("--epsilon", gen_cfg.epsilon, "arrival radius");
  gen->add_option("--steps", gen_cfg.steps, "steps per trajectory");
  gen->add_option("--trajs", gen_cfg.n_trajectories, "trajectory count");
  gen->add_option("--box-lo", gen_cfg.box_lo, "target box lower corner");
  gen->add_option("--box-hi", gen_cfg.box_hi, "target box upper corner");
  gen->add_option("--seed", gen_cfg.seed, "seed");
  gen->add_option("--out", gen_out, "output CSV path");

  // train
  std::string train_data, train_model_out = "model.json", train_history_out = "history.csv";
  std::string train_config_path, train_opt = "adam", train_mstep = "auto";
  ModelArgs train_margs;
  TrainConfig train_flags;
  auto* tr = app.add_subcommand("train", "train a neural HMM with SMC-EM");
  tr->add_option("--data", train_data, "dataset CSV")->required();
  tr->add_option("--model-out", train_model_out, "output model JSON");
  tr->add_option("--history", train_history_out, "output history CSV");
  add_model_flags(tr, train_margs);
  add_train_flags(tr, train_flags, train_config_path, train_opt, train_mstep);

  // eval
  std::string eval_data, eval_sweep = "dh", eval_out = "eval.csv";
  std::vector<double> eval_values;
  std::vector<std::uint64_t> eval_seeds{0};
  double eval_test_fraction = 0.2;
  ModelArgs eval_margs;
  TrainConfig eval_flags;
  std::string eval_config_path, eval_opt = "adam", eval_mstep = "auto";
  auto* ev = app.add_subcommand("eval", "sweep a parameter, train per point, report metrics");
  ev->add_option("--data", eval_data, "dataset CSV")->required();
  ev->add_option("--sweep", eval_sweep, "depth | dh | particles | fraction")
      ->check(CLI::IsMember({"depth", "dh", "particles", "fraction"}));
  ev->add_option("--values", eval_values, "sweep values")->required();
  ev->add_option("--seeds", eval_seeds, "seeds, one full run per (value, seed)");
  ev->add_option("--test-fraction", eval_test_fraction, "held-out trajectory fraction");
  ev->add_option("--out", eval_out, "output CSV");
  add_model_flags(ev, eval_margs);
  add_train_flags(ev, eval_flags, eval_config_path, eval_opt, eval_mstep);

  // latents
  std::string lat_model, lat_data, lat_traj, lat_method = "max", lat_out = "latents.csv";
  std::size_t lat_particles = 256;
  std::uint64_t lat_seed = 0;
  auto* la = app.add_subcommand("latents", "extract a latent path for one trajectory");
  la->add_option("--model", lat_model, "model JSON")->required();
  la->add_option("--data", lat_data, "dataset CSV")->required();
  la->add_option("--traj", lat_traj, "trajectory id")->required();
  la->add_option("--particles", lat_particles, "particle count");
  la->add_option("--seed", lat_seed, "seed");
  la->add_option("--method", lat_method, "max | mean")->check(CLI::IsMember({"max", "mean"}));
  la->add_option("--out", lat_out, "output CSV");

  // cluster
  std::string cl_model, cl_data, cl_traj, cl_out = "clusters.csv";
  std::size_t cl_particles = 256, cl_k = 2, cl_pca = 0;
  std::uint64_t cl_seed = 0;
  auto* cl = app.add_subcommand("cluster", "k-means (and optional PCA) over extracted latents");
  cl->add_option("--model", cl_model, "model JSON")->required();
  cl->add_option("--data", cl_data, "dataset CSV")->required();
  cl->add_option("--traj", cl_traj, "trajectory id")->required();
  cl->add_option("--particles", cl_particles, "particle count");
  cl->add_option("--seed", cl_seed, "seed");
  cl->add_option("--k", cl_k, "cluster count")->check(CLI::PositiveNumber);
  cl->add_option("--pca", cl_pca, "project onto this many principal components");
  cl->add_option("--out", cl_out, "output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_cfg, gen_out);
    if (tr->parsed()) {
      TrainConfig cfg =
          resolve_train_config(tr, train_flags, train_config_path, train_opt, train_mstep);
      return cmd_train(train_data, train_margs, cfg, train_model_out, train_history_out);
    }
    if (ev->parsed()) {
      TrainConfig cfg =
          resolve_train_config(ev, eval_flags, eval_config_path, eval_opt, eval_mstep);
      return cmd_eval(eval_data, eval_margs, cfg, eval_sweep, eval_values, eval_seeds, eval_out,
                      eval_test_fraction);
    }
    if (la->parsed())
      return cmd_latents(lat_model, lat_data, lat_traj, lat_particles, lat_seed, lat_method,
                         lat_out);
    if (cl->parsed())
      return cmd_cluster(cl_model, cl_data, cl_traj, cl_particles, cl_seed, cl_k, cl_pca, cl_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const parse_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const invalid_data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const degenerate_filter_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
