// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry points:
//   noi simulate   config.json --out truth.noi [--seed N]
//   noi observe    truth.noi --out prefix [--track-spacing S ...]
//   noi interpolate --method {oi-exact,oi-gd,solver} --config sim.json --obs prefix --out recon.noi
//   noi train      config.json --data dir --out ckpt_dir
//   noi benchmark  config.json --out dir
// Every command is deterministic given its config and seeds; wall-clock
// timings are confined to timings.csv.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "noi/noi.hpp"

namespace fs = std::filesystem;
using noi::json;

namespace {

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw noi::IoError("missing input file: " + path);
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw noi::IoError("cannot create directory " + path + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// shared config fragments
// ---------------------------------------------------------------------------

struct DataCommon {
  int window = 5;
  noi::TrackPattern track;
  double sigma2 = 1e-3;
  noi::IndexRange train, val, test;
  std::uint64_t obs_seed = 1;
};

DataCommon parse_data_common(const json& j) {
  DataCommon d;
  d.window = noi::cfg::get_or(j, "window", 5);
  if (j.contains("track")) d.track = noi::cfg::parse_track(j.at("track"));
  d.sigma2 = noi::cfg::get_or(j, "sigma2", 1e-3);
  NOI_REQUIRE(j.contains("ranges"), noi::ConfigError, "config needs a 'ranges' object");
  const json& r = j.at("ranges");
  noi::cfg::check_keys(r, {"train", "val", "test"}, "ranges");
  d.train = noi::cfg::parse_range(noi::cfg::require<json>(r, "train", "ranges"), "train");
  d.val = noi::cfg::parse_range(noi::cfg::require<json>(r, "val", "ranges"), "val");
  d.test = noi::cfg::parse_range(noi::cfg::require<json>(r, "test", "ranges"), "test");
  d.obs_seed = noi::cfg::get_or<std::uint64_t>(j, "obs_seed", 1);
  return d;
}

noi::ModelSpec parse_model_spec(const json& j) {
  noi::cfg::check_keys(j,
                       {"prior", "hidden", "prior_hidden", "prior_kernel", "iters", "lambda", "lambda_value",
                        "multimodal", "feature_channels", "lambda1", "lambda2", "lambda3", "schedule",
                        "linear_kernel_t", "linear_kernel_s"},
                       "model");
  noi::ModelSpec s;
  s.prior_kind = noi::cfg::get_or<std::string>(j, "prior", "conv-res");
  s.hidden = noi::cfg::get_or(j, "hidden", 16);
  s.prior_hidden = noi::cfg::get_or(j, "prior_hidden", 8);
  s.prior_kernel = noi::cfg::get_or(j, "prior_kernel", 3);
  s.iters = noi::cfg::get_or(j, "iters", 20);
  s.linear_kernel_t = noi::cfg::get_or(j, "linear_kernel_t", 3);
  s.linear_kernel_s = noi::cfg::get_or(j, "linear_kernel_s", 5);
  const std::string lam = noi::cfg::get_or<std::string>(j, "lambda", "trainable");
  if (lam == "sigma2")
    s.lambda = noi::ModelSpec::Lambda::sigma2;
  else if (lam == "fixed")
    s.lambda = noi::ModelSpec::Lambda::fixed;
  else if (lam == "trainable")
    s.lambda = noi::ModelSpec::Lambda::trainable;
  else
    throw noi::ConfigError("model.lambda must be sigma2, fixed or trainable");
  s.lambda_value = noi::cfg::get_or(j, "lambda_value", 0.1);
  s.multimodal = noi::cfg::get_or(j, "multimodal", false);
  s.feature_channels = noi::cfg::get_or(j, "feature_channels", 8);
  s.lambda1 = noi::cfg::get_or(j, "lambda1", 1.0);
  s.lambda2 = noi::cfg::get_or(j, "lambda2", 0.5);
  s.lambda3 = noi::cfg::get_or(j, "lambda3", -1.0);
  if (j.contains("schedule")) s.sched = noi::cfg::parse_schedule(j.at("schedule"));
  return s;
}

// ---------------------------------------------------------------------------
// checkpoints: prior/cost parameter file, solver parameter file, config echo
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& dir, const json& config_echo, noi::SolverModel& model, noi::VarCost& cost,
                     const noi::TrainResult& history) {
  ensure_dir(dir);
  noi::ParamRefs solver_refs;
  model.collect_params(solver_refs);
  noi::ParamRefs cost_refs;
  cost.collect_params(cost_refs);
  noi::write_json_file(dir + "/solver.json", noi::params_to_json(solver_refs, "solver"));
  noi::write_json_file(dir + "/prior.json", noi::params_to_json(cost_refs, "prior"));
  noi::write_json_file(dir + "/config.json", config_echo);
  noi::write_history_csv(dir + "/history.csv", history);
}

void load_checkpoint_params(const std::string& dir, noi::SolverModel& model, noi::VarCost& cost) {
  noi::ParamRefs solver_refs;
  model.collect_params(solver_refs);
  noi::ParamRefs cost_refs;
  cost.collect_params(cost_refs);
  require_file(dir + "/solver.json");
  require_file(dir + "/prior.json");
  noi::params_from_json(noi::read_json_file(dir + "/solver.json"), solver_refs);
  noi::params_from_json(noi::read_json_file(dir + "/prior.json"), cost_refs);
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_simulate(const std::string& config_path, long seed_override, const std::string& out) {
  require_file(config_path);
  std::uint64_t seed = 0;
  const noi::SpdeParams params = noi::cfg::parse_spde(noi::read_json_file(config_path), &seed);
  if (seed_override >= 0) seed = static_cast<std::uint64_t>(seed_override);
  const noi::Field3D truth = noi::simulate(params, seed);
  noi::write_field(out, truth);
  std::cout << "simulate: wrote " << out << " (" << truth.nt() << "x" << truth.ny() << "x" << truth.nx()
            << ", seed " << seed << ")\n";
  return 0;
}

int cmd_observe(const std::string& truth_path, const noi::TrackPattern& track, double sigma2, std::uint64_t seed,
                const std::string& out_prefix) {
  require_file(truth_path);
  const noi::Field3D truth = noi::read_field(truth_path);
  const noi::Mask3D mask = noi::track_mask(truth.nt(), truth.ny(), truth.nx(), track, truth.geom);
  const noi::ObsSet obs = noi::observe(truth, mask, sigma2, seed);
  noi::write_field(out_prefix + ".values.noi", noi::Field3D(noi::Tensor(obs.values), truth.geom));
  noi::write_mask(out_prefix + ".mask.noi", obs.mask);
  json meta;
  meta["sigma2"] = sigma2;
  meta["seed"] = seed;
  json tj;
  tj["spacing"] = track.spacing;
  tj["slope"] = track.slope;
  tj["drift"] = track.drift;
  tj["phase"] = track.phase;
  meta["track"] = std::move(tj);
  meta["observed_fraction"] = obs.mask.fraction();
  noi::write_json_file(out_prefix + ".meta.json", meta);
  std::cout << "observe: fraction " << obs.mask.fraction() << ", wrote " << out_prefix << ".{values,mask}.noi\n";
  return 0;
}

noi::ObsSet load_obs(const std::string& prefix) {
  require_file(prefix + ".values.noi");
  require_file(prefix + ".mask.noi");
  require_file(prefix + ".meta.json");
  const noi::Field3D values = noi::read_field(prefix + ".values.noi");
  noi::Mask3D mask = noi::read_mask(prefix + ".mask.noi");
  const json meta = noi::read_json_file(prefix + ".meta.json");
  const double sigma2 = noi::cfg::require<double>(meta, "sigma2", "obs meta");
  return noi::ObsSet(std::move(mask), noi::Tensor(values.data), sigma2);
}

int cmd_interpolate(const std::string& method, const std::string& config_path, const std::string& obs_prefix,
                    const std::string& model_dir, int iters, const std::string& out, const std::string& trace_path,
                    const std::string& truth_path) {
  require_file(config_path);
  noi::SpdeParams params = noi::cfg::parse_spde(noi::read_json_file(config_path), nullptr);
  noi::ObsSet obs = load_obs(obs_prefix);
  NOI_REQUIRE(obs.mask.ny == params.ny && obs.mask.nx == params.nx, noi::DimensionError,
              "observation grid does not match the simulation config");
  const int window = obs.mask.nt;
  const noi::SparseSym q = noi::precision_matrix(params, window);

  std::optional<noi::Field3D> truth;
  if (!truth_path.empty()) {
    require_file(truth_path);
    truth = noi::read_field(truth_path);
  }

  noi::Field3D recon = noi::Field3D::zeros(window, params.ny, params.nx, params.geom);
  noi::SolveTrace trace;
  noi::OIProblem prob{obs, q, noi::Field3D::zeros(window, params.ny, params.nx, params.geom), std::nullopt};

  if (method == "oi-exact") {
    recon = noi::solve_precision(prob);
    trace.has_mse_truth = truth.has_value();
    trace.rows.push_back(
        {0, obs.sigma2 * noi::oi_cost(recon, prob), 0.0, truth ? noi::mse(recon.data, truth->data) : 0.0, 0.0});
    trace.final_j = trace.rows[0].j;
  } else if (method == "oi-gd") {
    noi::GdOptions opt;
    opt.max_iters = iters > 0 ? iters : 2000;
    auto [x, rows] = noi::gradient_descent_oi(prob, noi::init_state(obs), opt);
    recon = std::move(x);
    for (const auto& r : rows) trace.rows.push_back({r.iter, obs.sigma2 * r.cost, obs.sigma2 * r.grad_norm, 0.0, 0.0});
    trace.final_j = obs.sigma2 * noi::oi_cost(recon, prob);
  } else if (method == "solver") {
    NOI_REQUIRE(!model_dir.empty(), noi::ConfigError, "--method solver requires --model <checkpoint dir>");
    require_file(model_dir + "/config.json");
    const json ck = noi::read_json_file(model_dir + "/config.json");
    NOI_REQUIRE(ck.contains("model"), noi::IoError, "checkpoint config.json has no 'model' section");
    const noi::ModelSpec spec = parse_model_spec(ck.at("model"));
    NOI_REQUIRE(!spec.multimodal, noi::ConfigError,
                "interpolate does not supply a secondary modality; use a unimodal checkpoint");
    noi::VarCost cost = noi::build_cost(spec, window, q, obs.sigma2, 0);
    noi::SolverModel model = noi::build_solver(spec, window, 0);
    load_checkpoint_params(model_dir, model, cost);
    auto [x, tr] = noi::solve(model, cost, obs, noi::init_state(obs), std::nullopt,
                              noi::SolveOptions{iters > 0 ? iters : spec.iters, truth ? &*truth : nullptr, nullptr});
    recon = std::move(x);
    trace = std::move(tr);
  } else {
    throw noi::ConfigError("unknown method '" + method + "' (expected oi-exact, oi-gd or solver)");
  }

  noi::write_field(out, recon);
  if (!trace_path.empty()) noi::write_trace_csv(trace_path, trace);
  std::cout << "interpolate(" << method << "): oi_score " << noi::fmt_double(noi::oi_cost(recon, prob));
  if (truth) std::cout << ", mse_truth " << noi::fmt_double(noi::mse(recon.data, truth->data));
  std::cout << ", wrote " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir, int threads) {
  require_file(config_path);
  const json conf = noi::read_json_file(config_path);
  noi::cfg::check_keys(conf,
                       {"simulate", "window", "track", "sigma2", "ranges", "obs_seed", "model", "train",
                        "modality_noise", "modality_seed"},
                       "train config");
  NOI_REQUIRE(conf.contains("simulate"), noi::ConfigError, "train config needs a 'simulate' object");
  const noi::SpdeParams params = noi::cfg::parse_spde(conf.at("simulate"), nullptr);
  const DataCommon data = parse_data_common(conf);
  const noi::ModelSpec spec = conf.contains("model") ? parse_model_spec(conf.at("model")) : noi::ModelSpec{};
  noi::TrainConfig tc = conf.contains("train") ? noi::cfg::parse_train(conf.at("train")) : noi::TrainConfig{};
  tc.threads = threads;

  const std::string truth_path = data_dir + "/truth.noi";
  require_file(truth_path);
  const noi::Field3D sim = noi::read_field(truth_path);
  NOI_REQUIRE(sim.nt() == params.nt && sim.ny() == params.ny && sim.nx() == params.nx, noi::DimensionError,
              "truth field does not match the simulate config grid");

  noi::DatasetConfig dc;
  dc.spde = params;
  dc.window = data.window;
  dc.track = data.track;
  dc.sigma2 = data.sigma2;
  dc.train = data.train;
  dc.val = data.val;
  dc.test = data.test;
  dc.obs_seed = data.obs_seed;
  dc.with_oi_refs = tc.loss == noi::LossKind::l2_mse_oi;
  dc.with_modality = spec.multimodal;
  dc.modality_noise = noi::cfg::get_or(conf, "modality_noise", 0.1);
  dc.modality_seed = noi::cfg::get_or<std::uint64_t>(conf, "modality_seed", 2);
  dc.threads = threads;
  const noi::Dataset ds = noi::build_dataset(sim, dc);

  noi::VarCost cost = noi::build_cost(spec, data.window, ds.q, data.sigma2, tc.seed + 7);
  noi::SolverModel model = noi::build_solver(spec, data.window, tc.seed + 13);
  const noi::TrainResult res = noi::train(tc, ds, model, cost);

  json echo = conf;
  echo["rng"] = {{"train_seed", tc.seed}, {"cost_seed", tc.seed + 7}, {"solver_seed", tc.seed + 13}};
  save_checkpoint(out_dir, echo, model, cost, res);
  std::cout << "train: " << res.history.size() << " epochs, best epoch " << res.best_epoch << " (val loss "
            << noi::fmt_double(res.best_val_loss) << "), checkpoint in " << out_dir << "\n";
  return 0;
}

int cmd_benchmark(const std::string& config_path, const std::string& out_dir, int threads) {
  require_file(config_path);
  const json conf = noi::read_json_file(config_path);
  noi::cfg::check_keys(conf,
                       {"simulate", "window", "track", "sigma2", "ranges", "obs_seed", "seeds", "methods", "model",
                        "train", "modality_noise", "modality_seed"},
                       "benchmark config");
  noi::BenchConfig bc;
  std::uint64_t sim_seed = 0;
  NOI_REQUIRE(conf.contains("simulate"), noi::ConfigError, "benchmark config needs a 'simulate' object");
  bc.spde = noi::cfg::parse_spde(conf.at("simulate"), &sim_seed);
  bc.sim_seed = sim_seed;
  const DataCommon data = parse_data_common(conf);
  bc.window = data.window;
  bc.track = data.track;
  bc.sigma2 = data.sigma2;
  bc.train_range = data.train;
  bc.val_range = data.val;
  bc.test_range = data.test;
  bc.obs_seed = data.obs_seed;
  if (conf.contains("seeds")) bc.seeds = conf.at("seeds").get<std::vector<std::uint64_t>>();
  if (conf.contains("methods")) bc.methods = conf.at("methods").get<std::vector<std::string>>();
  if (conf.contains("model")) bc.model_base = parse_model_spec(conf.at("model"));
  if (conf.contains("train")) bc.train_base = noi::cfg::parse_train(conf.at("train"));
  bc.threads = threads;

  ensure_dir(out_dir);
  const noi::BenchReport report = noi::run_benchmark(bc, out_dir);
  std::cout << "benchmark: " << report.rows.size() << " rows, min oi_score "
            << noi::fmt_double(report.min_oi_score()) << ", outputs in " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"noi: trainable optimal interpolation of gappy space-time fields"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker thread cap")->capture_default_str();

  auto* sim = app.add_subcommand("simulate", "generate a ground-truth field from the SPDE config");
  std::string sim_config, sim_out;
  long sim_seed = -1;
  sim->add_option("config", sim_config, "simulation config JSON")->required();
  sim->add_option("--out", sim_out, "output field file")->required();
  sim->add_option("--seed", sim_seed, "override the config seed");

  auto* obs = app.add_subcommand("observe", "sample along-track observations from a truth field");
  std::string obs_truth, obs_out;
  noi::TrackPattern track;
  double sigma2 = 1e-3;
  std::uint64_t obs_seed = 1;
  obs->add_option("truth", obs_truth, "truth field file")->required();
  obs->add_option("--out", obs_out, "output prefix")->required();
  obs->add_option("--track-spacing", track.spacing, "stripe spacing in cells")->capture_default_str();
  obs->add_option("--slope", track.slope, "stripe slope")->capture_default_str();
  obs->add_option("--drift", track.drift, "phase advance per time step")->capture_default_str();
  obs->add_option("--phase", track.phase, "initial phase")->capture_default_str();
  obs->add_option("--sigma2", sigma2, "observation noise variance")->capture_default_str();
  obs->add_option("--seed", obs_seed, "noise seed")->capture_default_str();

  auto* interp = app.add_subcommand("interpolate", "reconstruct a field from observations");
  std::string i_method, i_config, i_obs, i_model, i_out, i_trace, i_truth;
  int i_iters = 0;
  interp->add_option("--method", i_method, "oi-exact | oi-gd | solver")->required();
  interp->add_option("--config", i_config, "simulation config JSON (defines the prior)")->required();
  interp->add_option("--obs", i_obs, "observation file prefix")->required();
  interp->add_option("--model", i_model, "checkpoint directory (solver method)");
  interp->add_option("--iters", i_iters, "iteration budget override");
  interp->add_option("--out", i_out, "output reconstruction field")->required();
  interp->add_option("--trace", i_trace, "per-iteration trace CSV");
  interp->add_option("--truth", i_truth, "optional truth field for trace MSE columns");

  auto* tr = app.add_subcommand("train", "train solver and prior on a simulated dataset");
  std::string t_config, t_data, t_out;
  tr->add_option("config", t_config, "training config JSON")->required();
  tr->add_option("--data", t_data, "data directory containing truth.noi")->required();
  tr->add_option("--out", t_out, "checkpoint output directory")->required();

  auto* bench = app.add_subcommand("benchmark", "run the full method comparison");
  std::string b_config, b_out;
  bench->add_option("config", b_config, "benchmark config JSON")->required();
  bench->add_option("--out", b_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(sim_config, sim_seed, sim_out);
    if (obs->parsed()) return cmd_observe(obs_truth, track, sigma2, obs_seed, obs_out);
    if (interp->parsed()) return cmd_interpolate(i_method, i_config, i_obs, i_model, i_iters, i_out, i_trace, i_truth);
    if (tr->parsed()) return cmd_train(t_config, t_data, t_out, threads);
    if (bench->parsed()) return cmd_benchmark(b_config, b_out, threads);
  } catch (const noi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
