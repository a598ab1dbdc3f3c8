// SPDX-License-Identifier: Apache-2.0
//
// Part of fimkit, a flexible-metasurface link simulation and estimation toolkit.

// Command-line front end for the experiment drivers. Each subcommand selects
// an experiment kind; a preset or JSON config supplies the parameters and a
// handful of flags override the expensive knobs for reduced runs.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fim/bench.hpp"
#include "fim/errors.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CliOptions {
  std::string preset;
  std::string config_path;
  std::string out_path;
  std::string sweep_csv;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  int trials = 0;
  int bo_trials = 0;
  std::size_t budget = 0;
  int reps = 0;
  bool force = false;
};

void add_common_options(CLI::App* sub, CliOptions& opt) {
  sub->add_option("--preset", opt.preset,
                  "Named parameter set: fig2 fig3 fig4a fig4b fig5 fig6 fig7");
  sub->add_option("--config", opt.config_path,
                  "JSON config file; keys override the preset");
  sub->add_option("--seed", opt.seed, "Root seed override");
  sub->add_option("--out", opt.out_path,
                  "Output CSV path (default: standard output)");
  sub->add_option("--threads", opt.threads,
                  "Worker threads; 0 uses the hardware count");
  sub->add_option("--trials", opt.trials, "Monte Carlo trials override");
  sub->add_option("--bo-trials", opt.bo_trials,
                  "Optimizer trials override (power experiment)");
  sub->add_option("--budget", opt.budget,
                  "Optimizer evaluation budget override (power experiment)");
  sub->add_option("--reps", opt.reps,
                  "Repetitions per timing measurement (runtime experiment)");
  sub->add_option("--sweep", opt.sweep_csv,
                  "Comma-separated values replacing the experiment's sweep");
  sub->add_flag("--force", opt.force,
                "Overwrite an output file even if its config hash differs");
}

fim::ExperimentKind default_kind(const std::string& sub) {
  if (sub == "fringe") return fim::ExperimentKind::Fringe;
  if (sub == "power") return fim::ExperimentKind::PowerVsPaths;
  if (sub == "bounds") return fim::ExperimentKind::Bounds;
  if (sub == "estimate" || sub == "nmse") return fim::ExperimentKind::NmseVsQ;
  if (sub == "runtime") return fim::ExperimentKind::Runtime;
  throw fim::InvalidInputError("unknown subcommand: " + sub);
}

bool kind_allowed(const std::string& sub, fim::ExperimentKind kind) {
  if (sub == "estimate" || sub == "nmse")
    return kind == fim::ExperimentKind::NmseVsQ ||
           kind == fim::ExperimentKind::NmseVsSnr;
  return kind == default_kind(sub);
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::istringstream in(csv);
  std::string token;
  while (std::getline(in, token, ',')) out.push_back(token);
  if (out.empty()) throw fim::InvalidInputError("--sweep list is empty");
  return out;
}

double parse_sweep_double(const std::string& token) {
  std::size_t pos = 0;
  double value = 0.0;
  try {
    value = std::stod(token, &pos);
  } catch (const std::exception&) {
    throw fim::InvalidInputError("--sweep value is not a number: " + token);
  }
  if (pos != token.size())
    throw fim::InvalidInputError("--sweep value is not a number: " + token);
  return value;
}

std::size_t parse_sweep_size(const std::string& token) {
  const double value = parse_sweep_double(token);
  const auto n = static_cast<long long>(value);
  if (value != static_cast<double>(n) || n <= 0)
    throw fim::InvalidInputError("--sweep value must be a positive integer: " +
                                 token);
  return static_cast<std::size_t>(n);
}

void apply_sweep(fim::ExperimentConfig& cfg, const std::string& csv) {
  const std::vector<std::string> tokens = split_csv(csv);
  switch (cfg.experiment) {
    case fim::ExperimentKind::PowerVsPaths:
      cfg.path_sweep.clear();
      for (const auto& t : tokens)
        cfg.path_sweep.push_back(static_cast<int>(parse_sweep_size(t)));
      return;
    case fim::ExperimentKind::NmseVsQ:
      cfg.q_sweep.clear();
      for (const auto& t : tokens) cfg.q_sweep.push_back(parse_sweep_size(t));
      return;
    case fim::ExperimentKind::NmseVsSnr:
      cfg.snr_sweep.clear();
      for (const auto& t : tokens) cfg.snr_sweep.push_back(parse_sweep_double(t));
      return;
    case fim::ExperimentKind::Runtime:
      cfg.side_sweep.clear();
      for (const auto& t : tokens) cfg.side_sweep.push_back(parse_sweep_size(t));
      return;
    case fim::ExperimentKind::Fringe:
    case fim::ExperimentKind::Bounds:
      throw fim::InvalidInputError("this experiment has no sweep to override");
  }
  throw fim::InvalidInputError("unknown experiment kind");
}

fim::ExperimentConfig load_config(const std::string& sub, const CliOptions& opt,
                                  bool seed_given, bool threads_given) {
  fim::ExperimentConfig cfg;
  if (!opt.preset.empty()) {
    cfg = fim::make_preset(opt.preset);
  } else {
    cfg.experiment = default_kind(sub);
  }
  if (!opt.config_path.empty()) {
    std::ifstream in(opt.config_path);
    if (!in)
      throw fim::InvalidInputError("cannot read config file: " +
                                   opt.config_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw fim::InvalidInputError(std::string("config file is not JSON: ") +
                                   e.what());
    }
    cfg = fim::config_from_json(j, cfg);
  }
  if (!kind_allowed(sub, cfg.experiment))
    throw fim::InvalidInputError(
        "experiment '" + std::string(fim::experiment_name(cfg.experiment)) +
        "' does not belong to subcommand '" + sub + "'");

  if (sub == "estimate") {
    // Single-point per-trial emission; default to the configured Q or SNR.
    cfg.per_trial_rows = true;
    if (cfg.experiment == fim::ExperimentKind::NmseVsQ && cfg.q_sweep.empty())
      cfg.q_sweep = {cfg.subframes_q != 0 ? cfg.subframes_q : 16};
    if (cfg.experiment == fim::ExperimentKind::NmseVsSnr &&
        cfg.snr_sweep.empty())
      cfg.snr_sweep = {cfg.snr_db};
  }

  if (seed_given) cfg.root_seed = opt.seed;
  if (opt.trials > 0) cfg.trials = opt.trials;
  if (opt.bo_trials > 0) cfg.bo_trials = opt.bo_trials;
  if (opt.budget > 0) cfg.bo_budget = opt.budget;
  if (opt.reps > 0) cfg.runtime_reps = opt.reps;
  if (threads_given) cfg.threads = opt.threads;
  if (!opt.out_path.empty()) cfg.output_path = opt.out_path;
  if (!opt.sweep_csv.empty()) apply_sweep(cfg, opt.sweep_csv);
  return cfg;
}

int run(const std::string& sub, const CliOptions& opt, bool seed_given,
        bool threads_given) {
  fim::ExperimentConfig cfg =
      fim::resolve_config(load_config(sub, opt, seed_given, threads_given));
  fim::validate_config(cfg);
  const std::string text = fim::render_experiment(cfg);
  if (cfg.output_path.empty()) {
    std::cout << text;
    return kExitOk;
  }
  fim::write_experiment_output(cfg.output_path, text, opt.force);
  std::cerr << "fimkit: wrote " << cfg.output_path << " (" << text.size()
            << " bytes, config " << std::hex << fim::config_hash(cfg)
            << std::dec << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "fimkit: flexible-metasurface link experiments.\n"
      "Renders deterministic CSV tables for the configured experiment."};
  app.require_subcommand(1);

  CliOptions opt;
  std::vector<std::pair<std::string, std::string>> subs = {
      {"fringe", "Beamforming gain map over element position and phase"},
      {"power", "Received power versus cascaded path count"},
      {"bounds", "Monte Carlo means against closed-form power bounds"},
      {"estimate", "Per-trial channel estimation errors at one design point"},
      {"nmse", "Mean estimation error versus pilot count or SNR"},
      {"runtime", "Solver wall time versus dictionary size"},
  };
  for (const auto& [name, help] : subs)
    add_common_options(app.add_subcommand(name, help), opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const CLI::App* parsed = app.get_subcommands().front();
  const bool seed_given = parsed->count("--seed") > 0;
  const bool threads_given = parsed->count("--threads") > 0;

  try {
    return run(parsed->get_name(), opt, seed_given, threads_given);
  } catch (const fim::InvalidInputError& e) {
    std::cerr << "fimkit: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fim::SerializationError& e) {
    std::cerr << "fimkit: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "fimkit: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "fimkit: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}
