#include "cli.hpp"

#include <algorithm>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "commands.hpp"

namespace pm::cli {

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> checkpoints;
  std::optional<std::size_t> masks, budget, n_latents;
  std::optional<std::string> policy, precision;
};

const char* describe(const std::string& name) {
  if (name == "gen-synthetic") return "Generate a Gaussian-mixture dataset with its exact density";
  if (name == "train-vae") return "Train a VAE on fully observed data";
  if (name == "train-pm") return "Train a partially observed encoder against a VAE or VaDE checkpoint";
  if (name == "train-lookahead") return "Train the lookahead network for fast acquisition";
  if (name == "train-vade") return "Train a VAE with a mixture-of-Gaussians prior";
  if (name == "eval-likelihood") return "Estimate conditional log-likelihoods and imputation error";
  if (name == "impute") return "Impute unobserved features for test instances";
  if (name == "acquire") return "Run greedy active feature acquisition episodes";
  if (name == "cluster-eval") return "Cluster accuracy from partial observations";
  if (name == "bench-acquire") return "Time sampling-based against lookahead acquisition";
  return "Check the objective equivalence on enumerable toys";
}

bool takes_checkpoints(const std::string& name) {
  return name != "gen-synthetic" && name != "train-vae" && name != "train-vade" && name != "verify-theorem1";
}

Invocation build(const std::string& command, const Flags& f, const std::vector<std::string>& args) {
  Invocation inv;
  inv.command = command;
  inv.args = args;
  inv.out = f.out;
  inv.checkpoints = f.checkpoints;
  RunConfig& c = inv.config;
  c = load_run_config(f.config);
  if (f.seed) {
    c.seed = *f.seed;
    inv.seed_given = true;
  }
  if (f.precision) c.precision = parse_precision(*f.precision);
  if (f.masks) c.eval.masks = *f.masks;
  if (f.budget) c.acquire.budget = *f.budget;
  if (f.policy) c.acquire.policy = parse_policy(*f.policy);
  if (f.n_latents) {
    c.eval.n_latents = *f.n_latents;
    c.acquire.n_latents = *f.n_latents;
  }
  c.validate();
  if (inv.out.empty() && command != "verify-theorem1") throw ValidationError("--out is required");
  return inv;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Posterior matching: arbitrary conditioning with VAEs", "pm"};
  app.require_subcommand(1);
  Flags f;
  for (const auto& name : command_names()) {
    CLI::App* sub = app.add_subcommand(name, describe(name));
    sub->add_option("--config", f.config, "Run configuration file (TOML)");
    sub->add_option("--seed", f.seed, "Run seed; overrides run.seed");
    sub->add_option("--out", f.out, "Output directory owned by this run");
    sub->add_option("--precision", f.precision, "Parameter storage: f32 or f64");
    if (takes_checkpoints(name)) {
      sub->add_option("--checkpoint", f.checkpoints, "Checkpoint bundle; repeat for several models");
    }
    if (name == "eval-likelihood" || name == "impute") {
      sub->add_option("--masks", f.masks, "Random observed masks per instance");
    }
    if (name == "acquire") {
      sub->add_option("--budget", f.budget, "Features to acquire per instance");
      sub->add_option("--policy", f.policy, "random, sampling or lookahead");
    }
    if (name == "eval-likelihood" || name == "impute" || name == "acquire") {
      sub->add_option("--n-latents", f.n_latents, "Latent samples per imputation (default 50)");
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    execute(build(sub->get_name(), f, args));
    return 0;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    // I/O and JSON failures from the standard library or vendored code.
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace pm::cli
