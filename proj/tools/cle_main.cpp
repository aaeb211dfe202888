#include <iostream>
#include <string>

#include "../vendor/CLI11.hpp"
#include "cle/gradcheck.hpp"
#include "cle/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"continual-learning experiment runner"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, run_dir;
  std::uint64_t gc_seed = 1;

  CLI::App* run = app.add_subcommand("run", "run an experiment from a config");
  run->add_option("config", config_path, "path to JSON config")->required();

  CLI::App* resume = app.add_subcommand("resume", "resume from a checkpoint");
  resume->add_option("checkpoint", checkpoint_path, "path to .ckpt file")
      ->required();

  CLI::App* report =
      app.add_subcommand("report", "recompute metrics from a run directory");
  report->add_option("run-dir", run_dir, "directory with R.json")->required();

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("--seed", gc_seed, "seed for the random suites");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      cle::ExperimentConfig cfg;
      try {
        cfg = cle::config_load(config_path);
      } catch (const cle::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return cle::kExitConfig;
      }
      return cle::run_experiment(std::move(cfg));
    }
    if (resume->parsed()) return cle::resume_experiment(checkpoint_path);
    if (report->parsed()) return cle::report_run(run_dir);
    if (gradcheck->parsed()) {
      cle::GradcheckReport rep = cle::run_gradcheck(gc_seed);
      std::cout << "graphs checked: " << rep.graphs_checked
                << ", max relative error " << rep.max_rel_graph << "\n";
      std::cout << "elbo entries checked: " << rep.elbo_params_checked
                << ", max relative error " << rep.max_rel_elbo << "\n";
      if (!rep.ok()) {
        std::cerr << "gradcheck failed\n";
        return cle::kExitNumeric;
      }
      return cle::kExitOk;
    }
  } catch (const cle::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return cle::kExitConfig;
  } catch (const cle::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return cle::kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
