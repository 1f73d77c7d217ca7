// Command-line front end: analyze, simulate, calibrate, experiment, plot.
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vio_obs/harness.hpp"

namespace {

void add_common(CLI::App* cmd, vio_obs::CommandOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--workers", o.workers, "parallel runs (0: all threads)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--traj", o.trajectory, "trajectory")
      ->check(CLI::IsMember({"1", "2", "generic"}));
  cmd->add_option("--case", o.case_id, "camera mounting case")->check(CLI::Range(1, 3));
  cmd->add_option("--mode", o.mode, "aiding mode")->check(CLI::IsMember({"pure", "global"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Observability analysis and online camera-IMU rotation calibration"};
  app.require_subcommand(1);

  vio_obs::CommandOptions opts;
  std::vector<double> perturbation;

  auto* analyze = app.add_subcommand("analyze", "verify the null-space structure of the stacks");
  auto* simulate = app.add_subcommand("simulate", "dump IMU, camera and global-pose streams");
  auto* calibrate = app.add_subcommand("calibrate", "run one calibration");
  auto* experiment = app.add_subcommand("experiment", "run the full experiment matrix");
  auto* plot = app.add_subcommand("plot", "aggregate run CSVs into long-format plot data");
  for (auto* cmd : {analyze, simulate, calibrate, experiment}) add_common(cmd, opts);
  calibrate->add_option("--perturbation", perturbation, "initial roll,pitch,yaw error [deg]")
      ->expected(3)
      ->delimiter(',');
  plot->add_option("--out", opts.out_dir, "output directory");
  plot->add_option("inputs", opts.inputs, "run CSVs or directories of them")
      ->required()
      ->check(CLI::ExistingPath);

  CLI11_PARSE(app, argc, argv);

  try {
    if (plot->parsed()) {
      return vio_obs::cmd_plot(opts.inputs, opts.out_dir.empty() ? "out" : opts.out_dir, std::cout);
    }
    if (!perturbation.empty()) {
      opts.perturbation = vio_obs::Rpy{perturbation[0], perturbation[1], perturbation[2]};
    }
    const vio_obs::ExperimentConfig config = vio_obs::resolve_config(opts);
    if (analyze->parsed()) return vio_obs::cmd_analyze(config, std::cout);
    if (simulate->parsed()) return vio_obs::cmd_simulate(config, std::cout);
    if (calibrate->parsed()) return vio_obs::cmd_calibrate(config, std::cout);
    return vio_obs::cmd_experiment(config, std::cout);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
