#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "drivesac/runio.hpp"

// drivesac: train, evaluate, verify, and export reward curves for the
// fusion-encoder actor-critic lane-following stack. Exit codes: 0 success,
// 1 contract/config error, 2 property-suite failure.

int main(int argc, char** argv) {
  CLI::App app{"sensor-fusion actor-critic lane-following workbench"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, routes_file, seed_range, run_dir;
  std::uint64_t seed = 0;
  double alpha = 0.9;
  bool inject_fault = false;

  CLI::App* train = app.add_subcommand("train", "train an agent from a JSON run config");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--seed", seed, "run seed (mandatory for reproducibility)")->required();
  train->add_option("--out", out_dir, "run directory for artifacts")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint over routes");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--routes", routes_file, "routes JSON (array or {routes:[...]})");
  eval->add_option("--seeds", seed_range, "generated-route seed range a..b");
  eval->add_option("--out", out_dir, "output directory")->required();

  CLI::App* verify = app.add_subcommand("verify", "run the property suites");
  verify->add_flag("--inject-sign-flip", inject_fault,
                   "test fixture: corrupt a backward rule to prove the suite can fail");

  CLI::App* export_curve =
      app.add_subcommand("export-curve", "append smoothed columns to a run's reward CSV");
  export_curve->add_option("--run", run_dir, "run directory holding rewards.csv")->required();
  export_curve->add_option("--alpha", alpha, "smoothing factor in [0,1)")
      ->check(CLI::Range(0.0, 0.999999999));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (train->parsed()) return drivesac::runio::cmd_train(config_path, seed, out_dir);
    if (eval->parsed())
      return drivesac::runio::cmd_eval(checkpoint, routes_file, seed_range, out_dir);
    if (verify->parsed()) return drivesac::runio::cmd_verify(inject_fault);
    if (export_curve->parsed()) return drivesac::runio::cmd_export_curve(run_dir, alpha);
  } catch (const std::exception& e) {
    std::cerr << "drivesac: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
