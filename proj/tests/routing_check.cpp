// Runs the default experiment matrix plus the generic trajectory and checks
// that every axis converges exactly when the analysis leaves it observable.
#include <cstdio>

#include "vio_obs/harness.hpp"

int main() {
  using namespace vio_obs;
  ExperimentConfig config = default_config();
  std::vector<RunKey> keys = run_matrix(config);
  for (int c : config.cases) {
    for (int p = 0; p < static_cast<int>(config.perturbations.size()); ++p) {
      keys.push_back({AidingMode::kPureVio, "generic", c, p});
    }
  }
  const auto runs = run_experiment(config, keys, 0);
  const auto verdicts = check_routing(config, keys, runs);

  const char* names[3] = {"roll", "pitch", "yaw"};
  int bad = 0;
  for (const auto& v : verdicts) {
    const bool ok = v.consistent(config.verdict);
    bad += ok ? 0 : 1;
    std::printf("%-6s traj %-7s case %d  %s", to_string(v.mode).c_str(), v.trajectory.c_str(),
                v.case_id, ok ? "ok      " : "MISMATCH");
    for (int a = 0; a < 3; ++a) {
      const AxisVerdict& x = v.axes[a];
      std::printf("  %s %s max %.3f spread %.3f", names[a], x.flagged ? "flagged" : "observ.",
                  x.max_abs, x.spread);
    }
    std::printf("%s\n", v.diverged ? "  diverged" : "");
  }
  std::printf("routing: %s (%zu cells, %d mismatched)\n", bad == 0 ? "PASS" : "FAIL",
              verdicts.size(), bad);
  return bad == 0 ? 0 : 1;
}
