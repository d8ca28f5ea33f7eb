#pragma once

#include <string>

namespace calsm {

// Summary of one engine run. wall_seconds is informational and is never
// written to result files, so reruns produce identical bytes.
struct FitReport {
  std::string engine;
  int iterations = 0;            // CAVI cycles or SVI epochs
  long long optimizer_steps = 0; // SVI only
  double final_elbo = 0.0;
  double best_smoothed_elbo = 0.0;  // SVI only
  double final_learning_rate = 0.0; // SVI only
  double last_change = 0.0;      // CAVI: mean |delta P| of the last cycle
  bool converged = false;
  double wall_seconds = 0.0;
};

}  // namespace calsm
