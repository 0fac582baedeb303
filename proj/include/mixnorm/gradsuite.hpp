#pragma once

#include <string>
#include <vector>

namespace mixnorm {

struct GradCheckReport {
  std::string component;
  double worst_rel_error = 0.0;
  double tolerance = 0.0;
  int configs = 0;
  bool pass = false;
};

// Verifies every analytic gradient in the repository against the 64-bit
// central-difference oracle over randomized configurations. `inject` names a
// deliberate fault for harness self-tests (e.g. "normlayers.grad_gamma_sign"
// flips the sign of the gamma gradient before comparison).
std::vector<GradCheckReport> run_gradcheck_suite(const std::string& inject = "");

}  // namespace mixnorm
