#pragma once

#include <string>
#include <vector>

namespace fgfa {

struct GradCheckReport {
  std::string component;
  int coords = 0;  // coordinates compared against finite differences
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

std::vector<std::string> grad_check_component_names();

// Compares analytic gradients against central finite differences for the
// named component ("all" runs every registered one). Checks run in double
// precision; the composite path keeps a looser tolerance because it chains
// every stage. Sampled coordinate count scales with `trials`.
std::vector<GradCheckReport> run_grad_checks(const std::string& component, int trials,
                                             uint32_t seed);

}  // namespace fgfa
