#pragma once

#include <string>
#include <vector>

namespace gor {

struct GradCheck {
  std::string name;
  double rel_err = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheck> checks;
  double worst = 0;
  std::string worst_name;
  bool pass = false;
};

/// Central finite differences against tape gradients for every op and layer,
/// element by element. rel = |a - n| / max(1, |a|, |n|). `corrupt` names a
/// check (prefix match) whose analytic gradient gets deliberately damaged, as
/// a negative control that the harness can fail.
GradCheckReport run_gradcheck(double eps = 1e-5, double tol = 1e-6,
                              const std::string& corrupt = "");

}  // namespace gor
