#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace occ {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int grid = 8;
  int classes = 4;
  int rays = 64;
  /// Central-difference step on the logits.
  double eps = 1e-3;
  /// Maximum relative error, checked wherever max(|analytic|, |numeric|) > min_grad.
  double tol = 1e-3;
  double min_grad = 1e-6;
  /// Negative control: negates the analytic 2D-loss gradient before comparison.
  bool inject_sign_flip = false;
};

struct GradcheckSuite {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<GradcheckSuite> suites;
  double max_rel_error = 0.0;
  double seconds = 0.0;
  bool passed = true;
};

/// Finite-difference suites:
///   render_2d   full 2D loss of `rays` random rays w.r.t. every logit of a random grid,
///               with sample placement held fixed
///   composite   rendered depth and semantics w.r.t. per-sample density and logits
///   trilinear   interpolated values w.r.t. corner logits
///   loss_3d     BCE + CE w.r.t. every logit
///   flow        flowed volume w.r.t. base volume (selection held fixed)
GradcheckReport run_gradcheck(const GradcheckOptions& opts);

}  // namespace occ
