#pragma once

#include <cstddef>
#include <functional>
#include <limits>

#include "salab/autodiff.hpp"

namespace salab::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  /// Distance of the unperturbed forward pass to the nearest kink (see
  /// Tape::note_margin). Callers resample when this is below 1e-3.
  double min_margin = std::numeric_limits<double>::infinity();
  bool passed = false;
};

inline constexpr double kGradCheckEps = 1e-5;
inline constexpr double kGradCheckTol = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
inline constexpr double kRelErrorFloor = 1e-3;

/// |a - n| / max(|a|, |n|, kRelErrorFloor).
double relative_error(double analytic, double numeric);

/// Checks the tape gradient of the scalar function `f` at `x` against
/// central differences, coordinate by coordinate.
GradCheckReport grad_check(const std::function<Var<double>(Var<double>)>& f,
                           const Tensor<double>& x, double eps = kGradCheckEps,
                           double tol = kGradCheckTol);

/// Same for every value of every parameter in `params`. `f` builds a fresh
/// forward pass on the given tape and returns a scalar.
GradCheckReport grad_check_params(const std::function<Var<double>(Tape<double>&)>& f,
                                  ParameterSet<double>& params, double eps = kGradCheckEps,
                                  double tol = kGradCheckTol);

}  // namespace salab::nn
