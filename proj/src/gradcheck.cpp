#include "salab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace salab::nn {

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

void record(GradCheckReport& r, double analytic, double numeric) {
  r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic - numeric));
  r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
  ++r.checked;
}

}  // namespace

GradCheckReport grad_check(const std::function<Var<double>(Var<double>)>& f,
                           const Tensor<double>& x, double eps, double tol) {
  GradCheckReport report;
  report.tolerance = tol;

  Tensor<double> analytic;
  {
    Tape<double> tape;
    Var<double> in = tape.input(x, true);
    Var<double> out = f(in);
    tape.backward(out);
    analytic = in.grad_tensor();
    report.min_margin = tape.min_margin();
  }

  auto eval = [&](const Tensor<double>& point) {
    Tape<double> tape(false);
    return f(tape.input(point, false)).value()[0];
  };

  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = eval(probe);
    probe[i] = x[i] - eps;
    const double down = eval(probe);
    probe[i] = x[i];
    record(report, analytic[i], (up - down) / (2.0 * eps));
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

GradCheckReport grad_check_params(const std::function<Var<double>(Tape<double>&)>& f,
                                  ParameterSet<double>& params, double eps, double tol) {
  GradCheckReport report;
  report.tolerance = tol;

  params.zero_grad();
  {
    Tape<double> tape;
    Var<double> out = f(tape);
    tape.backward(out);
    report.min_margin = tape.min_margin();
  }

  auto eval = [&]() {
    Tape<double> tape(false);
    return f(tape).value()[0];
  };

  for (std::size_t p = 0; p < params.size(); ++p) {
    Parameter<double>& param = params[p];
    const std::size_t skip = param.frozen_row0 ? param.value.cols() : 0;
    for (std::size_t i = skip; i < param.value.size(); ++i) {
      const double orig = param.value[i];
      param.value[i] = orig + eps;
      const double up = eval();
      param.value[i] = orig - eps;
      const double down = eval();
      param.value[i] = orig;
      record(report, param.grad[i], (up - down) / (2.0 * eps));
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace salab::nn
