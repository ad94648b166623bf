#include "corefgru/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace corefgru {

namespace {

template <typename S, typename Build>
S evaluate(const BasicParameterSet<S>& params, const Build& build) {
  BasicTape<S> tape(params);
  BasicVar<S> loss = build(tape);
  if (loss.rows() != 1 || loss.cols() != 1) throw InvalidShape("loss builder must return a scalar");
  return loss.value()(0, 0);
}

// Finite differences over `probe` (a parameter set of scalar S mirroring the
// checked one) against the analytic gradients.
template <typename S, typename Build>
GradCheckReport compare(const ParameterSet& params, const Gradients& analytic, BasicParameterSet<S>& probe,
                        const Build& build, double eps, double tol, const GradCheckOptions& options) {
  const S baseline = evaluate(probe, build);
  if (evaluate(probe, build) != baseline) {
    throw NonDeterministic("loss builder returned different values for identical parameters");
  }
  std::mt19937_64 rng(options.seed);
  const std::size_t cap = options.max_coordinates == 0 ? 0 : std::max<std::size_t>(options.max_coordinates, 200);
  const S h = static_cast<S>(eps);

  GradCheckReport report;
  report.tolerance = tol;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& value = probe[p];
    const auto n = static_cast<std::size_t>(value.size());
    std::vector<Index> coords(n);
    std::iota(coords.begin(), coords.end(), Index{0});
    if (cap != 0 && n > cap) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(cap);
      std::sort(coords.begin(), coords.end());
    }

    ParameterCheck check;
    check.name = params.name(p);
    check.coordinates_checked = coords.size();
    for (Index c : coords) {
      S& theta = value.data()[c];
      const S saved = theta;
      theta = saved + h;
      const S up = evaluate(probe, build);
      theta = saved - h;
      const S down = evaluate(probe, build);
      theta = saved;

      const auto numeric = static_cast<double>((up - down) / (S(2) * h));
      const double a = analytic[p].data()[c];
      const double err = relative_error(a, numeric);
      if (err > check.max_relative_error || check.worst_coordinate < 0) {
        check.max_relative_error = err;
        check.worst_coordinate = c;
        check.analytic_at_worst = a;
        check.numeric_at_worst = numeric;
      }
    }
    check.passed = check.max_relative_error < tol;
    report.max_relative_error = std::max(report.max_relative_error, check.max_relative_error);
    report.passed = report.passed && check.passed;
    report.parameters.push_back(std::move(check));
  }
  return report;
}

Gradients analytic_gradients(const ParameterSet& params, const LossBuilder& build) {
  Tape tape(params);
  Var loss = build(tape);
  if (loss.rows() != 1 || loss.cols() != 1) throw InvalidShape("loss builder must return a scalar");
  return tape.backward(loss);
}

void check_eps(double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw RangeError("grad_check eps must lie in (0, 1e-2]");
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

std::vector<std::string> GradCheckReport::failing() const {
  std::vector<std::string> out;
  for (const auto& p : parameters) {
    if (!p.passed) out.push_back(p.name);
  }
  return out;
}

GradCheckReport grad_check(ParameterSet& params, const LossBuilder& build, double eps, double tol,
                           const GradCheckOptions& options) {
  check_eps(eps);
  const Gradients analytic = analytic_gradients(params, build);
  // Perturb the caller's tensors directly; every coordinate is restored.
  return compare(params, analytic, params, build, eps, tol, options);
}

GradCheckReport grad_check(ParameterSet& params, const LossBuilder& build, const ExtendedLossBuilder& reference,
                           double eps, double tol, const GradCheckOptions& options) {
  check_eps(eps);
  const Gradients analytic = analytic_gradients(params, build);
  auto probe = params.cast<long double>();
  return compare(params, analytic, probe, reference, eps, tol, options);
}

}  // namespace corefgru
