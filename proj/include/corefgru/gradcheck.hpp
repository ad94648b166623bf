#pragma once

#include <cstdint>
#include <concepts>
#include <functional>
#include <string>
#include <vector>

#include "corefgru/autodiff.hpp"

namespace corefgru {

// Builds a scalar loss on a fresh tape. Must be a pure function of the
// parameter values.
using LossBuilder = std::function<Var(Tape&)>;
using ExtendedTape = BasicTape<long double>;
using ExtendedLossBuilder = std::function<BasicVar<long double>(ExtendedTape&)>;

struct GradCheckOptions {
  // Coordinates checked per parameter; 0 means every coordinate. Values
  // below 200 are raised to 200.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
};

struct ParameterCheck {
  std::string name;
  std::size_t coordinates_checked = 0;
  double max_relative_error = 0.0;
  Index worst_coordinate = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParameterCheck> parameters;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;

  std::vector<std::string> failing() const;
};

// Central-difference check of reverse-mode gradients. Perturbs `params` in
// place and restores every coordinate before returning.
GradCheckReport grad_check(ParameterSet& params, const LossBuilder& build, double eps, double tol,
                           const GradCheckOptions& options = {});

// Same check, but the finite differences are taken on `reference`, the same
// loss evaluated in long double. Rounding noise in a double loss is about
// 1e-16 / eps, which swamps gradient entries near 1e-8 at eps = 1e-5.
GradCheckReport grad_check(ParameterSet& params, const LossBuilder& build, const ExtendedLossBuilder& reference,
                           double eps, double tol, const GradCheckOptions& options = {});

// Accepts a generic lambda usable with both tape types.
template <typename F>
  requires std::invocable<F&, Tape&> && std::invocable<F&, ExtendedTape&>
GradCheckReport grad_check(ParameterSet& params, F&& build, double eps, double tol,
                           const GradCheckOptions& options = {}) {
  return grad_check(params, LossBuilder(build), ExtendedLossBuilder(build), eps, tol, options);
}

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

}  // namespace corefgru
