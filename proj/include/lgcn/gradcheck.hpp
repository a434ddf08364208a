#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lgcn/tensor.hpp"

namespace lgcn {

/// A parameter (or input) exposed to the checker: its live values and the
/// buffer the analytic backward pass writes its gradient into.
struct ParamRef {
  std::string name;
  std::span<double> value;
  std::span<const double> grad;
};

inline ParamRef param_ref(std::string name, Tensor& value, const Tensor& grad) {
  return {std::move(name), value.data(), grad.data()};
}

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-4;
  /// Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct ParamError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::string op;
  double max_rel_error = 0.0;
  std::vector<ParamError> per_param;
  bool pass = false;
  std::string note;
};

/// Compares analytic gradients against central differences.
///
/// `analytic` must (re)compute gradients at the current parameter values into
/// the buffers named by `params`; it is invoked once before any perturbation.
/// Relative error per coordinate is |a - n| / max(1, |a|, |n|). Non-finite
/// values fail the check instead of throwing.
GradCheckReport grad_check(std::string op, const std::function<double()>& loss,
                           const std::function<void()>& analytic, const std::vector<ParamRef>& params,
                           const GradCheckOptions& options = {});

}  // namespace lgcn
