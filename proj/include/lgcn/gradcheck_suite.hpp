#pragma once

#include <string>
#include <vector>

#include "lgcn/config.hpp"
#include "lgcn/gradcheck.hpp"

namespace lgcn {

struct SuiteOptions {
  GradCheckOptions check;
  /// Coordinates sampled per parameter for the composite modules.
  std::size_t composite_coords = 64;
  /// Doubles every analytic gradient; the suite must then fail.
  bool inject_bug = false;
};

struct SuiteCase {
  std::string name;
  std::string scope;  // ops | spectral | vit | fsa | cnn | dfm | head | model
};

/// Every check the suite knows, in execution order.
std::vector<SuiteCase> gradcheck_cases();

/// Runs the cases matching `scope`: "all", a scope name, or a case name.
/// Throws std::invalid_argument on an unknown scope.
std::vector<GradCheckReport> run_gradcheck_suite(const std::string& scope, const SuiteOptions& options = {});

/// Small configuration used by the composite checks.
ModelConfig gradcheck_config();

}  // namespace lgcn
