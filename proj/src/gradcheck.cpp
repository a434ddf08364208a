#include "lgcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace lgcn {

GradCheckReport grad_check(std::string op, const std::function<double()>& loss,
                           const std::function<void()>& analytic, const std::vector<ParamRef>& params,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.op = std::move(op);
  analytic();

  std::mt19937_64 rng(options.seed);
  bool finite = true;
  for (const ParamRef& p : params) {
    const std::vector<double> grad(p.grad.begin(), p.grad.end());
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords && coords.size() > options.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords);
      std::sort(coords.begin(), coords.end());
    }

    ParamError err{p.name, 0.0, coords.size()};
    for (std::size_t i : coords) {
      const double saved = p.value[i];
      p.value[i] = saved + options.eps;
      const double up = loss();
      p.value[i] = saved - options.eps;
      const double down = loss();
      p.value[i] = saved;

      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = grad[i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        finite = false;
        err.max_rel_error = std::numeric_limits<double>::infinity();
        continue;
      }
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      err.max_rel_error = std::max(err.max_rel_error, rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, err.max_rel_error);
    report.per_param.push_back(std::move(err));
  }
  if (!finite) report.note = "non-finite gradient";
  report.pass = finite && report.max_rel_error <= options.tol;
  return report;
}

}  // namespace lgcn
