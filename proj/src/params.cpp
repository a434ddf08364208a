#include "lgcn/params.hpp"

namespace lgcn {

Tensor randn(const Shape& shape, double stddev, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor randu(const Shape& shape, double lo, double hi, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace lgcn
