#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "lgcn/tensor.hpp"

namespace lgcn {

/// A trainable tensor and its gradient accumulator.
struct Param {
  Tensor value;
  Tensor grad;

  Param() = default;
  explicit Param(Tensor v) : value(std::move(v)), grad(Tensor::zeros_like(value)) {}

  void zero_grad() { grad.fill(0.0); }
};

using ParamVisitor = std::function<void(const std::string& name, Param& param)>;
using ConstParamVisitor = std::function<void(const std::string& name, const Param& param)>;

/// Seeded generator for initialization and sampling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::uint64_t next() { return engine_(); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

Tensor randn(const Shape& shape, double stddev, Rng& rng);
Tensor randu(const Shape& shape, double lo, double hi, Rng& rng);

}  // namespace lgcn
