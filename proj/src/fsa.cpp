#include "lgcn/fsa.hpp"

#include <cmath>

#include "lgcn/ops.hpp"
#include "lgcn/spectral.hpp"

namespace lgcn {

FsaParams FsaParams::init(const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.embed_dim, cr = cfg.adapter_channels(), g = cfg.grid;
  FsaParams p;
  p.down_w = Param(randn({d, cr}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
  p.down_b = Param(Tensor({cr}));
  Tensor kernel = randn({cr, 3, 3}, 0.1, rng);
  for (std::size_t c = 0; c < cr; ++c) kernel[c * 9 + 4] += 1.0;  // near-identity start
  p.dw_kernel = Param(std::move(kernel));
  p.dw_bias = Param(Tensor({cr}));
  p.gain_logits = Param(Tensor({g, g, cr}));
  p.fuse_w = Param(Tensor({2 * cr, d}));
  p.fuse_b = Param(Tensor({d}));
  p.scale = Param(Tensor({1}, cfg.adapter_scale));
  return p;
}

std::size_t FsaParams::parameter_count() const {
  return down_w.value.size() + down_b.value.size() + dw_kernel.value.size() + dw_bias.value.size() +
         gain_logits.value.size() + fuse_w.value.size() + fuse_b.value.size() + scale.value.size();
}

void FsaParams::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + "down_w", down_w);
  f(prefix + "down_b", down_b);
  f(prefix + "dw_kernel", dw_kernel);
  f(prefix + "dw_bias", dw_bias);
  f(prefix + "gain_logits", gain_logits);
  f(prefix + "fuse_w", fuse_w);
  f(prefix + "fuse_b", fuse_b);
  f(prefix + "scale", scale);
}

Tensor spatial_branch(const Tensor& map, const Tensor& kernel, const Tensor& bias, bool activation,
                      SpatialCache* cache) {
  Tensor pre = ops::depthwise_conv2d(map, kernel, &bias, 1);
  Tensor out = activation ? ops::gelu(pre) : pre;
  if (cache) {
    cache->input = map;
    cache->pre = std::move(pre);
  }
  return out;
}

Tensor spatial_branch_backward(const SpatialCache& cache, const Tensor& kernel, bool activation, const Tensor& dy,
                               Tensor* dkernel, Tensor* dbias) {
  const Tensor dpre = activation ? ops::gelu_backward(cache.pre, dy) : dy;
  return ops::depthwise_conv2d_backward(cache.input, kernel, 1, dpre, dkernel, dbias);
}

Tensor frequency_branch(const Tensor& map, const Tensor& gains, FrequencyCache* cache) {
  expect_same_shape(map, gains, "frequency_branch gains");
  const ComplexGrid spec = spectral::dft2d(map);
  Tensor amplitude = Tensor::zeros_like(map), phase = Tensor::zeros_like(map);
  ComplexGrid modulated{Tensor::zeros_like(map), Tensor::zeros_like(map)};
  for (std::size_t i = 0; i < map.size(); ++i) {
    amplitude[i] = std::hypot(spec.re[i], spec.im[i]);
    phase[i] = std::atan2(spec.im[i], spec.re[i]);
    const double a = gains[i] * amplitude[i];
    modulated.re[i] = a * std::cos(phase[i]);
    modulated.im[i] = a * std::sin(phase[i]);
  }
  Tensor out = spectral::idft2d(modulated);
  if (cache) {
    cache->amplitude = std::move(amplitude);
    cache->phase = std::move(phase);
  }
  return out;
}

Tensor frequency_branch_backward(const FrequencyCache& cache, const Tensor& gains, const Tensor& dy,
                                 Tensor* dgains) {
  const ComplexGrid gy = spectral::idft2d_backward(dy);
  ComplexGrid gx{Tensor::zeros_like(dy), Tensor::zeros_like(dy)};
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const double amp = cache.amplitude[i], c = std::cos(cache.phase[i]), s = std::sin(cache.phase[i]);
    // Y = (g * A) * e^{i phi}
    const double d_mod_amp = gy.re[i] * c + gy.im[i] * s;
    const double d_phase = gains[i] * amp * (gy.im[i] * c - gy.re[i] * s);
    if (dgains) (*dgains)[i] += d_mod_amp * amp;
    const double d_amp = d_mod_amp * gains[i];
    if (amp > 1e-300) {
      gx.re[i] = d_amp * c - d_phase * s / amp;
      gx.im[i] = d_amp * s + d_phase * c / amp;
    } else {
      // phase undefined at the origin; the map is locally X -> g * X
      gx.re[i] = gains[i] * gy.re[i];
      gx.im[i] = gains[i] * gy.im[i];
    }
  }
  return spectral::dft2d_backward(gx);
}

Tensor fsa_forward(const FsaParams& p, const Tensor& tokens, std::size_t grid, FsaCache* cache,
                   const FsaOptions& options) {
  expect_rank(tokens, 2, "fsa tokens");
  const std::size_t d = tokens.dim(1), cr = p.channels();
  if (tokens.dim(0) != grid * grid + 1) {
    throw ShapeError("fsa_forward: token axis has " + std::to_string(tokens.dim(0)) + " rows, expected " +
                     std::to_string(grid * grid + 1));
  }
  Tensor map({grid, grid, d}, std::vector<double>(tokens.storage().begin() + static_cast<long>(d),
                                                  tokens.storage().end()));
  Tensor down = ops::linear(map, p.down_w.value, &p.down_b.value);
  Tensor gains = Tensor::zeros_like(p.gain_logits.value);
  for (std::size_t i = 0; i < gains.size(); ++i) gains[i] = std::exp(p.gain_logits.value[i]);

  FsaCache local;
  FsaCache& c = cache ? *cache : local;
  const Tensor spatial =
      spatial_branch(down, p.dw_kernel.value, p.dw_bias.value, options.spatial_activation, &c.spatial);
  const Tensor freq = frequency_branch(down, gains, &c.frequency);

  Tensor concat({grid, grid, 2 * cr});
  for (std::size_t pos = 0; pos < grid * grid; ++pos) {
    for (std::size_t ch = 0; ch < cr; ++ch) {
      concat[pos * 2 * cr + ch] = spatial[pos * cr + ch];
      concat[pos * 2 * cr + cr + ch] = freq[pos * cr + ch];
    }
  }
  Tensor fused = ops::linear(concat, p.fuse_w.value, &p.fuse_b.value);
  Tensor residual(tokens.shape());
  const double s = p.scale.value[0];
  for (std::size_t i = 0; i < fused.size(); ++i) residual[d + i] = s * fused[i];

  if (cache) {
    c.map = std::move(map);
    c.down = std::move(down);
    c.gains = std::move(gains);
    c.concat = std::move(concat);
    c.fused = std::move(fused);
  }
  return residual;
}

Tensor fsa_backward(FsaParams& p, const FsaCache& c, const Tensor& dresidual, bool param_grads,
                    const FsaOptions& options) {
  const std::size_t grid = c.map.dim(0), d = c.map.dim(2), cr = p.channels();
  const double s = p.scale.value[0];
  Tensor dfused({grid, grid, d});
  double dscale = 0.0;
  for (std::size_t i = 0; i < dfused.size(); ++i) {
    const double g = dresidual[d + i];
    dfused[i] = s * g;
    dscale += g * c.fused[i];
  }
  if (param_grads) p.scale.grad[0] += dscale;

  const Tensor dconcat = ops::linear_backward(c.concat, p.fuse_w.value, dfused, param_grads ? &p.fuse_w.grad : nullptr,
                                              param_grads ? &p.fuse_b.grad : nullptr);
  Tensor dspatial({grid, grid, cr}), dfreq({grid, grid, cr});
  for (std::size_t pos = 0; pos < grid * grid; ++pos) {
    for (std::size_t ch = 0; ch < cr; ++ch) {
      dspatial[pos * cr + ch] = dconcat[pos * 2 * cr + ch];
      dfreq[pos * cr + ch] = dconcat[pos * 2 * cr + cr + ch];
    }
  }

  Tensor dgains = Tensor::zeros_like(c.gains);
  Tensor ddown = spatial_branch_backward(c.spatial, p.dw_kernel.value, options.spatial_activation, dspatial,
                                         param_grads ? &p.dw_kernel.grad : nullptr,
                                         param_grads ? &p.dw_bias.grad : nullptr);
  ddown.axpy(1.0, frequency_branch_backward(c.frequency, c.gains, dfreq, param_grads ? &dgains : nullptr));
  if (param_grads) {
    for (std::size_t i = 0; i < dgains.size(); ++i) p.gain_logits.grad[i] += dgains[i] * c.gains[i];
  }

  const Tensor dmap = ops::linear_backward(c.map, p.down_w.value, ddown, param_grads ? &p.down_w.grad : nullptr,
                                           param_grads ? &p.down_b.grad : nullptr);
  Tensor dtokens({grid * grid + 1, d});
  std::copy(dmap.storage().begin(), dmap.storage().end(), dtokens.storage().begin() + static_cast<long>(d));
  return dtokens;
}

}  // namespace lgcn
