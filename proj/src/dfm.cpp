#include "lgcn/dfm.hpp"

#include <cmath>

#include "lgcn/ops.hpp"

namespace lgcn {

DfmParams DfmParams::init(const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.embed_dim, h = cfg.gate_hidden();
  DfmParams p;
  p.w1 = Param(randn({d, h}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
  p.b1 = Param(Tensor({h}));
  p.w2 = Param(randn({h, d}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
  p.b2 = Param(Tensor({d}));
  p.alpha1 = Param(Tensor({1}, 1.0));
  p.alpha2 = Param(Tensor({1}, 1.0));
  return p;
}

void DfmParams::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + "w1", w1);
  f(prefix + "b1", b1);
  f(prefix + "w2", w2);
  f(prefix + "b2", b2);
  f(prefix + "alpha1", alpha1);
  f(prefix + "alpha2", alpha2);
}

Tensor gate_weights(const Tensor& f, const DfmParams& p, GateCache* cache) {
  expect_rank(f, 3, "gate_weights input");
  Tensor hidden_pre = ops::linear(f, p.w1.value, &p.b1.value);
  Tensor hidden = ops::relu(hidden_pre);
  Tensor omega = ops::sigmoid(ops::linear(hidden, p.w2.value, &p.b2.value));
  if (cache) {
    cache->input = f;
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
    cache->omega = omega;
  }
  return omega;
}

Tensor gate_weights_backward(DfmParams& p, const GateCache& c, const Tensor& domega) {
  const Tensor dlogit = ops::sigmoid_backward(c.omega, domega);
  const Tensor dhidden = ops::linear_backward(c.hidden, p.w2.value, dlogit, &p.w2.grad, &p.b2.grad);
  const Tensor dpre = ops::relu_backward(c.hidden_pre, dhidden);
  return ops::linear_backward(c.input, p.w1.value, dpre, &p.w1.grad, &p.b1.grad);
}

Tensor dfm_forward(const Tensor& f_vit, const Tensor& f_res, const DfmParams& p, DfmMode mode, DfmCache* cache) {
  expect_same_shape(f_vit, f_res, "dfm_forward stream shapes");
  GateCache local;
  GateCache& gc = cache ? cache->gate : local;
  const Tensor omega = gate_weights(ops::add(f_vit, f_res), p, &gc);
  const Tensor& second = mode == DfmMode::kCrossStream ? f_res : f_vit;
  const double a1 = p.alpha1.value[0], a2 = p.alpha2.value[0];
  Tensor out = Tensor::zeros_like(f_vit);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a1 * (omega[i] * f_vit[i]) + a2 * ((1.0 - omega[i]) * second[i]);
  }
  if (cache) {
    cache->f_vit = f_vit;
    cache->f_res = f_res;
  }
  return out;
}

DfmGrads dfm_backward(DfmParams& p, DfmMode mode, const DfmCache& c, const Tensor& dout) {
  const Tensor& omega = c.gate.omega;
  const bool cross_stream = mode == DfmMode::kCrossStream;
  const Tensor& second = cross_stream ? c.f_res : c.f_vit;
  const double a1 = p.alpha1.value[0], a2 = p.alpha2.value[0];
  DfmGrads g{Tensor::zeros_like(c.f_vit), Tensor::zeros_like(c.f_res)};
  Tensor domega = Tensor::zeros_like(omega);
  double da1 = 0.0, da2 = 0.0;
  for (std::size_t i = 0; i < dout.size(); ++i) {
    const double go = dout[i];
    da1 += go * omega[i] * c.f_vit[i];
    da2 += go * (1.0 - omega[i]) * second[i];
    domega[i] = go * (a1 * c.f_vit[i] - a2 * second[i]);
    g.d_vit[i] = go * a1 * omega[i];
    if (cross_stream) {
      g.d_res[i] = go * a2 * (1.0 - omega[i]);
    } else {
      g.d_vit[i] += go * a2 * (1.0 - omega[i]);
    }
  }
  p.alpha1.grad[0] += da1;
  p.alpha2.grad[0] += da2;
  const Tensor df = gate_weights_backward(p, c.gate, domega);
  g.d_vit.axpy(1.0, df);
  g.d_res.axpy(1.0, df);
  return g;
}

}  // namespace lgcn
