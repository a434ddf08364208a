#include "lgcn/gradcheck_suite.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>

#include "lgcn/cnn.hpp"
#include "lgcn/dfm.hpp"
#include "lgcn/fsa.hpp"
#include "lgcn/head.hpp"
#include "lgcn/model.hpp"
#include "lgcn/ops.hpp"
#include "lgcn/spectral.hpp"
#include "lgcn/vit.hpp"

namespace lgcn {

namespace {

double weighted_sum(const Tensor& y, const Tensor& r) {
  expect_same_shape(y, r, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

// Values kept away from zero so kinked functions stay differentiable under the probe.
Tensor away_from_zero(const Shape& shape, Rng& rng) {
  Tensor t = randu(shape, 0.2, 1.5, rng);
  for (double& v : t.data()) {
    if (rng.uniform(0.0, 1.0) < 0.5) v = -v;
  }
  return t;
}

class Checker {
 public:
  Checker(const SuiteOptions& o, bool composite) : opts_(o) {
    check_ = o.check;
    if (composite) check_.max_coords = o.composite_coords;
  }

  /// Input gradients are computed by `analytic` into buffers owned here.
  Tensor& grad_for(const std::string& name, const Tensor& like) {
    auto [it, _] = grads_.emplace(name, Tensor::zeros_like(like));
    return it->second;
  }

  /// `grad` must come from grad_for(); it is mirrored into a buffer whose
  /// address survives reassignment of the tensor.
  void add(const std::string& name, Tensor& value, const Tensor& grad) {
    auto& mirror = mirrors_[name];
    mirror.assign(grad.size(), 0.0);
    refs_.push_back({name, value.data(), mirror});
  }

  void add_params(const std::function<void(const ParamVisitor&)>& visit) {
    visit([&](const std::string& name, Param& p) {
      params_.push_back(&p);
      refs_.push_back(param_ref(name, p.value, p.grad));
    });
  }

  GradCheckReport run(const std::string& op, const std::function<double()>& loss,
                      const std::function<void()>& analytic) {
    auto wrapped = [&] {
      for (Param* p : params_) p->zero_grad();
      analytic();
      if (opts_.inject_bug) {
        for (Param* p : params_) p->grad.axpy(1.0, p->grad);
        for (auto& [_, g] : grads_) g.axpy(1.0, g);
      }
      for (auto& [name, g] : grads_) {
        auto it = mirrors_.find(name);
        if (it == mirrors_.end()) continue;
        if (g.size() != it->second.size()) throw ShapeError("gradcheck: gradient shape changed for " + name);
        std::copy(g.storage().begin(), g.storage().end(), it->second.begin());
      }
    };
    return grad_check(op, loss, wrapped, refs_, check_);
  }

 private:
  const SuiteOptions& opts_;
  GradCheckOptions check_;
  std::vector<ParamRef> refs_;
  std::vector<Param*> params_;
  std::map<std::string, Tensor> grads_;
  std::map<std::string, std::vector<double>> mirrors_;
};

using CaseFn = std::function<GradCheckReport(const SuiteOptions&)>;

struct Entry {
  SuiteCase info;
  CaseFn run;
};

// Elementwise ops share one shape of check.
CaseFn unary(const std::string& name, Tensor (*f)(const Tensor&),
             std::function<Tensor(const Tensor& x, const Tensor& y, const Tensor& dy)> back) {
  return [=](const SuiteOptions& o) {
    Rng rng(11);
    Tensor x = away_from_zero({3, 5}, rng), r = randn({3, 5}, 1.0, rng);
    Checker c(o, false);
    Tensor& gx = c.grad_for("x", x);
    c.add("x", x, gx);
    return c.run(name, [&] { return weighted_sum(f(x), r); }, [&] { gx = back(x, f(x), r); });
  };
}

std::vector<Entry> registry() {
  using namespace ops;
  std::vector<Entry> e;

  e.push_back({{"linear", "ops"}, [](const SuiteOptions& o) {
                 Rng rng(1);
                 Tensor x = randn({3, 5}, 1.0, rng), w = randn({5, 4}, 0.5, rng), b = randn({4}, 0.5, rng);
                 Tensor r = randn({3, 4}, 1.0, rng);
                 Checker c(o, false);
                 Tensor &gx = c.grad_for("x", x), &gw = c.grad_for("w", w), &gb = c.grad_for("b", b);
                 c.add("x", x, gx);
                 c.add("w", w, gw);
                 c.add("b", b, gb);
                 return c.run("linear", [&] { return weighted_sum(linear(x, w, &b), r); },
                              [&] {
                                gw.fill(0.0);
                                gb.fill(0.0);
                                gx = linear_backward(x, w, r, &gw, &gb);
                              });
               }});
  e.push_back({{"layer_norm", "ops"}, [](const SuiteOptions& o) {
                 Rng rng(2);
                 Tensor x = randn({3, 6}, 1.0, rng), g = randn({6}, 1.0, rng), b = randn({6}, 1.0, rng);
                 Tensor r = randn({3, 6}, 1.0, rng);
                 Checker c(o, false);
                 Tensor &gx = c.grad_for("x", x), &gg = c.grad_for("gamma", g), &gb = c.grad_for("beta", b);
                 c.add("x", x, gx);
                 c.add("gamma", g, gg);
                 c.add("beta", b, gb);
                 return c.run("layer_norm", [&] { return weighted_sum(layer_norm(x, g, b, nullptr), r); },
                              [&] {
                                LayerNormCache cache;
                                layer_norm(x, g, b, &cache);
                                gg.fill(0.0);
                                gb.fill(0.0);
                                gx = layer_norm_backward(cache, g, r, &gg, &gb);
                              });
               }});
  e.push_back({{"relu", "ops"}, unary("relu", relu, [](const Tensor& x, const Tensor&, const Tensor& dy) {
                 return relu_backward(x, dy);
               })});
  e.push_back({{"gelu", "ops"}, unary("gelu", gelu, [](const Tensor& x, const Tensor&, const Tensor& dy) {
                 return gelu_backward(x, dy);
               })});
  e.push_back({{"sigmoid", "ops"}, unary("sigmoid", sigmoid, [](const Tensor&, const Tensor& y, const Tensor& dy) {
                 return sigmoid_backward(y, dy);
               })});
  e.push_back({{"softplus", "ops"}, unary("softplus", softplus, [](const Tensor& x, const Tensor&, const Tensor& dy) {
                 return softplus_backward(x, dy);
               })});
  e.push_back({{"softmax", "ops"}, unary("softmax", softmax, [](const Tensor&, const Tensor& y, const Tensor& dy) {
                 return softmax_backward(y, dy);
               })});
  e.push_back({{"l2_normalize", "ops"},
               unary("l2_normalize", l2_normalize,
                     [](const Tensor& x, const Tensor&, const Tensor& dy) { return l2_normalize_backward(x, dy); })});
  e.push_back({{"add_mul", "ops"}, [](const SuiteOptions& o) {
                 Rng rng(3);
                 Tensor a = randn({2, 4}, 1.0, rng), b = randn({2, 4}, 1.0, rng), r = randn({2, 4}, 1.0, rng);
                 Checker c(o, false);
                 Tensor &ga = c.grad_for("a", a), &gb = c.grad_for("b", b);
                 c.add("a", a, ga);
                 c.add("b", b, gb);
                 // d/da sum(r * (a*b + a)) = r*b + r
                 return c.run("add_mul", [&] { return weighted_sum(add(mul(a, b), a), r); },
                              [&] {
                                ga = add(mul(r, b), r);
                                gb = mul(r, a);
                              });
               }});
  e.push_back({{"conv2d", "ops"}, [](const SuiteOptions& o) {
                 Rng rng(4);
                 Tensor x = randn({5, 5, 2}, 1.0, rng), k = randn({3, 2, 3, 3}, 0.5, rng), b = randn({3}, 0.5, rng);
                 Tensor r = randn({3, 3, 3}, 1.0, rng);
                 Checker c(o, false);
                 Tensor &gx = c.grad_for("x", x), &gk = c.grad_for("kernel", k), &gb = c.grad_for("bias", b);
                 c.add("x", x, gx);
                 c.add("kernel", k, gk);
                 c.add("bias", b, gb);
                 return c.run("conv2d", [&] { return weighted_sum(conv2d(x, k, &b, 2, 1), r); },
                              [&] {
                                gk.fill(0.0);
                                gb.fill(0.0);
                                gx = conv2d_backward(x, k, 2, 1, r, &gk, &gb);
                              });
               }});
  e.push_back({{"depthwise_conv2d", "ops"}, [](const SuiteOptions& o) {
                 Rng rng(5);
                 Tensor x = randn({4, 4, 3}, 1.0, rng), k = randn({3, 3, 3}, 0.5, rng), b = randn({3}, 0.5, rng);
                 Tensor r = randn({4, 4, 3}, 1.0, rng);
                 Checker c(o, false);
                 Tensor &gx = c.grad_for("x", x), &gk = c.grad_for("kernel", k), &gb = c.grad_for("bias", b);
                 c.add("x", x, gx);
                 c.add("kernel", k, gk);
                 c.add("bias", b, gb);
                 return c.run("depthwise_conv2d", [&] { return weighted_sum(depthwise_conv2d(x, k, &b, 1), r); },
                              [&] {
                                gk.fill(0.0);
                                gb.fill(0.0);
                                gx = depthwise_conv2d_backward(x, k, 1, r, &gk, &gb);
                              });
               }});
  e.push_back({{"bilinear_resize", "ops"}, [](const SuiteOptions& o) {
                 Rng rng(6);
                 Tensor x = randn({3, 3, 2}, 1.0, rng), r = randn({5, 4, 2}, 1.0, rng);
                 Checker c(o, false);
                 Tensor& gx = c.grad_for("x", x);
                 c.add("x", x, gx);
                 return c.run("bilinear_resize", [&] { return weighted_sum(bilinear_resize(x, 5, 4), r); },
                              [&] { gx = bilinear_resize_backward(x.shape(), r); });
               }});
  e.push_back({{"avg_pool", "ops"}, [](const SuiteOptions& o) {
                 Rng rng(7);
                 Tensor x = randn({4, 4, 2}, 1.0, rng), r = randn({2, 2, 2}, 1.0, rng);
                 Checker c(o, false);
                 Tensor& gx = c.grad_for("x", x);
                 c.add("x", x, gx);
                 return c.run("avg_pool", [&] { return weighted_sum(avg_pool(x, 2), r); },
                              [&] { gx = avg_pool_backward(x.shape(), 2, r); });
               }});
  e.push_back({{"attention", "ops"}, [](const SuiteOptions& o) {
                 Rng rng(8);
                 Tensor q = randn({4, 3}, 1.0, rng), k = randn({4, 3}, 1.0, rng), v = randn({4, 2}, 1.0, rng);
                 Tensor r = randn({4, 2}, 1.0, rng);
                 Checker c(o, false);
                 Tensor &gq = c.grad_for("q", q), &gk = c.grad_for("k", k), &gv = c.grad_for("v", v);
                 c.add("q", q, gq);
                 c.add("k", k, gk);
                 c.add("v", v, gv);
                 return c.run("attention", [&] { return weighted_sum(attention(q, k, v, nullptr), r); },
                              [&] {
                                AttentionCache cache;
                                attention(q, k, v, &cache);
                                auto g = attention_backward(q, k, v, cache, r);
                                gq = g.dq;
                                gk = g.dk;
                                gv = g.dv;
                              });
               }});

  e.push_back({{"dft2d", "spectral"}, [](const SuiteOptions& o) {
                 Rng rng(9);
                 Tensor x = randn({4, 4, 2}, 1.0, rng);
                 ComplexGrid r{randn({4, 4, 2}, 1.0, rng), randn({4, 4, 2}, 1.0, rng)};
                 Checker c(o, false);
                 Tensor& gx = c.grad_for("x", x);
                 c.add("x", x, gx);
                 return c.run("dft2d",
                              [&] {
                                const ComplexGrid X = spectral::dft2d(x);
                                return weighted_sum(X.re, r.re) + weighted_sum(X.im, r.im);
                              },
                              [&] { gx = spectral::dft2d_backward(r); });
               }});
  e.push_back({{"idft2d", "spectral"}, [](const SuiteOptions& o) {
                 Rng rng(10);
                 Tensor re = randn({4, 4, 2}, 1.0, rng), im = randn({4, 4, 2}, 1.0, rng), r = randn({4, 4, 2}, 1.0, rng);
                 Checker c(o, false);
                 Tensor &gre = c.grad_for("re", re), &gim = c.grad_for("im", im);
                 c.add("re", re, gre);
                 c.add("im", im, gim);
                 return c.run("idft2d", [&] { return weighted_sum(spectral::idft2d({re, im}), r); },
                              [&] {
                                const ComplexGrid g = spectral::idft2d_backward(r);
                                gre = g.re;
                                gim = g.im;
                              });
               }});
  e.push_back({{"frequency_branch", "spectral"}, [](const SuiteOptions& o) {
                 Rng rng(12);
                 Tensor x = randn({4, 4, 3}, 1.0, rng), gains = randu({4, 4, 3}, 0.5, 2.0, rng);
                 Tensor r = randn({4, 4, 3}, 1.0, rng);
                 Checker c(o, false);
                 Tensor &gx = c.grad_for("x", x), &gg = c.grad_for("gains", gains);
                 c.add("x", x, gx);
                 c.add("gains", gains, gg);
                 return c.run("frequency_branch", [&] { return weighted_sum(frequency_branch(x, gains, nullptr), r); },
                              [&] {
                                FrequencyCache cache;
                                frequency_branch(x, gains, &cache);
                                gg.fill(0.0);
                                gx = frequency_branch_backward(cache, gains, r, &gg);
                              });
               }});

  e.push_back({{"spatial_branch", "fsa"}, [](const SuiteOptions& o) {
                 Rng rng(13);
                 Tensor x = randn({4, 4, 3}, 1.0, rng), k = randn({3, 3, 3}, 0.5, rng), b = randn({3}, 0.3, rng);
                 Tensor r = randn({4, 4, 3}, 1.0, rng);
                 Checker c(o, false);
                 Tensor &gx = c.grad_for("x", x), &gk = c.grad_for("kernel", k), &gb = c.grad_for("bias", b);
                 c.add("x", x, gx);
                 c.add("kernel", k, gk);
                 c.add("bias", b, gb);
                 return c.run("spatial_branch",
                              [&] { return weighted_sum(spatial_branch(x, k, b, true, nullptr), r); },
                              [&] {
                                SpatialCache cache;
                                spatial_branch(x, k, b, true, &cache);
                                gk.fill(0.0);
                                gb.fill(0.0);
                                gx = spatial_branch_backward(cache, k, true, r, &gk, &gb);
                              });
               }});
  e.push_back({{"fsa_adapter", "fsa"}, [](const SuiteOptions& o) {
                 const ModelConfig cfg = gradcheck_config();
                 Rng rng(14);
                 FsaParams p = FsaParams::init(cfg, rng);
                 p.fuse_w.value = randn(p.fuse_w.value.shape(), 0.3, rng);
                 p.gain_logits.value = randn(p.gain_logits.value.shape(), 0.3, rng);
                 Tensor x = randn({cfg.tokens(), cfg.embed_dim}, 1.0, rng);
                 Tensor r = randn(x.shape(), 1.0, rng);
                 Checker c(o, true);
                 Tensor& gx = c.grad_for("tokens", x);
                 c.add("tokens", x, gx);
                 c.add_params([&](const ParamVisitor& f) { p.visit("fsa", f); });
                 return c.run("fsa_adapter", [&] { return weighted_sum(fsa_forward(p, x, cfg.grid, nullptr), r); },
                              [&] {
                                FsaCache cache;
                                fsa_forward(p, x, cfg.grid, &cache);
                                gx = fsa_backward(p, cache, r, true);
                              });
               }});

  e.push_back({{"mhsa", "vit"}, [](const SuiteOptions& o) {
                 Rng rng(15);
                 Mhsa m = Mhsa::init(6, 2, rng);
                 Tensor x = randn({5, 6}, 1.0, rng), r = randn({5, 6}, 1.0, rng);
                 Checker c(o, true);
                 Tensor& gx = c.grad_for("x", x);
                 c.add("x", x, gx);
                 c.add_params([&](const ParamVisitor& f) { m.visit("mhsa", f); });
                 return c.run("mhsa", [&] { return weighted_sum(mhsa_forward(m, x, nullptr), r); },
                              [&] {
                                MhsaCache cache;
                                mhsa_forward(m, x, &cache);
                                gx = mhsa_backward(m, cache, r, true);
                              });
               }});
  e.push_back({{"vit_block_fsa", "vit"}, [](const SuiteOptions& o) {
                 const ModelConfig cfg = gradcheck_config();
                 Rng rng(16);
                 VitBlock b = VitBlock::init(cfg, rng);
                 FsaParams a = FsaParams::init(cfg, rng);
                 a.fuse_w.value = randn(a.fuse_w.value.shape(), 0.3, rng);
                 Tensor x = randn({cfg.tokens(), cfg.embed_dim}, 1.0, rng), r = randn(x.shape(), 1.0, rng);
                 Checker c(o, true);
                 Tensor& gx = c.grad_for("x", x);
                 c.add("x", x, gx);
                 c.add_params([&](const ParamVisitor& f) {
                   b.visit("block", f);
                   a.visit("fsa", f);
                 });
                 return c.run("vit_block_fsa",
                              [&] { return weighted_sum(vit_block_forward(b, &a, x, cfg.grid, nullptr), r); },
                              [&] {
                                BlockCache cache;
                                vit_block_forward(b, &a, x, cfg.grid, &cache);
                                gx = vit_block_backward(b, &a, cache, r, true);
                              });
               }});
  e.push_back({{"vit_forward", "vit"}, [](const SuiteOptions& o) {
                 const ModelConfig cfg = gradcheck_config();
                 Rng rng(17);
                 VitParams p = VitParams::init(cfg, rng);
                 std::vector<FsaParams> adapters;
                 for (std::size_t i = 0; i < cfg.depth; ++i) {
                   adapters.push_back(FsaParams::init(cfg, rng));
                   adapters.back().fuse_w.value = randn(adapters.back().fuse_w.value.shape(), 0.3, rng);
                 }
                 Tensor image = randu({cfg.image_size, cfg.image_size, 3}, 0.0, 1.0, rng);
                 Tensor r = randn({cfg.grid, cfg.grid, cfg.embed_dim}, 1.0, rng);
                 Checker c(o, true);
                 c.add_params([&](const ParamVisitor& f) {
                   p.visit("vit", f);
                   for (std::size_t i = 0; i < adapters.size(); ++i) adapters[i].visit("fsa." + std::to_string(i), f);
                 });
                 return c.run("vit_forward",
                              [&] { return weighted_sum(vit_forward(image, p, &adapters, cfg, nullptr), r); },
                              [&] {
                                VitCache cache;
                                vit_forward(image, p, &adapters, cfg, &cache);
                                vit_backward(p, &adapters, cfg, cache, r, true);
                              });
               }});

  e.push_back({{"align_upsample", "cnn"}, [](const SuiteOptions& o) {
                 const ModelConfig cfg = gradcheck_config();
                 Rng rng(18);
                 CnnParams p = CnnParams::init(cfg, rng);
                 Tensor x = randn({cfg.cnn_grid, cfg.cnn_grid, cfg.cnn_channels}, 1.0, rng);
                 Tensor r = randn({cfg.grid, cfg.grid, cfg.embed_dim}, 1.0, rng);
                 Checker c(o, true);
                 Tensor& gx = c.grad_for("f_res", x);
                 c.add("f_res", x, gx);
                 c.add_params([&](const ParamVisitor& f) {
                   f("align_k", p.align_k);
                   f("align_b", p.align_b);
                 });
                 return c.run("align_upsample",
                              [&] { return weighted_sum(align_upsample(x, p, cfg, nullptr), r); },
                              [&] {
                                AlignCache cache;
                                align_upsample(x, p, cfg, &cache);
                                gx = align_upsample_backward(p, cache, r);
                              });
               }});
  e.push_back({{"cnn_align", "cnn"}, [](const SuiteOptions& o) {
                 const ModelConfig cfg = gradcheck_config();
                 Rng rng(19);
                 CnnParams p = CnnParams::init(cfg, rng);
                 Tensor image = randu({cfg.image_size, cfg.image_size, 3}, 0.0, 1.0, rng);
                 Tensor r = randn({cfg.grid, cfg.grid, cfg.embed_dim}, 1.0, rng);
                 Checker c(o, true);
                 c.add_params([&](const ParamVisitor& f) { p.visit("cnn", f); });
                 return c.run("cnn_align",
                              [&] {
                                return weighted_sum(align_upsample(cnn_forward(image, p, cfg, nullptr), p, cfg, nullptr),
                                                    r);
                              },
                              [&] {
                                CnnCache cc;
                                AlignCache ac;
                                align_upsample(cnn_forward(image, p, cfg, &cc), p, cfg, &ac);
                                cnn_backward(p, cfg, cc, align_upsample_backward(p, ac, r));
                              });
               }});

  e.push_back({{"gate_weights", "dfm"}, [](const SuiteOptions& o) {
                 const ModelConfig cfg = gradcheck_config();
                 Rng rng(20);
                 DfmParams p = DfmParams::init(cfg, rng);
                 Tensor f = randn({cfg.grid, cfg.grid, cfg.embed_dim}, 1.0, rng), r = randn(f.shape(), 1.0, rng);
                 Checker c(o, true);
                 Tensor& gf = c.grad_for("F", f);
                 c.add("F", f, gf);
                 c.add_params([&](const ParamVisitor& v) {
                   v("w1", p.w1);
                   v("b1", p.b1);
                   v("w2", p.w2);
                   v("b2", p.b2);
                 });
                 return c.run("gate_weights", [&] { return weighted_sum(gate_weights(f, p, nullptr), r); },
                              [&] {
                                GateCache cache;
                                gate_weights(f, p, &cache);
                                gf = gate_weights_backward(p, cache, r);
                              });
               }});
  for (DfmMode mode : {DfmMode::kCrossStream, DfmMode::kVitOnly}) {
    const std::string name = "dfm_" + to_string(mode);
    e.push_back({{name, "dfm"}, [mode, name](const SuiteOptions& o) {
                   const ModelConfig cfg = gradcheck_config();
                   Rng rng(21);
                   DfmParams p = DfmParams::init(cfg, rng);
                   p.alpha1.value.fill(0.8);
                   p.alpha2.value.fill(1.3);
                   Tensor fv = randn({cfg.grid, cfg.grid, cfg.embed_dim}, 1.0, rng), fr = randn(fv.shape(), 1.0, rng);
                   Tensor r = randn(fv.shape(), 1.0, rng);
                   Checker c(o, true);
                   Tensor &gv = c.grad_for("F_vit", fv), &gr = c.grad_for("F_res", fr);
                   c.add("F_vit", fv, gv);
                   c.add("F_res", fr, gr);
                   c.add_params([&](const ParamVisitor& v) { p.visit("dfm", v); });
                   return c.run(name, [&] { return weighted_sum(dfm_forward(fv, fr, p, mode, nullptr), r); },
                                [&] {
                                  DfmCache cache;
                                  dfm_forward(fv, fr, p, mode, &cache);
                                  DfmGrads g = dfm_backward(p, mode, cache, r);
                                  gv = g.d_vit;
                                  gr = g.d_res;
                                });
                 }});
  }

  e.push_back({{"gem_pool", "head"}, [](const SuiteOptions& o) {
                 Rng rng(22);
                 Tensor x = randu({4, 4, 3}, 0.2, 2.0, rng), r = randn({kRegions, 3}, 1.0, rng);
                 Checker c(o, false);
                 Tensor& gx = c.grad_for("x", x);
                 c.add("x", x, gx);
                 return c.run("gem_pool", [&] { return weighted_sum(regional_pool(x, 3.0, nullptr), r); },
                              [&] {
                                PoolCache cache;
                                regional_pool(x, 3.0, &cache);
                                gx = regional_pool_backward(cache, r);
                              });
               }});
  e.push_back({{"descriptor_head", "head"}, [](const SuiteOptions& o) {
                 Rng rng(23);
                 const std::size_t grid = 4, ch = 6, batch = 2;
                 HeadParams h = HeadParams::init(ch, 2, rng);
                 h.attn.proj_w.value = randn(h.attn.proj_w.value.shape(), 0.3, rng);
                 std::vector<Tensor> maps;
                 for (std::size_t i = 0; i < batch; ++i) maps.push_back(randu({grid, grid, ch}, 0.2, 2.0, rng));
                 Tensor r = randn({batch, kRegions * ch}, 1.0, rng);
                 auto forward = [&](std::vector<PoolCache>* pc, CorrelateCache* cc, Tensor* pooled, Tensor* corr) {
                   Tensor b({batch, kRegions, ch});
                   for (std::size_t i = 0; i < batch; ++i) {
                     const Tensor p = regional_pool(maps[i], 3.0, pc ? &(*pc)[i] : nullptr);
                     std::copy(p.storage().begin(), p.storage().end(), b.ptr() + i * p.size());
                   }
                   Tensor c = cross_image_correlate(b, h, cc);
                   if (pooled) *pooled = b;
                   if (corr) *corr = c;
                   return finalize(c);
                 };
                 Checker c(o, true);
                 std::vector<Tensor*> gmaps;
                 for (std::size_t i = 0; i < batch; ++i) {
                   const std::string n = "map" + std::to_string(i);
                   gmaps.push_back(&c.grad_for(n, maps[i]));
                   c.add(n, maps[i], *gmaps.back());
                 }
                 c.add_params([&](const ParamVisitor& f) { h.visit("head", f); });
                 return c.run("descriptor_head", [&] { return weighted_sum(forward(nullptr, nullptr, nullptr, nullptr), r); },
                              [&] {
                                std::vector<PoolCache> pc(batch);
                                CorrelateCache cc;
                                Tensor pooled, corr;
                                forward(&pc, &cc, &pooled, &corr);
                                const Tensor dcorr = finalize_backward(corr, r).reshaped(corr.shape());
                                const Tensor dpooled = cross_image_correlate_backward(h, cc, dcorr);
                                const std::size_t w = kRegions * ch;
                                for (std::size_t i = 0; i < batch; ++i) {
                                  Tensor d({kRegions, ch}, std::vector<double>(dpooled.ptr() + i * w, dpooled.ptr() + (i + 1) * w));
                                  *gmaps[i] = regional_pool_backward(pc[i], d);
                                }
                              });
               }});

  e.push_back({{"end_to_end", "model"}, [](const SuiteOptions& o) {
                 const ModelConfig cfg = gradcheck_config();
                 LgcnModel m(cfg, {}, 24);
                 Rng rng(25);
                 // move zero-initialized projections off zero so every path carries gradient
                 for (auto& a : m.adapters) a.fuse_w.value = randn(a.fuse_w.value.shape(), 0.3, rng);
                 m.head.attn.proj_w.value = randn(m.head.attn.proj_w.value.shape(), 0.3, rng);
                 std::vector<Tensor> images;
                 for (int i = 0; i < 2; ++i) images.push_back(randu({cfg.image_size, cfg.image_size, 3}, 0.0, 1.0, rng));
                 const std::vector<const Tensor*> ptrs{&images[0], &images[1]};
                 Tensor r = randn({2, m.descriptor_dim()}, 1.0, rng);
                 Checker c(o, true);
                 c.add_params([&](const ParamVisitor& f) { m.visit_params(f); });
                 return c.run("end_to_end", [&] { return weighted_sum(m.forward_batch(ptrs, true, nullptr), r); },
                              [&] {
                                BatchTrace trace;
                                m.forward_batch(ptrs, true, &trace);
                                m.backward_batch(trace, r, true);
                              });
               }});
  return e;
}

}  // namespace

ModelConfig gradcheck_config() {
  ModelConfig c;
  c.preset = "gradcheck";
  c.image_size = 16;
  c.patch_size = 4;
  c.grid = 4;
  c.embed_dim = 8;
  c.heads = 2;
  c.depth = 2;
  c.cnn_width1 = 3;
  c.cnn_width2 = 4;
  c.cnn_channels = 5;
  c.cnn_grid = 2;
  c.align_side = 3;
  c.adapter_ratio = 0.5;
  c.validate();
  return c;
}

std::vector<SuiteCase> gradcheck_cases() {
  std::vector<SuiteCase> out;
  for (const auto& e : registry()) out.push_back(e.info);
  return out;
}

std::vector<GradCheckReport> run_gradcheck_suite(const std::string& scope, const SuiteOptions& options) {
  std::vector<GradCheckReport> out;
  for (const auto& e : registry()) {
    if (scope == "all" || scope == e.info.scope || scope == e.info.name) out.push_back(e.run(options));
  }
  if (out.empty()) throw std::invalid_argument("unknown gradcheck scope: " + scope);
  return out;
}

}  // namespace lgcn
