#include "lgcn/model.hpp"

#include <stdexcept>
#include <thread>

#include "lgcn/ops.hpp"

namespace lgcn {

namespace {

std::size_t fused_width(const ModelConfig& cfg, const AblationFlags& f) {
  return (!f.disable_cnn_stream && f.disable_dfm) ? 2 * cfg.embed_dim : cfg.embed_dim;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0) * a.dim(1), ca = a.dim(2), cb = b.dim(2);
  Tensor out({a.dim(0), a.dim(1), ca + cb});
  for (std::size_t p = 0; p < n; ++p) {
    std::copy(a.ptr() + p * ca, a.ptr() + (p + 1) * ca, out.ptr() + p * (ca + cb));
    std::copy(b.ptr() + p * cb, b.ptr() + (p + 1) * cb, out.ptr() + p * (ca + cb) + ca);
  }
  return out;
}

void split_channels(const Tensor& src, Tensor& a, Tensor& b) {
  const std::size_t n = a.dim(0) * a.dim(1), ca = a.dim(2), cb = b.dim(2);
  for (std::size_t p = 0; p < n; ++p) {
    std::copy(src.ptr() + p * (ca + cb), src.ptr() + p * (ca + cb) + ca, a.ptr() + p * ca);
    std::copy(src.ptr() + p * (ca + cb) + ca, src.ptr() + (p + 1) * (ca + cb), b.ptr() + p * cb);
  }
}

Tensor slice_batch(const Tensor& t, std::size_t i) {
  const std::size_t w = t.size() / t.dim(0);
  Shape s = t.shape();
  s[0] = 1;
  return Tensor(s, std::vector<double>(t.storage().begin() + static_cast<long>(i * w),
                                       t.storage().begin() + static_cast<long>((i + 1) * w)));
}

void put_batch(Tensor& t, std::size_t i, const Tensor& src) {
  std::copy(src.storage().begin(), src.storage().end(), t.storage().begin() + static_cast<long>(i * src.size()));
}

}  // namespace

LgcnModel::LgcnModel(ModelConfig cfg, AblationFlags flags, std::uint64_t seed)
    : cfg_(std::move(cfg)), flags_(flags) {
  cfg_.validate();
  // separate streams per component so enabling one never reshuffles another
  Rng vit_rng(seed * 7919 + 1), fsa_rng(seed * 7919 + 2), cnn_rng(seed * 7919 + 3), dfm_rng(seed * 7919 + 4),
      head_rng(seed * 7919 + 5);
  vit = VitParams::init(cfg_, vit_rng);
  for (std::size_t i = 0; i < cfg_.depth; ++i) adapters.push_back(FsaParams::init(cfg_, fsa_rng));
  cnn = CnnParams::init(cfg_, cnn_rng);
  dfm = DfmParams::init(cfg_, dfm_rng);
  head = HeadParams::init(fused_width(cfg_, flags_), cfg_.heads, head_rng);
}

void LgcnModel::set_flags(const AblationFlags& flags) {
  if (fused_width(cfg_, flags) != fused_width(cfg_, flags_)) {
    throw std::invalid_argument("ablation flags change the fused channel width; the head cannot be reused");
  }
  flags_ = flags;
}

std::size_t LgcnModel::fused_channels() const { return fused_width(cfg_, flags_); }

void LgcnModel::visit_params(const ParamVisitor& f) {
  vit.visit("vit.", f);
  for (std::size_t i = 0; i < adapters.size(); ++i) adapters[i].visit("fsa." + std::to_string(i) + ".", f);
  cnn.visit("cnn.", f);
  dfm.visit("dfm.", f);
  head.visit("head.", f);
}

void LgcnModel::visit_params(const ConstParamVisitor& f) const {
  const_cast<LgcnModel*>(this)->visit_params(ParamVisitor([&](const std::string& n, Param& p) { f(n, p); }));
}

bool LgcnModel::is_backbone(const std::string& name) { return name.rfind("vit.", 0) == 0; }

void LgcnModel::zero_grad() {
  visit_params(ParamVisitor([](const std::string&, Param& p) { p.zero_grad(); }));
}

std::size_t LgcnModel::parameter_count() const {
  std::size_t n = 0;
  visit_params(ConstParamVisitor([&](const std::string&, const Param& p) { n += p.value.size(); }));
  return n;
}

Tensor LgcnModel::forward_image(const Tensor& image, ImageTrace* trace) const {
  ImageTrace local;
  ImageTrace& t = trace ? *trace : local;
  const bool keep = trace != nullptr;
  t.f_vit = vit_forward(image, vit, flags_.disable_fsa ? nullptr : &adapters, cfg_, keep ? &t.vit : nullptr);

  if (flags_.disable_cnn_stream) {
    t.fused = t.f_vit;
  } else {
    t.cnn_out = cnn_forward(image, cnn, cfg_, keep ? &t.cnn : nullptr);
    t.f_res = align_upsample(t.cnn_out, cnn, cfg_, keep ? &t.align : nullptr);
    if (flags_.disable_dfm) {
      t.fused = concat_channels(t.f_vit, t.f_res);
    } else if (flags_.static_fusion) {
      t.fused = ops::scale(ops::add(t.f_vit, t.f_res), 0.5);
    } else {
      t.fused = dfm_forward(t.f_vit, t.f_res, dfm, flags_.dfm_mode, &t.dfm);
      t.omega = t.dfm.gate.omega;
    }
  }
  t.pooled = regional_pool(ops::softplus(t.fused), cfg_.gem_p, &t.pool);
  return t.pooled;
}

void LgcnModel::backward_image(const ImageTrace& t, const Tensor& dpooled, bool backbone_grads) {
  const Tensor dfused = ops::softplus_backward(t.fused, regional_pool_backward(t.pool, dpooled));
  Tensor dvit, dres;
  if (flags_.disable_cnn_stream) {
    dvit = dfused;
  } else if (flags_.disable_dfm) {
    dvit = Tensor::zeros_like(t.f_vit);
    dres = Tensor::zeros_like(t.f_res);
    split_channels(dfused, dvit, dres);
  } else if (flags_.static_fusion) {
    dvit = ops::scale(dfused, 0.5);
    dres = dvit;
  } else {
    DfmGrads g = dfm_backward(dfm, flags_.dfm_mode, t.dfm, dfused);
    dvit = std::move(g.d_vit);
    dres = std::move(g.d_res);
  }
  if (!flags_.disable_cnn_stream) {
    const Tensor dcnn = align_upsample_backward(cnn, t.align, dres);
    cnn_backward(cnn, cfg_, t.cnn, dcnn);
  }
  vit_backward(vit, flags_.disable_fsa ? nullptr : &adapters, cfg_, t.vit, dvit, backbone_grads);
}

Tensor LgcnModel::describe(const Tensor& image) const {
  const Tensor pooled = forward_image(image, nullptr);
  const Tensor batch = pooled.reshaped({1, pooled.dim(0), pooled.dim(1)});
  const Tensor desc = finalize(cross_image_correlate(batch, head, nullptr));
  return desc.reshaped({desc.size()});
}

Tensor LgcnModel::describe_all(const std::vector<Tensor>& images, std::size_t threads) const {
  const std::size_t n = images.size(), dim = descriptor_dim();
  if (n == 0) throw std::invalid_argument("describe_all: no images");
  Tensor out({n, dim});
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < n; i += step) {
      const Tensor d = describe(images[i]);
      std::copy(d.storage().begin(), d.storage().end(), out.storage().begin() + static_cast<long>(i * dim));
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }
  return out;
}

Tensor LgcnModel::forward_batch(const std::vector<const Tensor*>& images, bool cross_image, BatchTrace* trace) const {
  const std::size_t b = images.size(), c = fused_channels();
  if (b == 0) throw std::invalid_argument("forward_batch: empty batch");
  BatchTrace local;
  BatchTrace& t = trace ? *trace : local;
  t.images.assign(b, {});
  t.pooled = Tensor({b, kRegions, c});
  for (std::size_t i = 0; i < b; ++i) put_batch(t.pooled, i, forward_image(*images[i], &t.images[i]));

  t.cross_image = cross_image;
  if (cross_image) {
    t.correlate.assign(1, {});
    t.correlated = cross_image_correlate(t.pooled, head, &t.correlate[0]);
  } else {
    t.correlate.assign(b, {});
    t.correlated = Tensor(t.pooled.shape());
    for (std::size_t i = 0; i < b; ++i) {
      put_batch(t.correlated, i, cross_image_correlate(slice_batch(t.pooled, i), head, &t.correlate[i]));
    }
  }
  t.descriptors = finalize(t.correlated);
  return t.descriptors;
}

void LgcnModel::backward_batch(const BatchTrace& t, const Tensor& ddescriptors, bool backbone_grads) {
  const std::size_t b = t.images.size();
  const Tensor dcorr = finalize_backward(t.correlated, ddescriptors.reshaped({b, kRegions, fused_channels()}))
                           .reshaped(t.correlated.shape());
  Tensor dpooled(t.pooled.shape());
  if (t.cross_image) {
    dpooled = cross_image_correlate_backward(head, t.correlate[0], dcorr);
  } else {
    for (std::size_t i = 0; i < b; ++i) {
      put_batch(dpooled, i, cross_image_correlate_backward(head, t.correlate[i], slice_batch(dcorr, i)));
    }
  }
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor d = slice_batch(dpooled, i);
    backward_image(t.images[i], d.reshaped({kRegions, fused_channels()}), backbone_grads);
  }
}

}  // namespace lgcn
