#include "lgcn/vit.hpp"

#include <cmath>

namespace lgcn {

namespace {

Tensor ones(std::size_t n) { return Tensor({n}, 1.0); }

Tensor patch_matrix(const Tensor& image, const ModelConfig& cfg) {
  const std::size_t ps = cfg.patch_size, g = cfg.grid, w = cfg.image_size;
  Tensor patches({g * g, ps * ps * 3});
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      double* row = patches.ptr() + (gy * g + gx) * ps * ps * 3;
      for (std::size_t py = 0; py < ps; ++py) {
        const double* src = image.ptr() + ((gy * ps + py) * w + gx * ps) * 3;
        std::copy(src, src + ps * 3, row + py * ps * 3);
      }
    }
  }
  return patches;
}

}  // namespace

VitBlock VitBlock::init(const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.embed_dim;
  VitBlock b;
  b.ln1_g = Param(ones(d));
  b.ln1_b = Param(Tensor({d}));
  b.attn = Mhsa::init(d, cfg.heads, rng);
  b.ln2_g = Param(ones(d));
  b.ln2_b = Param(Tensor({d}));
  b.fc1_w = Param(randn({d, 4 * d}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
  b.fc1_b = Param(Tensor({4 * d}));
  b.fc2_w = Param(randn({4 * d, d}, 1.0 / std::sqrt(static_cast<double>(4 * d)), rng));
  b.fc2_b = Param(Tensor({d}));
  return b;
}

std::size_t VitBlock::parameter_count() const {
  std::size_t n = 0;
  const_cast<VitBlock*>(this)->visit("", [&](const std::string&, Param& p) { n += p.value.size(); });
  return n;
}

void VitBlock::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + "ln1_g", ln1_g);
  f(prefix + "ln1_b", ln1_b);
  attn.visit(prefix + "attn.", f);
  f(prefix + "ln2_g", ln2_g);
  f(prefix + "ln2_b", ln2_b);
  f(prefix + "fc1_w", fc1_w);
  f(prefix + "fc1_b", fc1_b);
  f(prefix + "fc2_w", fc2_w);
  f(prefix + "fc2_b", fc2_b);
}

VitParams VitParams::init(const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.embed_dim, in = cfg.patch_size * cfg.patch_size * 3;
  VitParams p;
  p.patch_w = Param(randn({in, d}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  p.patch_b = Param(Tensor({d}));
  p.cls = Param(randn({d}, 0.02, rng));
  p.pos = Param(randn({cfg.tokens(), d}, 0.02, rng));
  p.blocks.reserve(cfg.depth);
  for (std::size_t i = 0; i < cfg.depth; ++i) p.blocks.push_back(VitBlock::init(cfg, rng));
  return p;
}

void VitParams::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + "patch_w", patch_w);
  f(prefix + "patch_b", patch_b);
  f(prefix + "cls", cls);
  f(prefix + "pos", pos);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + "block" + std::to_string(i) + ".", f);
}

Tensor patch_embed(const Tensor& image, const VitParams& p, const ModelConfig& cfg) {
  expect_shape(image, {cfg.image_size, cfg.image_size, 3}, "patch_embed image");
  const std::size_t d = cfg.embed_dim, n = cfg.tokens();
  const Tensor proj = ops::linear(patch_matrix(image, cfg), p.patch_w.value, &p.patch_b.value);
  Tensor tokens = p.pos.value;
  for (std::size_t j = 0; j < d; ++j) tokens[j] += p.cls.value[j];
  for (std::size_t i = d; i < n * d; ++i) tokens[i] += proj[i - d];
  return tokens;
}

void patch_embed_backward(const Tensor& image, VitParams& p, const ModelConfig& cfg, const Tensor& dtokens) {
  const std::size_t d = cfg.embed_dim;
  p.pos.grad.axpy(1.0, dtokens);
  for (std::size_t j = 0; j < d; ++j) p.cls.grad[j] += dtokens[j];
  const std::size_t g2 = cfg.grid * cfg.grid;
  Tensor dproj({g2, d}, std::vector<double>(dtokens.storage().begin() + static_cast<long>(d), dtokens.storage().end()));
  ops::linear_backward(patch_matrix(image, cfg), p.patch_w.value, dproj, &p.patch_w.grad, &p.patch_b.grad, false);
}

Tensor tokens_to_map(const Tensor& tokens, std::size_t grid) {
  expect_rank(tokens, 2, "tokens_to_map");
  if (tokens.dim(0) != grid * grid + 1) {
    throw ShapeError("tokens_to_map: token axis has " + std::to_string(tokens.dim(0)) + " rows, expected " +
                     std::to_string(grid * grid + 1));
  }
  const std::size_t d = tokens.dim(1);
  return Tensor({grid, grid, d}, std::vector<double>(tokens.storage().begin() + static_cast<long>(d),
                                                     tokens.storage().end()));
}

Tensor map_to_tokens(const Tensor& map, const Tensor& cls_row) {
  expect_rank(map, 3, "map_to_tokens");
  const std::size_t d = map.dim(2);
  expect_shape(cls_row, {d}, "map_to_tokens class row");
  std::vector<double> data(cls_row.storage());
  data.insert(data.end(), map.storage().begin(), map.storage().end());
  return Tensor({map.dim(0) * map.dim(1) + 1, d}, std::move(data));
}

Tensor vit_block_forward(const VitBlock& b, const FsaParams* adapter, const Tensor& x, std::size_t grid,
                         BlockCache* cache) {
  BlockCache local;
  BlockCache& c = cache ? *cache : local;
  const Tensor h1 = ops::layer_norm(x, b.ln1_g.value, b.ln1_b.value, &c.ln1);
  Tensor x_mid = ops::add(x, mhsa_forward(b.attn, h1, &c.attn));
  Tensor u = ops::layer_norm(x_mid, b.ln2_g.value, b.ln2_b.value, &c.ln2);
  Tensor fc1_out = ops::linear(u, b.fc1_w.value, &b.fc1_b.value);
  Tensor gelu_out = ops::gelu(fc1_out);
  Tensor out = ops::add(x_mid, ops::linear(gelu_out, b.fc2_w.value, &b.fc2_b.value));
  c.has_adapter = adapter != nullptr;
  if (adapter) out.axpy(1.0, fsa_forward(*adapter, u, grid, &c.fsa));
  if (cache) {
    c.x_in = x;
    c.x_mid = std::move(x_mid);
    c.u = std::move(u);
    c.fc1_out = std::move(fc1_out);
    c.gelu_out = std::move(gelu_out);
  }
  return out;
}

Tensor vit_block_backward(VitBlock& b, FsaParams* adapter, const BlockCache& c, const Tensor& dy,
                          bool backbone_grads) {
  const bool g = backbone_grads;
  const Tensor dgelu = ops::linear_backward(c.gelu_out, b.fc2_w.value, dy, g ? &b.fc2_w.grad : nullptr,
                                            g ? &b.fc2_b.grad : nullptr);
  const Tensor dfc1 = ops::gelu_backward(c.fc1_out, dgelu);
  Tensor du = ops::linear_backward(c.u, b.fc1_w.value, dfc1, g ? &b.fc1_w.grad : nullptr, g ? &b.fc1_b.grad : nullptr);
  if (c.has_adapter && adapter) du.axpy(1.0, fsa_backward(*adapter, c.fsa, dy, true));

  Tensor dx_mid = dy;
  dx_mid.axpy(1.0, ops::layer_norm_backward(c.ln2, b.ln2_g.value, du, g ? &b.ln2_g.grad : nullptr,
                                            g ? &b.ln2_b.grad : nullptr));
  const Tensor dh1 = mhsa_backward(b.attn, c.attn, dx_mid, g);
  Tensor dx = dx_mid;
  dx.axpy(1.0, ops::layer_norm_backward(c.ln1, b.ln1_g.value, dh1, g ? &b.ln1_g.grad : nullptr,
                                        g ? &b.ln1_b.grad : nullptr));
  return dx;
}

Tensor vit_forward(const Tensor& image, const VitParams& p, const std::vector<FsaParams>* adapters,
                   const ModelConfig& cfg, VitCache* cache) {
  const bool use_adapters = adapters && !adapters->empty();
  if (use_adapters && adapters->size() != p.blocks.size()) {
    throw std::invalid_argument("vit_forward: " + std::to_string(adapters->size()) + " adapters for " +
                                std::to_string(p.blocks.size()) + " blocks");
  }
  Tensor x = patch_embed(image, p, cfg);
  if (cache) {
    cache->image = image;
    cache->blocks.assign(p.blocks.size(), {});
  }
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const FsaParams* adapter = use_adapters ? &(*adapters)[i] : nullptr;
    x = vit_block_forward(p.blocks[i], adapter, x, cfg.grid, cache ? &cache->blocks[i] : nullptr);
  }
  return tokens_to_map(x, cfg.grid);
}

void vit_backward(VitParams& p, std::vector<FsaParams>* adapters, const ModelConfig& cfg, const VitCache& cache,
                  const Tensor& dmap, bool backbone_grads) {
  const bool use_adapters = adapters && !adapters->empty();
  if (!backbone_grads && !use_adapters) return;  // nothing trainable upstream
  Tensor dx = map_to_tokens(dmap, Tensor({cfg.embed_dim}));
  for (std::size_t i = p.blocks.size(); i-- > 0;) {
    dx = vit_block_backward(p.blocks[i], use_adapters ? &(*adapters)[i] : nullptr, cache.blocks[i], dx,
                            backbone_grads);
  }
  if (backbone_grads) patch_embed_backward(cache.image, p, cfg, dx);
}

}  // namespace lgcn
