#include "segmenter/encoder.hpp"

#include <cmath>

#include "segmenter/error.hpp"

namespace segmenter {
namespace {

template <typename T>
Tensor<T> param(Shape shape, T value = T(0)) {
  Tensor<T> t = Tensor<T>::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
void fill_truncated_normal(Tensor<T>& t, double std, Rng& rng) {
  for (T& v : t.mutable_data()) v = T(truncated_normal(rng, std));
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, const ForwardContext<T>& ctx) {
  if (ctx.mode != Mode::Train || rate <= 0.0) return x;
  std::vector<T> mask(x.numel());
  const T keep_scale = T(1.0 / (1.0 - rate));
  for (T& m : mask) m = bernoulli(*ctx.rng, rate) ? T(0) : keep_scale;
  return mul(x, Tensor<T>::from_data(x.shape(), std::move(mask)));
}

// Returns the factor applied to a residual branch; 0 means the branch is skipped.
template <typename T>
T branch_factor(const BlockSettings& s, const ForwardContext<T>& ctx) {
  if (ctx.mode != Mode::Train || s.drop_path <= 0.0) return T(1);
  const bool dropped = bernoulli(*ctx.rng, s.drop_path);
  if (ctx.drop_stats) {
    ++ctx.drop_stats->draws;
    if (dropped) ++ctx.drop_stats->dropped;
  }
  if (dropped) return T(0);
  return s.drop_path_scaling ? T(1.0 / (1.0 - s.drop_path)) : T(1);
}

}  // namespace

BlockSettings block_settings(const EncoderConfig& cfg) {
  return {cfg.heads, cfg.layer_norm_eps, cfg.dropout, cfg.stochastic_depth, cfg.drop_path_scaling};
}

template <typename T>
BlockParams<T> make_block(std::size_t dim, std::size_t hidden) {
  BlockParams<T> b;
  b.norm1_w = param<T>({dim}, T(1));
  b.norm1_b = param<T>({dim});
  b.q_w = param<T>({dim, dim});
  b.q_b = param<T>({dim});
  b.k_w = param<T>({dim, dim});
  b.k_b = param<T>({dim});
  b.v_w = param<T>({dim, dim});
  b.v_b = param<T>({dim});
  b.proj_w = param<T>({dim, dim});
  b.proj_b = param<T>({dim});
  b.norm2_w = param<T>({dim}, T(1));
  b.norm2_b = param<T>({dim});
  b.fc1_w = param<T>({hidden, dim});
  b.fc1_b = param<T>({hidden});
  b.fc2_w = param<T>({dim, hidden});
  b.fc2_b = param<T>({dim});
  return b;
}

template <typename T>
void init_block(BlockParams<T>& b, double std, Rng& rng) {
  for (Tensor<T>* w : {&b.q_w, &b.k_w, &b.v_w, &b.proj_w, &b.fc1_w, &b.fc2_w}) {
    fill_truncated_normal(*w, std, rng);
  }
}

template <typename T>
void append_block_params(BlockParams<T>& b, const std::string& prefix,
                         std::vector<NamedParam<T>>& out) {
  out.emplace_back(prefix + "norm1.weight", &b.norm1_w);
  out.emplace_back(prefix + "norm1.bias", &b.norm1_b);
  out.emplace_back(prefix + "attn.q.weight", &b.q_w);
  out.emplace_back(prefix + "attn.q.bias", &b.q_b);
  out.emplace_back(prefix + "attn.k.weight", &b.k_w);
  out.emplace_back(prefix + "attn.k.bias", &b.k_b);
  out.emplace_back(prefix + "attn.v.weight", &b.v_w);
  out.emplace_back(prefix + "attn.v.bias", &b.v_b);
  out.emplace_back(prefix + "attn.proj.weight", &b.proj_w);
  out.emplace_back(prefix + "attn.proj.bias", &b.proj_b);
  out.emplace_back(prefix + "norm2.weight", &b.norm2_w);
  out.emplace_back(prefix + "norm2.bias", &b.norm2_b);
  out.emplace_back(prefix + "mlp.fc1.weight", &b.fc1_w);
  out.emplace_back(prefix + "mlp.fc1.bias", &b.fc1_b);
  out.emplace_back(prefix + "mlp.fc2.weight", &b.fc2_w);
  out.emplace_back(prefix + "mlp.fc2.bias", &b.fc2_b);
}

template <typename T>
EncoderParams<T> make_encoder(const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.token_size;
  EncoderParams<T> p;
  p.patch_w = param<T>({d, cfg.patch_dim()});
  p.patch_b = param<T>({d});
  p.pos = param<T>({cfg.num_patches(), d});
  for (std::size_t i = 0; i < cfg.depth; ++i) p.blocks.push_back(make_block<T>(d, cfg.mlp_hidden));
  p.norm_w = param<T>({d}, T(1));
  p.norm_b = param<T>({d});
  return p;
}

template <typename T>
void init_encoder(EncoderParams<T>& p, const EncoderConfig& cfg, Rng& rng) {
  fill_truncated_normal(p.patch_w, cfg.init_std, rng);
  fill_truncated_normal(p.pos, cfg.init_std, rng);
  for (auto& b : p.blocks) init_block(b, cfg.init_std, rng);
}

template <typename T>
void append_encoder_params(EncoderParams<T>& p, std::vector<NamedParam<T>>& out) {
  out.emplace_back("encoder.patch_embed.weight", &p.patch_w);
  out.emplace_back("encoder.patch_embed.bias", &p.patch_b);
  out.emplace_back("encoder.pos_embed", &p.pos);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    append_block_params(p.blocks[i], "encoder.blocks." + std::to_string(i) + ".", out);
  }
  out.emplace_back("encoder.norm.weight", &p.norm_w);
  out.emplace_back("encoder.norm.bias", &p.norm_b);
}

std::size_t encoder_param_count(const EncoderConfig& cfg) {
  const std::size_t d = cfg.token_size, h = cfg.mlp_hidden;
  const std::size_t per_block = 4 * (d * d + d)  // q, k, v, proj
                                + (h * d + h) + (d * h + d)  // mlp
                                + 4 * d;  // two layer norms
  return d * cfg.patch_dim() + d + cfg.num_patches() * d + cfg.depth * per_block + 2 * d;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch) {
  if (image.rank() != 3) throw DimensionError("patchify: expected [H x W x C], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (patch == 0 || h % patch || w % patch) {
    throw ContractError("patchify: image " + shape_str(image.shape()) +
                        " is not divisible into patches of " + std::to_string(patch) + " px");
  }
  const std::size_t gh = h / patch, gw = w / patch, row = patch * patch * c;
  std::vector<std::size_t> index;
  index.reserve(image.numel());
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t ch = 0; ch < c; ++ch)
            index.push_back(((py * patch + y) * w + px * patch + x) * c + ch);
  return gather(image, std::move(index), {gh * gw, row});
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t h, std::size_t w, std::size_t c,
                     std::size_t patch) {
  if (patch == 0 || h % patch || w % patch) throw ContractError("unpatchify: indivisible size");
  const std::size_t gw = w / patch;
  if (patches.rank() != 2 || patches.dim(0) != (h / patch) * gw || patches.dim(1) != patch * patch * c) {
    throw DimensionError("unpatchify: " + shape_str(patches.shape()) + " does not tile " +
                         std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c));
  }
  std::vector<std::size_t> index(h * w * c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t p = (y / patch) * gw + x / patch;
        const std::size_t within = ((y % patch) * patch + x % patch) * c + ch;
        index[(y * w + x) * c + ch] = p * patch * patch * c + within;
      }
  return gather(patches, std::move(index), {h, w, c});
}

template <typename T>
Tensor<T> embed(const Tensor<T>& patches, const EncoderParams<T>& params) {
  if (patches.rank() != 2 || patches.dim(0) != params.pos.dim(0)) {
    throw DimensionError("embed: " + shape_str(patches.shape()) + " patches vs position table " +
                         shape_str(params.pos.shape()) + "; resample with interpolate_pos first");
  }
  return add(linear(patches, params.patch_w, params.patch_b), params.pos);
}

template <typename T>
Tensor<T> interpolate_pos(const Tensor<T>& pos, std::size_t old_h, std::size_t old_w,
                          std::size_t new_h, std::size_t new_w) {
  if (pos.rank() != 2 || pos.dim(0) != old_h * old_w) {
    throw DimensionError("interpolate_pos: table " + shape_str(pos.shape()) + " is not a " +
                         std::to_string(old_h) + "x" + std::to_string(old_w) + " grid");
  }
  const std::size_t d = pos.dim(1);
  const Tensor<T> grid = reshape(pos, {old_h, old_w, d});
  return reshape(bilinear_resize(grid, new_h, new_w), {new_h * new_w, d});
}

template <typename T>
Tensor<T> msa(const Tensor<T>& z, const BlockParams<T>& b, std::size_t heads, Tensor<T>* attention) {
  const std::size_t n = z.dim(0), d = z.dim(1);
  if (heads == 0 || d % heads) {
    throw DimensionError("msa: token size " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t hd = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(hd));
  const Tensor<T> q = linear(z, b.q_w, b.q_b);
  const Tensor<T> k = linear(z, b.k_w, b.k_b);
  const Tensor<T> v = linear(z, b.v_w, b.v_b);
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  std::vector<T> probs;
  if (attention) probs.reserve(heads * n * n);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<T> qh = slice(q, 1, h * hd, hd);
    const Tensor<T> kh = slice(k, 1, h * hd, hd);
    const Tensor<T> vh = slice(v, 1, h * hd, hd);
    const Tensor<T> a = softmax(scale(matmul_nt(qh, kh), inv_sqrt), 1);
    if (attention) probs.insert(probs.end(), a.data().begin(), a.data().end());
    outs.push_back(matmul(a, vh));
  }
  if (attention) *attention = Tensor<T>::from_data({heads, n, n}, std::move(probs));
  const Tensor<T> merged = heads == 1 ? outs[0] : concat(std::span<const Tensor<T>>(outs), 1);
  return linear(merged, b.proj_w, b.proj_b);
}

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& z, const BlockParams<T>& b, const BlockSettings& s,
                            const ForwardContext<T>& ctx, Tensor<T>* attention) {
  if (ctx.mode == Mode::Train && !ctx.rng) throw ContractError("train-mode forward needs an rng");
  const T eps = T(s.layer_norm_eps);
  Tensor<T> x = z;
  if (const T f = branch_factor(s, ctx); f != T(0)) {
    Tensor<T> y = dropout(msa(layer_norm(x, b.norm1_w, b.norm1_b, eps), b, s.heads, attention), s.dropout, ctx);
    if (f != T(1)) y = scale(y, f);
    x = add(x, y);
  }
  if (const T f = branch_factor(s, ctx); f != T(0)) {
    Tensor<T> h = gelu(linear(layer_norm(x, b.norm2_w, b.norm2_b, eps), b.fc1_w, b.fc1_b));
    h = dropout(h, s.dropout, ctx);
    Tensor<T> y = dropout(linear(h, b.fc2_w, b.fc2_b), s.dropout, ctx);
    if (f != T(1)) y = scale(y, f);
    x = add(x, y);
  }
  return x;
}

template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& z0, const EncoderParams<T>& p, const EncoderConfig& cfg,
                          const ForwardContext<T>& ctx) {
  if (ctx.mode == Mode::Train && !ctx.rng) throw ContractError("train-mode forward needs an rng");
  const BlockSettings s = block_settings(cfg);
  Tensor<T> z = z0;
  if (ctx.attention) ctx.attention->layers.clear();
  for (const auto& block : p.blocks) {
    Tensor<T> att;
    z = transformer_block(z, block, s, ctx, ctx.attention ? &att : nullptr);
    if (ctx.attention) ctx.attention->layers.push_back(att);
  }
  return layer_norm(z, p.norm_w, p.norm_b, T(cfg.layer_norm_eps));
}

#define SEGMENTER_INSTANTIATE_ENCODER(T)                                                        \
  template BlockParams<T> make_block<T>(std::size_t, std::size_t);                              \
  template void init_block(BlockParams<T>&, double, Rng&);                                      \
  template void append_block_params(BlockParams<T>&, const std::string&,                        \
                                    std::vector<NamedParam<T>>&);                               \
  template EncoderParams<T> make_encoder<T>(const EncoderConfig&);                              \
  template void init_encoder(EncoderParams<T>&, const EncoderConfig&, Rng&);                    \
  template void append_encoder_params(EncoderParams<T>&, std::vector<NamedParam<T>>&);          \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> unpatchify(const Tensor<T>&, std::size_t, std::size_t, std::size_t,        \
                                std::size_t);                                                   \
  template Tensor<T> embed(const Tensor<T>&, const EncoderParams<T>&);                          \
  template Tensor<T> interpolate_pos(const Tensor<T>&, std::size_t, std::size_t, std::size_t,   \
                                     std::size_t);                                              \
  template Tensor<T> msa(const Tensor<T>&, const BlockParams<T>&, std::size_t, Tensor<T>*);     \
  template Tensor<T> transformer_block(const Tensor<T>&, const BlockParams<T>&,                 \
                                       const BlockSettings&, const ForwardContext<T>&,          \
                                       Tensor<T>*);                                             \
  template Tensor<T> encoder_forward(const Tensor<T>&, const EncoderParams<T>&,                 \
                                     const EncoderConfig&, const ForwardContext<T>&);

SEGMENTER_INSTANTIATE_ENCODER(float)
SEGMENTER_INSTANTIATE_ENCODER(double)

}  // namespace segmenter
