#include "segmenter/decoder.hpp"

#include "segmenter/error.hpp"

namespace segmenter {

template <typename T>
DecoderParams<T> make_decoder(const ModelConfig& cfg) {
  const std::size_t d = cfg.encoder.token_size, k = cfg.classes;
  DecoderParams<T> p;
  p.kind = cfg.decoder.kind;
  if (p.kind == DecoderKind::Linear) {
    p.linear.w = Tensor<T>::zeros({k, d}).set_requires_grad(true);
    p.linear.b = Tensor<T>::zeros({k}).set_requires_grad(true);
    return p;
  }
  p.mask.cls = Tensor<T>::zeros({k, d}).set_requires_grad(true);
  for (std::size_t i = 0; i < cfg.decoder.layers; ++i) {
    p.mask.blocks.push_back(make_block<T>(d, cfg.encoder.mlp_hidden));
  }
  if (cfg.decoder.final_norm) {
    p.mask.norm_w = Tensor<T>::full({d}, T(1)).set_requires_grad(true);
    p.mask.norm_b = Tensor<T>::zeros({d}).set_requires_grad(true);
  }
  return p;
}

template <typename T>
void init_decoder(DecoderParams<T>& p, const ModelConfig& cfg, Rng& rng) {
  const double std = cfg.encoder.init_std;
  if (p.kind == DecoderKind::Linear) {
    for (T& v : p.linear.w.mutable_data()) v = T(truncated_normal(rng, std));
    return;
  }
  for (T& v : p.mask.cls.mutable_data()) v = T(truncated_normal(rng, std));
  for (auto& b : p.mask.blocks) init_block(b, std, rng);
}

template <typename T>
void append_decoder_params(DecoderParams<T>& p, std::vector<NamedParam<T>>& out) {
  if (p.kind == DecoderKind::Linear) {
    out.emplace_back("decoder.head.weight", &p.linear.w);
    out.emplace_back("decoder.head.bias", &p.linear.b);
    return;
  }
  out.emplace_back("decoder.cls_emb", &p.mask.cls);
  for (std::size_t i = 0; i < p.mask.blocks.size(); ++i) {
    append_block_params(p.mask.blocks[i], "decoder.blocks." + std::to_string(i) + ".", out);
  }
  if (p.mask.norm_w.defined()) {
    out.emplace_back("decoder.norm.weight", &p.mask.norm_w);
    out.emplace_back("decoder.norm.bias", &p.mask.norm_b);
  }
}

std::size_t decoder_param_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.encoder.token_size, k = cfg.classes, h = cfg.encoder.mlp_hidden;
  if (cfg.decoder.kind == DecoderKind::Linear) return k * d + k;
  const std::size_t per_block = 4 * (d * d + d) + (h * d + h) + (d * h + d) + 4 * d;
  return k * d + cfg.decoder.layers * per_block + (cfg.decoder.final_norm ? 2 * d : 0);
}

template <typename T>
Tensor<T> linear_decode(const Tensor<T>& z, const LinearDecoderParams<T>& p) {
  return linear(z, p.w, p.b);
}

template <typename T>
Tensor<T> mask_decode(const Tensor<T>& z, const MaskDecoderParams<T>& p, const ModelConfig& cfg,
                      const ForwardContext<T>& ctx) {
  if (z.rank() != 2 || z.dim(1) != p.cls.dim(1)) {
    throw DimensionError("mask_decode: encodings " + shape_str(z.shape()) +
                         " do not match class embeddings " + shape_str(p.cls.shape()));
  }
  const std::size_t n = z.dim(0), k = p.cls.dim(0);
  const Tensor<T> parts[] = {z, p.cls};
  Tensor<T> seq = concat(std::span<const Tensor<T>>(parts), 0);
  ForwardContext<T> inner = ctx;
  inner.attention = nullptr;
  const BlockSettings s = block_settings(cfg.encoder);
  for (const auto& block : p.blocks) seq = transformer_block(seq, block, s, inner);
  if (p.norm_w.defined()) seq = layer_norm(seq, p.norm_w, p.norm_b, T(cfg.encoder.layer_norm_eps));
  const Tensor<T> patches = l2_normalize(slice(seq, 0, 0, n), 1);
  Tensor<T> classes = slice(seq, 0, n, k);
  if (cfg.decoder.normalize_classes) classes = l2_normalize(classes, 1);
  return matmul_nt(patches, classes);
}

template <typename T>
Tensor<T> decode(const Tensor<T>& z, const DecoderParams<T>& p, const ModelConfig& cfg,
                 const ForwardContext<T>& ctx) {
  switch (p.kind) {
    case DecoderKind::Linear:
      return linear_decode(z, p.linear);
    case DecoderKind::Mask:
      return mask_decode(z, p.mask, cfg, ctx);
  }
  throw ConfigError("unknown decoder kind");
}

#define SEGMENTER_INSTANTIATE_DECODER(T)                                                          \
  template DecoderParams<T> make_decoder<T>(const ModelConfig&);                                  \
  template void init_decoder(DecoderParams<T>&, const ModelConfig&, Rng&);                        \
  template void append_decoder_params(DecoderParams<T>&, std::vector<NamedParam<T>>&);            \
  template Tensor<T> linear_decode(const Tensor<T>&, const LinearDecoderParams<T>&);              \
  template Tensor<T> mask_decode(const Tensor<T>&, const MaskDecoderParams<T>&,                   \
                                 const ModelConfig&, const ForwardContext<T>&);                   \
  template Tensor<T> decode(const Tensor<T>&, const DecoderParams<T>&, const ModelConfig&,        \
                            const ForwardContext<T>&);

SEGMENTER_INSTANTIATE_DECODER(float)
SEGMENTER_INSTANTIATE_DECODER(double)

}  // namespace segmenter
