#pragma once

#include <cstddef>
#include <vector>

#include "segmenter/config.hpp"
#include "segmenter/encoder.hpp"

namespace segmenter {

// Point-wise linear head: [N x D] -> [N x K].
template <typename T>
struct LinearDecoderParams {
  Tensor<T> w;  // [K x D]
  Tensor<T> b;  // [K]
};

// Mask transformer: K learnable class embeddings processed jointly with the
// patch encodings by M transformer layers; masks are scalar products between
// L2-normalized patch outputs and the class outputs.
template <typename T>
struct MaskDecoderParams {
  Tensor<T> cls;  // [K x D]; row k belongs to class k for the model's lifetime
  std::vector<BlockParams<T>> blocks;
  Tensor<T> norm_w, norm_b;  // defined only with DecoderConfig::final_norm
};

template <typename T>
struct DecoderParams {
  DecoderKind kind = DecoderKind::Mask;
  LinearDecoderParams<T> linear;
  MaskDecoderParams<T> mask;
};

template <typename T>
DecoderParams<T> make_decoder(const ModelConfig& cfg);
template <typename T>
void init_decoder(DecoderParams<T>& params, const ModelConfig& cfg, Rng& rng);
template <typename T>
void append_decoder_params(DecoderParams<T>& params, std::vector<NamedParam<T>>& out);
std::size_t decoder_param_count(const ModelConfig& cfg);

template <typename T>
Tensor<T> linear_decode(const Tensor<T>& z, const LinearDecoderParams<T>& params);

// Logits only; no softmax, no temperature.
template <typename T>
Tensor<T> mask_decode(const Tensor<T>& z, const MaskDecoderParams<T>& params, const ModelConfig& cfg,
                      const ForwardContext<T>& ctx);

template <typename T>
Tensor<T> decode(const Tensor<T>& z, const DecoderParams<T>& params, const ModelConfig& cfg,
                 const ForwardContext<T>& ctx);

}  // namespace segmenter
