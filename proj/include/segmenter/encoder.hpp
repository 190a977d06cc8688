#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "segmenter/config.hpp"
#include "segmenter/rng.hpp"
#include "segmenter/tensor.hpp"

namespace segmenter {

enum class Mode { Train, Eval };

// Counts residual-branch keep/drop decisions taken in train mode.
struct DropPathStats {
  std::size_t draws = 0;
  std::size_t dropped = 0;
};

// Attention probabilities recorded per layer, each [heads x N x N].
template <typename T>
struct AttentionCapture {
  std::vector<Tensor<T>> layers;
};

template <typename T>
struct ForwardContext {
  Mode mode = Mode::Eval;
  Rng* rng = nullptr;  // required in train mode
  DropPathStats* drop_stats = nullptr;
  AttentionCapture<T>* attention = nullptr;
};

// Pre-norm transformer layer: MSA and MLP residual branches.
template <typename T>
struct BlockParams {
  Tensor<T> norm1_w, norm1_b;
  Tensor<T> q_w, q_b, k_w, k_b, v_w, v_b;
  Tensor<T> proj_w, proj_b;
  Tensor<T> norm2_w, norm2_b;
  Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;
};

struct BlockSettings {
  std::size_t heads = 1;
  double layer_norm_eps = 1e-6;
  double dropout = 0.0;
  double drop_path = 0.0;
  bool drop_path_scaling = true;
};

BlockSettings block_settings(const EncoderConfig& cfg);

template <typename T>
struct EncoderParams {
  Tensor<T> patch_w;  // [D x P*P*C]
  Tensor<T> patch_b;  // [D]
  Tensor<T> pos;      // [N x D]
  std::vector<BlockParams<T>> blocks;
  Tensor<T> norm_w, norm_b;
};

template <typename T>
using NamedParam = std::pair<std::string, Tensor<T>*>;

// Zero weights, unit layer-norm gains. All tensors require gradients.
template <typename T>
BlockParams<T> make_block(std::size_t dim, std::size_t mlp_hidden);
template <typename T>
void init_block(BlockParams<T>& block, double std, Rng& rng);
template <typename T>
void append_block_params(BlockParams<T>& block, const std::string& prefix,
                         std::vector<NamedParam<T>>& out);

template <typename T>
EncoderParams<T> make_encoder(const EncoderConfig& cfg);
// Truncated normal (std cfg.init_std, cut at 2 std) for weights, position
// embeddings included; zero biases; unit layer-norm gains.
template <typename T>
void init_encoder(EncoderParams<T>& params, const EncoderConfig& cfg, Rng& rng);
template <typename T>
void append_encoder_params(EncoderParams<T>& params, std::vector<NamedParam<T>>& out);

// Closed-form parameter count of the encoder.
std::size_t encoder_param_count(const EncoderConfig& cfg);

// [H x W x C] -> [N x P*P*C]; patches in row-major grid order, each flattened
// as (y, x, channel). H and W must be multiples of P.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch);
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t height, std::size_t width,
                     std::size_t channels, std::size_t patch);

// z0 = patches * E^T + b + pos
template <typename T>
Tensor<T> embed(const Tensor<T>& patches, const EncoderParams<T>& params);

// Resamples a [old_h*old_w x D] position table to [new_h*new_w x D].
template <typename T>
Tensor<T> interpolate_pos(const Tensor<T>& pos, std::size_t old_h, std::size_t old_w,
                          std::size_t new_h, std::size_t new_w);

// Multi-head self-attention including the output projection. When `attention`
// is non-null the [heads x N x N] probabilities are stored there.
template <typename T>
Tensor<T> msa(const Tensor<T>& z, const BlockParams<T>& block, std::size_t heads,
              Tensor<T>* attention = nullptr);

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& z, const BlockParams<T>& block,
                            const BlockSettings& settings, const ForwardContext<T>& ctx,
                            Tensor<T>* attention = nullptr);

// Runs every block then the final layer norm: z_L, [N x D].
template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& z0, const EncoderParams<T>& params,
                          const EncoderConfig& cfg, const ForwardContext<T>& ctx);

}  // namespace segmenter
