#pragma once

#include <string>
#include <utility>
#include <vector>

#include "segmenter/config.hpp"
#include "segmenter/decoder.hpp"
#include "segmenter/encoder.hpp"
#include "segmenter/image.hpp"

namespace segmenter {

// Encoder + decoder. Parameters are named uniquely ("encoder.blocks.3.attn.q.weight")
// for serialization. Copying is explicit via clone()/convert().
template <typename T>
class Segmenter {
 public:
  // Structure only: zero weights, unit layer-norm gains.
  explicit Segmenter(ModelConfig cfg);
  // Random initialization from `rng`.
  Segmenter(ModelConfig cfg, Rng& rng);

  Segmenter(Segmenter&&) noexcept = default;
  Segmenter& operator=(Segmenter&&) noexcept = default;
  Segmenter(const Segmenter&) = delete;
  Segmenter& operator=(const Segmenter&) = delete;

  Segmenter clone() const;

  const ModelConfig& config() const { return cfg_; }
  EncoderParams<T>& encoder() { return encoder_; }
  const EncoderParams<T>& encoder() const { return encoder_; }
  DecoderParams<T>& decoder() { return decoder_; }
  const DecoderParams<T>& decoder() const { return decoder_; }

  // Pointers stay valid until the model is moved or resized.
  std::vector<NamedParam<T>> named_parameters();
  std::vector<std::pair<std::string, const Tensor<T>*>> named_parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  // Decoder output reshaped to the patch grid: [H/P x W/P x K].
  Tensor<T> patch_logits(const Tensor<T>& image, const ForwardContext<T>& ctx = {}) const;
  // Logits bilinearly upsampled to [H x W x K]. H x W must equal the configured size.
  Tensor<T> forward(const Tensor<T>& image, const ForwardContext<T>& ctx = {}) const;
  // Eval-mode forward followed by per-pixel argmax.
  LabelMap predict(const Tensor<T>& image) const;

  // Re-targets the model to a new input size, resampling position embeddings.
  void resize_input(std::size_t height, std::size_t width);

 private:
  ModelConfig cfg_;
  EncoderParams<T> encoder_;
  DecoderParams<T> decoder_;
};

// Copies parameter values into a model of another precision.
template <typename To, typename From>
Segmenter<To> convert(const Segmenter<From>& model);

// Mean pixel-wise cross-entropy of [H x W x K] logits against a label map;
// ignore pixels excluded, 0 (flagged) when every pixel is ignored.
template <typename T>
CrossEntropy<T> segmentation_loss(const Tensor<T>& logits, const LabelMap& labels);

// Softmax over classes of [H x W x K] logits.
template <typename T>
Tensor<T> class_probabilities(const Tensor<T>& logits);

std::size_t model_param_count(const ModelConfig& cfg);

}  // namespace segmenter
