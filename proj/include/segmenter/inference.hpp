#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "segmenter/image.hpp"
#include "segmenter/metrics.hpp"
#include "segmenter/model.hpp"

namespace segmenter {

// Maps a normalized [window_h x window_w x 3] crop to [window_h x window_w x K] logits.
template <typename T>
using WindowForward = std::function<Tensor<T>(const Tensor<T>& window)>;

struct WindowOptions {
  std::size_t window_h = 0;
  std::size_t window_w = 0;
  std::size_t stride_h = 0;  // 0 means window / 2
  std::size_t stride_w = 0;
};

// Default: the model's configured input size with half-window stride.
WindowOptions window_options(const ModelConfig& cfg);

// Start offsets of windows along one axis: stride steps, the last window
// clamped to the border. A single 0 when extent <= window.
std::vector<std::size_t> window_starts(std::size_t extent, std::size_t window, std::size_t stride);

// Tiles a normalized [H x W x 3] image (any size) with windows, sums the window
// logits and divides by per-pixel coverage. Images smaller than the window are
// zero-padded in normalized space (the dataset mean) and cropped back.
// `coverage`, when given, receives the per-pixel window count.
template <typename T>
Tensor<T> sliding_window_logits(const WindowForward<T>& forward, const Tensor<T>& image, std::size_t classes,
                                const WindowOptions& opts, std::vector<std::size_t>* coverage = nullptr);
template <typename T>
Tensor<T> sliding_window_logits(const Segmenter<T>& model, const Tensor<T>& image);

struct MultiscaleOptions {
  std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
  bool flip = true;
  // Across scales and flips: average softmax probabilities (default) or raw logits.
  bool average_probabilities = true;
};

// Averaged [H x W x K] scores over every scale, plus the un-flipped result of
// the mirrored image when flip is set.
template <typename T>
Tensor<T> multiscale_scores(const WindowForward<T>& forward, const Tensor<T>& image, std::size_t classes,
                            const WindowOptions& window, const MultiscaleOptions& opts);
template <typename T>
LabelMap multiscale_predict(const Segmenter<T>& model, const Tensor<T>& image, const MultiscaleOptions& opts = {});

// Single-scale sliding-window prediction.
template <typename T>
LabelMap sliding_window_predict(const Segmenter<T>& model, const Tensor<T>& image);

template <typename T>
WindowForward<T> eval_forward(const Segmenter<T>& model);

struct EvalOptions {
  bool multiscale = false;
  MultiscaleOptions multiscale_options;
  bool size_bands = false;
  SizeBands bands;
  std::size_t threads = 1;  // 0 means hardware concurrency
};

struct EvalReport {
  ConfusionMatrix confusion;
  std::optional<BandConfusion> bands;
};

// Predicts every sample (normalized with the model's mean/std) and
// accumulates confusion matrices; workers own their matrices and are merged
// at the end.
EvalReport evaluate(const Segmenter<float>& model, std::span<const Sample> samples, const EvalOptions& opts = {});

}  // namespace segmenter
