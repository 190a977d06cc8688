#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "segmenter/tensor.hpp"

namespace segmenter {

inline constexpr std::uint8_t kIgnoreLabel = 255;

// 8-bit interleaved RGB.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

// Per-pixel class ids; kIgnoreLabel marks pixels excluded from loss and metrics.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}
  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

struct Sample {
  Image image;
  LabelMap labels;
};

// (pixel - mean) / std per channel, as an [H x W x 3] tensor.
template <typename T>
Tensor<T> normalize_image(const Image& image, const std::array<double, 3>& mean,
                          const std::array<double, 3>& std);

// Per-pixel argmax over the last axis of [H x W x K]; ties go to the lowest id.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& scores);

LabelMap flip_labels(const LabelMap& labels);

}  // namespace segmenter
