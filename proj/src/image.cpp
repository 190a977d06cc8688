#include "segmenter/image.hpp"

#include "segmenter/error.hpp"

namespace segmenter {

template <typename T>
Tensor<T> normalize_image(const Image& image, const std::array<double, 3>& mean,
                          const std::array<double, 3>& std) {
  std::vector<T> out(image.rgb.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = i % 3;
    out[i] = T((double(image.rgb[i]) - mean[c]) / std[c]);
  }
  return Tensor<T>::from_data({image.height, image.width, 3}, std::move(out));
}

template <typename T>
LabelMap argmax_labels(const Tensor<T>& scores) {
  if (scores.rank() != 3) throw DimensionError("argmax_labels: expected [H x W x K], got " + shape_str(scores.shape()));
  const std::size_t h = scores.dim(0), w = scores.dim(1), k = scores.dim(2);
  if (k == 0 || k > 255) throw DimensionError("argmax_labels: class count must lie in [1, 255]");
  LabelMap out(h, w);
  const T* s = scores.data().data();
  for (std::size_t p = 0; p < h * w; ++p) {
    const T* row = s + p * k;
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out.labels[p] = std::uint8_t(best);
  }
  return out;
}

LabelMap flip_labels(const LabelMap& labels) {
  LabelMap out(labels.height, labels.width);
  for (std::size_t y = 0; y < labels.height; ++y)
    for (std::size_t x = 0; x < labels.width; ++x) out.at(y, labels.width - 1 - x) = labels.at(y, x);
  return out;
}

template Tensor<float> normalize_image<float>(const Image&, const std::array<double, 3>&,
                                              const std::array<double, 3>&);
template Tensor<double> normalize_image<double>(const Image&, const std::array<double, 3>&,
                                                const std::array<double, 3>&);
template LabelMap argmax_labels(const Tensor<float>&);
template LabelMap argmax_labels(const Tensor<double>&);

}  // namespace segmenter
