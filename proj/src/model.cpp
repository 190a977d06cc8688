#include "segmenter/model.hpp"

#include <map>

#include "segmenter/error.hpp"

namespace segmenter {

template <typename T>
Segmenter<T>::Segmenter(ModelConfig cfg)
    : cfg_(std::move(cfg)), encoder_(make_encoder<T>(cfg_.encoder)), decoder_(make_decoder<T>(cfg_)) {
  cfg_.validate();
}

template <typename T>
Segmenter<T>::Segmenter(ModelConfig cfg, Rng& rng) : Segmenter(std::move(cfg)) {
  init_encoder(encoder_, cfg_.encoder, rng);
  init_decoder(decoder_, cfg_, rng);
}

template <typename T>
Segmenter<T> Segmenter<T>::clone() const {
  return convert<T>(*this);
}

template <typename T>
std::vector<NamedParam<T>> Segmenter<T>::named_parameters() {
  std::vector<NamedParam<T>> out;
  append_encoder_params(encoder_, out);
  append_decoder_params(decoder_, out);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Segmenter<T>::named_parameters() const {
  auto params = const_cast<Segmenter*>(this)->named_parameters();
  return {params.begin(), params.end()};
}

template <typename T>
std::size_t Segmenter<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t->numel();
  return n;
}

template <typename T>
void Segmenter<T>::zero_grad() {
  for (auto& [name, t] : named_parameters()) t->zero_grad();
}

template <typename T>
Tensor<T> Segmenter<T>::patch_logits(const Tensor<T>& image, const ForwardContext<T>& ctx) const {
  const EncoderConfig& e = cfg_.encoder;
  if (image.rank() != 3 || image.dim(0) != e.image_h || image.dim(1) != e.image_w ||
      image.dim(2) != e.channels) {
    throw ContractError("forward: image " + shape_str(image.shape()) + " does not match configured input " +
                        std::to_string(e.image_h) + "x" + std::to_string(e.image_w) + "x" +
                        std::to_string(e.channels));
  }
  const Tensor<T> z0 = embed(patchify(image, e.patch_size), encoder_);
  const Tensor<T> z = encoder_forward(z0, encoder_, e, ctx);
  const Tensor<T> logits = decode(z, decoder_, cfg_, ctx);
  return reshape(logits, {e.grid_h(), e.grid_w(), cfg_.classes});
}

template <typename T>
Tensor<T> Segmenter<T>::forward(const Tensor<T>& image, const ForwardContext<T>& ctx) const {
  return bilinear_upsample(patch_logits(image, ctx), cfg_.encoder.image_h, cfg_.encoder.image_w);
}

template <typename T>
LabelMap Segmenter<T>::predict(const Tensor<T>& image) const {
  NoGradGuard guard;
  return argmax_labels(forward(image));
}

template <typename T>
void Segmenter<T>::resize_input(std::size_t height, std::size_t width) {
  EncoderConfig next = cfg_.encoder;
  next.image_h = height;
  next.image_w = width;
  next.validate();
  Tensor<T> pos;
  {
    NoGradGuard guard;
    pos = interpolate_pos(encoder_.pos, cfg_.encoder.grid_h(), cfg_.encoder.grid_w(), next.grid_h(),
                          next.grid_w());
  }
  encoder_.pos = pos.detach().set_requires_grad(true);
  cfg_.encoder = next;
}

template <typename To, typename From>
Segmenter<To> convert(const Segmenter<From>& model) {
  Segmenter<To> out(model.config());
  auto dst = out.named_parameters();
  const auto src = model.named_parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto values = dst[i].second->mutable_data();
    const auto from = src[i].second->data();
    for (std::size_t j = 0; j < values.size(); ++j) values[j] = To(from[j]);
  }
  return out;
}

template <typename T>
CrossEntropy<T> segmentation_loss(const Tensor<T>& logits, const LabelMap& labels) {
  if (logits.rank() != 3 || logits.dim(0) != labels.height || logits.dim(1) != labels.width) {
    throw DimensionError("loss: logits " + shape_str(logits.shape()) + " vs labels " +
                         std::to_string(labels.height) + "x" + std::to_string(labels.width));
  }
  const Tensor<T> flat = reshape(logits, {labels.height * labels.width, logits.dim(2)});
  return cross_entropy(flat, std::span<const std::uint8_t>(labels.labels), kIgnoreLabel);
}

template <typename T>
Tensor<T> class_probabilities(const Tensor<T>& logits) {
  return softmax(logits, logits.rank() - 1);
}

std::size_t model_param_count(const ModelConfig& cfg) {
  return encoder_param_count(cfg.encoder) + decoder_param_count(cfg);
}

template class Segmenter<float>;
template class Segmenter<double>;
template Segmenter<float> convert<float>(const Segmenter<float>&);
template Segmenter<double> convert<double>(const Segmenter<double>&);
template Segmenter<double> convert<double>(const Segmenter<float>&);
template Segmenter<float> convert<float>(const Segmenter<double>&);
template CrossEntropy<float> segmentation_loss(const Tensor<float>&, const LabelMap&);
template CrossEntropy<double> segmentation_loss(const Tensor<double>&, const LabelMap&);
template Tensor<float> class_probabilities(const Tensor<float>&);
template Tensor<double> class_probabilities(const Tensor<double>&);

}  // namespace segmenter
