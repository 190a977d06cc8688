#include "segmenter/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "segmenter/error.hpp"

namespace segmenter {

WindowOptions window_options(const ModelConfig& cfg) {
  return {cfg.encoder.image_h, cfg.encoder.image_w, 0, 0};
}

std::vector<std::size_t> window_starts(std::size_t extent, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw ContractError("sliding window: window and stride must be positive");
  if (stride > window) throw ContractError("sliding window: stride exceeds window");
  if (extent <= window) return {0};
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s + window < extent; s += stride) out.push_back(s);
  out.push_back(extent - window);
  return out;
}

template <typename T>
Tensor<T> sliding_window_logits(const WindowForward<T>& forward, const Tensor<T>& image, std::size_t classes,
                                const WindowOptions& opts, std::vector<std::size_t>* coverage) {
  NoGradGuard guard;
  if (image.rank() != 3) throw DimensionError("sliding window: expected [H x W x C], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const std::size_t wh = opts.window_h, ww = opts.window_w;
  const std::size_t sh = opts.stride_h ? opts.stride_h : std::max<std::size_t>(1, wh / 2);
  const std::size_t sw = opts.stride_w ? opts.stride_w : std::max<std::size_t>(1, ww / 2);
  const std::size_t ph = std::max(h, wh), pw = std::max(w, ww);

  const auto src = image.data();
  std::vector<T> padded;
  std::span<const T> canvas = src;
  if (ph != h || pw != w) {
    padded.assign(ph * pw * c, T(0));
    for (std::size_t y = 0; y < h; ++y) std::copy_n(src.data() + y * w * c, w * c, padded.data() + y * pw * c);
    canvas = padded;
  }

  std::vector<T> acc(ph * pw * classes, T(0));
  std::vector<std::size_t> count(ph * pw, 0);
  std::vector<T> crop(wh * ww * c);
  for (std::size_t y0 : window_starts(ph, wh, sh)) {
    for (std::size_t x0 : window_starts(pw, ww, sw)) {
      for (std::size_t y = 0; y < wh; ++y)
        std::copy_n(canvas.data() + ((y0 + y) * pw + x0) * c, ww * c, crop.data() + y * ww * c);
      const Tensor<T> logits = forward(Tensor<T>::from_data({wh, ww, c}, crop));
      if (logits.rank() != 3 || logits.dim(0) != wh || logits.dim(1) != ww || logits.dim(2) != classes) {
        throw DimensionError("sliding window: window forward returned " + shape_str(logits.shape()));
      }
      const auto l = logits.data();
      for (std::size_t y = 0; y < wh; ++y) {
        for (std::size_t x = 0; x < ww; ++x) {
          const std::size_t p = (y0 + y) * pw + (x0 + x);
          ++count[p];
          const T* from = l.data() + (y * ww + x) * classes;
          T* to = acc.data() + p * classes;
          for (std::size_t k = 0; k < classes; ++k) to[k] += from[k];
        }
      }
    }
  }

  std::vector<T> out(h * w * classes);
  if (coverage) coverage->assign(h * w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * pw + x, q = y * w + x;
      const T inv = T(1) / T(count[p]);
      for (std::size_t k = 0; k < classes; ++k) out[q * classes + k] = acc[p * classes + k] * inv;
      if (coverage) (*coverage)[q] = count[p];
    }
  }
  return Tensor<T>::from_data({h, w, classes}, std::move(out));
}

template <typename T>
WindowForward<T> eval_forward(const Segmenter<T>& model) {
  return [&model](const Tensor<T>& window) { return model.forward(window); };
}

template <typename T>
Tensor<T> sliding_window_logits(const Segmenter<T>& model, const Tensor<T>& image) {
  return sliding_window_logits<T>(eval_forward(model), image, model.config().classes,
                                  window_options(model.config()));
}

template <typename T>
LabelMap sliding_window_predict(const Segmenter<T>& model, const Tensor<T>& image) {
  return argmax_labels(sliding_window_logits(model, image));
}

template <typename T>
Tensor<T> multiscale_scores(const WindowForward<T>& forward, const Tensor<T>& image, std::size_t classes,
                            const WindowOptions& window, const MultiscaleOptions& opts) {
  NoGradGuard guard;
  if (opts.scales.empty()) throw ConfigError("multiscale: no scales given");
  const std::size_t h = image.dim(0), w = image.dim(1);
  std::vector<T> acc(h * w * classes, T(0));
  std::size_t maps = 0;

  auto accumulate = [&](const Tensor<T>& input, double s, bool flipped) {
    const std::size_t sh = std::max<std::size_t>(1, std::size_t(std::lround(double(h) * s)));
    const std::size_t sw = std::max<std::size_t>(1, std::size_t(std::lround(double(w) * s)));
    Tensor<T> scaled = (sh == h && sw == w) ? input : bilinear_resize(input, sh, sw);
    Tensor<T> scores = sliding_window_logits<T>(forward, scaled, classes, window);
    if (opts.average_probabilities) scores = softmax(scores, 2);
    if (sh != h || sw != w) scores = bilinear_resize(scores, h, w);
    if (flipped) scores = flip_horizontal(scores);
    const auto d = scores.data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
    ++maps;
  };

  for (double s : opts.scales) {
    if (!(s > 0)) throw ConfigError("multiscale: scales must be positive");
    accumulate(image, s, false);
  }
  if (opts.flip) {
    const Tensor<T> mirrored = flip_horizontal(image);
    for (double s : opts.scales) accumulate(mirrored, s, true);
  }
  const T inv = T(1) / T(maps);
  for (auto& v : acc) v *= inv;
  return Tensor<T>::from_data({h, w, classes}, std::move(acc));
}

template <typename T>
LabelMap multiscale_predict(const Segmenter<T>& model, const Tensor<T>& image, const MultiscaleOptions& opts) {
  return argmax_labels(
      multiscale_scores<T>(eval_forward(model), image, model.config().classes, window_options(model.config()), opts));
}

EvalReport evaluate(const Segmenter<float>& model, std::span<const Sample> samples, const EvalOptions& opts) {
  const std::size_t classes = model.config().classes;
  std::size_t workers = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::max<std::size_t>(1, std::min(workers, samples.size()));

  struct Partial {
    ConfusionMatrix cm;
    BandConfusion bands;
    std::exception_ptr error;
  };
  std::vector<Partial> partials(workers, Partial{ConfusionMatrix(classes), BandConfusion(classes), nullptr});
  std::atomic<std::size_t> next{0};
  auto run = [&](std::size_t wi) {
    try {
      NoGradGuard guard;
      for (std::size_t i = next++; i < samples.size(); i = next++) {
        const Sample& s = samples[i];
        const Tensor<float> image = normalize_image<float>(s.image, model.config().mean, model.config().std);
        const LabelMap pred = opts.multiscale ? multiscale_predict(model, image, opts.multiscale_options)
                                              : sliding_window_predict(model, image);
        partials[wi].cm.add(pred, s.labels);
        if (opts.size_bands) partials[wi].bands.add(pred, s.labels, opts.bands);
      }
    } catch (...) {
      partials[wi].error = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t wi = 0; wi < workers; ++wi) pool.emplace_back(run, wi);
    for (auto& t : pool) t.join();
  }

  EvalReport report{ConfusionMatrix(classes), std::nullopt};
  if (opts.size_bands) report.bands.emplace(classes);
  for (auto& p : partials) {
    if (p.error) std::rethrow_exception(p.error);
    report.confusion.merge(p.cm);
    if (report.bands) report.bands->merge(p.bands);
  }
  return report;
}

#define SEGMENTER_INSTANTIATE_INFERENCE(T)                                                                  \
  template Tensor<T> sliding_window_logits(const WindowForward<T>&, const Tensor<T>&, std::size_t,         \
                                           const WindowOptions&, std::vector<std::size_t>*);               \
  template Tensor<T> sliding_window_logits(const Segmenter<T>&, const Tensor<T>&);                         \
  template LabelMap sliding_window_predict(const Segmenter<T>&, const Tensor<T>&);                         \
  template WindowForward<T> eval_forward(const Segmenter<T>&);                                             \
  template Tensor<T> multiscale_scores(const WindowForward<T>&, const Tensor<T>&, std::size_t,             \
                                       const WindowOptions&, const MultiscaleOptions&);                    \
  template LabelMap multiscale_predict(const Segmenter<T>&, const Tensor<T>&, const MultiscaleOptions&);

SEGMENTER_INSTANTIATE_INFERENCE(float)
SEGMENTER_INSTANTIATE_INFERENCE(double)

}  // namespace segmenter
