#include "segmenter/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "segmenter/checkpoint.hpp"
#include "segmenter/error.hpp"

namespace segmenter {

double poly_lr(double base_lr, std::size_t n_iter, std::size_t n_total, double power) {
  if (n_total == 0) throw ContractError("poly_lr: n_total must be at least 1");
  if (n_iter > n_total) {
    throw ContractError("poly_lr: iteration " + std::to_string(n_iter) + " exceeds total " +
                        std::to_string(n_total));
  }
  return base_lr * std::pow(1.0 - double(n_iter) / double(n_total), power);
}

template <typename T>
void sgd_step(Segmenter<T>& model, double lr) {
  Sgd<T>(0.0).step(model, lr);
}

template <typename T>
void Sgd<T>::step(Segmenter<T>& model, double lr) {
  auto params = model.named_parameters();
  for (auto& [name, p] : params) {
    if (p->requires_grad() && !p->has_grad()) {
      throw ContractError("sgd_step: parameter '" + name + "' has no gradient");
    }
  }
  const T rate = T(lr);
  for (auto& [name, p] : params) {
    if (!p->requires_grad()) continue;
    auto values = p->mutable_data();
    auto grad = p->mutable_grad();
    if (momentum_ > 0.0) {
      auto& v = velocity_[name];
      if (v.size() != grad.size()) v.assign(grad.size(), T(0));
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = T(momentum_) * v[i] + grad[i];
        values[i] -= rate * v[i];
      }
    } else {
      for (std::size_t i = 0; i < values.size(); ++i) values[i] -= rate * grad[i];
    }
    std::fill(grad.begin(), grad.end(), T(0));
  }
}

AugmentOptions augment_options(const ModelConfig& model, const TrainConfig& train) {
  return {model.encoder.image_h, model.encoder.image_w, train.min_scale, train.max_scale, train.flip_prob};
}

LabelMap resize_labels_nearest(const LabelMap& labels, std::size_t out_h, std::size_t out_w) {
  LabelMap out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(labels.height - 1, std::size_t((double(y) + 0.5) * labels.height / out_h));
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(labels.width - 1, std::size_t((double(x) + 0.5) * labels.width / out_w));
      out.at(y, x) = labels.at(sy, sx);
    }
  }
  return out;
}

AugmentedSample augment(const Sample& sample, const ModelConfig& model, const AugmentOptions& opts,
                        Rng& rng) {
  NoGradGuard guard;
  AugmentedSample out;
  out.scale = opts.min_scale == opts.max_scale ? opts.min_scale : uniform(rng, opts.min_scale, opts.max_scale);
  out.flipped = bernoulli(rng, opts.flip_prob);

  Tensor<float> image = normalize_image<float>(sample.image, model.mean, model.std);
  LabelMap labels = sample.labels;
  const std::size_t h = std::max<std::size_t>(1, std::size_t(std::lround(double(sample.image.height) * out.scale)));
  const std::size_t w = std::max<std::size_t>(1, std::size_t(std::lround(double(sample.image.width) * out.scale)));
  if (h != sample.image.height || w != sample.image.width) {
    image = bilinear_resize(image, h, w);
    labels = resize_labels_nearest(labels, h, w);
  }
  if (out.flipped) {
    image = flip_horizontal(image);
    labels = flip_labels(labels);
  }

  if (h > opts.crop_h) out.offset_y = std::size_t(uniform(rng, 0.0, double(h - opts.crop_h + 1)));
  if (w > opts.crop_w) out.offset_x = std::size_t(uniform(rng, 0.0, double(w - opts.crop_w + 1)));
  out.offset_y = std::min(out.offset_y, h > opts.crop_h ? h - opts.crop_h : 0);
  out.offset_x = std::min(out.offset_x, w > opts.crop_w ? w - opts.crop_w : 0);

  std::vector<float> pixels(opts.crop_h * opts.crop_w * 3, 0.0f);
  out.labels = LabelMap(opts.crop_h, opts.crop_w, kIgnoreLabel);
  const auto src = image.data();
  for (std::size_t y = 0; y < std::min(h - out.offset_y, opts.crop_h); ++y) {
    for (std::size_t x = 0; x < std::min(w - out.offset_x, opts.crop_w); ++x) {
      const std::size_t sy = y + out.offset_y, sx = x + out.offset_x;
      std::copy_n(src.data() + (sy * w + sx) * 3, 3, pixels.data() + (y * opts.crop_w + x) * 3);
      out.labels.at(y, x) = labels.at(sy, sx);
    }
  }
  out.image = Tensor<float>::from_data({opts.crop_h, opts.crop_w, 3}, std::move(pixels));
  return out;
}

std::string format_record(const IterationRecord& r) {
  char buf[160];
  int n = std::snprintf(buf, sizeof buf, "iter=%zu lr=%.6g loss=%.6g", r.iteration, r.lr, r.loss);
  if (r.miou >= 0) std::snprintf(buf + n, sizeof buf - n, " miou=%.6g", r.miou);
  return buf;
}

// TODO: persist momentum buffers in checkpoints so --resume is exact with momentum > 0.
TrainResult train_loop(Segmenter<float>& model, std::span<const Sample> data, const TrainConfig& cfg,
                       const TrainHooks& hooks) {
  cfg.validate();
  if (data.empty()) throw ContractError("train_loop: dataset is empty");
  TrainResult result;
  result.final_config = cfg;
  const AugmentOptions aug = augment_options(model.config(), cfg);
  const std::size_t n = data.size();
  Sgd<float> optimizer(cfg.momentum);

  std::size_t cached_epoch = std::size_t(-1);
  std::vector<std::size_t> order(n);
  auto sample_index = [&](std::size_t global) {
    const std::size_t epoch = global / n;
    if (epoch != cached_epoch) {
      std::iota(order.begin(), order.end(), std::size_t(0));
      Rng shuffle = make_stream(cfg.seed, "shuffle", epoch);
      for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = std::size_t(uniform(shuffle, 0.0, double(i)));
        std::swap(order[i - 1], order[std::min(j, i - 1)]);
      }
      cached_epoch = epoch;
    }
    return order[global % n];
  };

  for (std::size_t it = cfg.completed_iterations; it < cfg.iterations; ++it) {
    const double lr = poly_lr(cfg.base_lr, it, cfg.iterations, cfg.poly_power);
    model.zero_grad();
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t global = it * cfg.batch_size + b;
      Rng aug_rng = make_stream(cfg.seed, "augment", global);
      Rng depth_rng = make_stream(cfg.seed, "stochastic_depth", global);
      const AugmentedSample s = augment(data[sample_index(global)], model.config(), aug, aug_rng);
      ForwardContext<float> ctx;
      ctx.mode = Mode::Train;
      ctx.rng = &depth_rng;
      const CrossEntropy<float> ce = segmentation_loss(model.forward(s.image, ctx), s.labels);
      batch_loss += double(ce.loss.item()) / double(cfg.batch_size);
      if (ce.all_ignored) continue;
      scale(ce.loss, 1.0f / float(cfg.batch_size)).backward();
    }
    if (!std::isfinite(batch_loss)) {
      std::string where;
      if (!hooks.divergence_snapshot.empty()) {
        TrainConfig snap = cfg;
        snap.completed_iterations = it;
        save_checkpoint(model, snap, hooks.divergence_snapshot);
        where = hooks.divergence_snapshot;
      }
      throw DivergenceError("non-finite loss at iteration " + std::to_string(it + 1) +
                                (where.empty() ? std::string() : "; model saved to " + where),
                            where);
    }
    optimizer.step(model, lr);

    IterationRecord rec{it + 1, lr, batch_loss, -1.0};
    if (cfg.eval_every && (it + 1) % cfg.eval_every == 0 && hooks.evaluate) rec.miou = hooks.evaluate(model);
    if (hooks.log) *hooks.log << format_record(rec) << "\n" << std::flush;
    result.records.push_back(rec);
    result.final_config.completed_iterations = it + 1;
    if (hooks.stop_after && it + 1 >= hooks.stop_after) break;
  }
  return result;
}

template void sgd_step(Segmenter<float>&, double);
template void sgd_step(Segmenter<double>&, double);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace segmenter
