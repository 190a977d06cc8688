#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "segmenter/config.hpp"
#include "segmenter/image.hpp"
#include "segmenter/model.hpp"

namespace segmenter {

// gamma0 * (1 - n_iter / n_total)^power; requires 0 <= n_iter <= n_total, n_total >= 1.
double poly_lr(double base_lr, std::size_t n_iter, std::size_t n_total, double power = 0.9);

// p <- p - lr * grad(p) for every parameter, then zeroes the gradients.
// Throws ContractError when a parameter has no gradient buffer.
template <typename T>
void sgd_step(Segmenter<T>& model, double lr);

// SGD with optional heavy-ball momentum (v <- m v + g; p <- p - lr v).
// momentum = 0 is exactly sgd_step.
template <typename T>
class Sgd {
 public:
  explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}
  void step(Segmenter<T>& model, double lr);

 private:
  double momentum_;
  std::map<std::string, std::vector<T>> velocity_;
};

struct AugmentOptions {
  std::size_t crop_h = 512;
  std::size_t crop_w = 512;
  double min_scale = 0.5;
  double max_scale = 2.0;
  double flip_prob = 0.5;
};

AugmentOptions augment_options(const ModelConfig& model, const TrainConfig& train);

struct AugmentedSample {
  Tensor<float> image;  // [crop_h x crop_w x 3], normalized
  LabelMap labels;      // crop_h x crop_w
  double scale = 1.0;
  bool flipped = false;
  std::size_t offset_y = 0;  // crop origin in the rescaled image
  std::size_t offset_x = 0;
};

// Normalize, rescale both axes by s ~ U[min_scale, max_scale] (image bilinear,
// labels nearest), flip left-right with flip_prob, then random-crop down to
// or pad up to the crop size (image with 0 = the normalized mean, labels with
// the ignore id).
AugmentedSample augment(const Sample& sample, const ModelConfig& model, const AugmentOptions& opts,
                        Rng& rng);

// Nearest-neighbour label resize with half-pixel centers.
LabelMap resize_labels_nearest(const LabelMap& labels, std::size_t out_h, std::size_t out_w);

struct IterationRecord {
  std::size_t iteration = 0;  // 1-based count of completed iterations
  double lr = 0;
  double loss = 0;
  double miou = -1;  // < 0 when not evaluated
};

std::string format_record(const IterationRecord& r);

struct TrainHooks {
  std::ostream* log = nullptr;  // receives format_record lines
  // Called every eval_every iterations; returns mIoU.
  std::function<double(const Segmenter<float>&)> evaluate;
  // Where the model is saved when the loss goes non-finite.
  std::string divergence_snapshot;
  // Stop once this many iterations are complete (0 = run to the end). The
  // schedule still spans the full iteration count.
  std::size_t stop_after = 0;
};

struct TrainResult {
  std::vector<IterationRecord> records;
  TrainConfig final_config;  // completed_iterations updated
};

// Runs iterations [cfg.completed_iterations, cfg.iterations). Each draws a
// batch (epoch-wise shuffles), augments, averages the loss over the batch,
// backpropagates and takes a poly-scheduled SGD step. Every random draw comes
// from streams keyed by (seed, sample index), so a resumed run continues
// exactly where it stopped.
TrainResult train_loop(Segmenter<float>& model, std::span<const Sample> data, const TrainConfig& cfg,
                       const TrainHooks& hooks = {});

}  // namespace segmenter
