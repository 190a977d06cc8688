#include "segmenter/metrics.hpp"

#include <cmath>
#include <limits>

#include "segmenter/error.hpp"

namespace segmenter {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

void ConfusionMatrix::add_pixel(std::size_t gt, std::size_t pred, std::uint64_t n) {
  if (gt >= classes_ || pred >= classes_) {
    throw ContractError("confusion: label pair (" + std::to_string(gt) + ", " + std::to_string(pred) +
                        ") outside [0, " + std::to_string(classes_) + ")");
  }
  counts_[gt * classes_ + pred] += n;
  total_ += n;
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  add_masked(pred, gt, {});
}

void ConfusionMatrix::add_masked(const LabelMap& pred, const LabelMap& gt, const std::vector<std::uint8_t>& mask) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw DimensionError("confusion: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  if (!mask.empty() && mask.size() != gt.labels.size()) throw DimensionError("confusion: mask size mismatch");
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    if (gt.labels[i] == kIgnoreLabel) continue;
    if (!mask.empty() && !mask[i]) continue;
    add_pixel(gt.labels[i], pred.labels[i]);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw DimensionError("confusion: merging matrices of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

IouResult compute_iou(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  IouResult r;
  r.per_class.assign(k, nan);
  r.miou = nan;
  if (cm.total() == 0) return r;
  double acc = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t tp = cm.at(c, c), fn = 0, fp = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == c) continue;
      fn += cm.at(c, j);
      fp += cm.at(j, c);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    r.per_class[c] = double(tp) / double(denom);
    acc += r.per_class[c];
    ++present;
  }
  r.defined = true;
  r.miou = acc / double(present);
  return r;
}

double miou(const ConfusionMatrix& cm) { return compute_iou(cm).miou; }

void SizeBands::validate() const {
  if (small_max == 0 || small_max > medium_max) throw ConfigError("size bands need 0 < small_max <= medium_max");
}

Components connected_components(const LabelMap& gt) {
  const std::size_t h = gt.height, w = gt.width;
  Components out;
  out.id.assign(h * w, -1);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (out.id[start] >= 0 || gt.labels[start] == kIgnoreLabel) continue;
    const std::int64_t id = std::int64_t(out.area.size());
    const std::uint8_t cls = gt.labels[start];
    std::size_t area = 0;
    out.id[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++area;
      const std::size_t y = p / w, x = p % w;
      auto visit = [&](std::size_t q) {
        if (out.id[q] < 0 && gt.labels[q] == cls) {
          out.id[q] = id;
          stack.push_back(q);
        }
      };
      if (y > 0) visit(p - w);
      if (y + 1 < h) visit(p + w);
      if (x > 0) visit(p - 1);
      if (x + 1 < w) visit(p + 1);
    }
    out.area.push_back(area);
  }
  return out;
}

void BandConfusion::add(const LabelMap& pred, const LabelMap& gt, const SizeBands& sizes) {
  sizes.validate();
  if (pred.height != gt.height || pred.width != gt.width) throw DimensionError("size bands: map size mismatch");
  const Components comps = connected_components(gt);
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    if (comps.id[i] < 0) continue;
    bands[sizes.band_of(comps.area[std::size_t(comps.id[i])])].add_pixel(gt.labels[i], pred.labels[i]);
  }
}

void BandConfusion::merge(const BandConfusion& other) {
  for (std::size_t b = 0; b < bands.size(); ++b) bands[b].merge(other.bands[b]);
}

std::vector<IouResult> size_stratified_iou(const LabelMap& pred, const LabelMap& gt, std::size_t classes,
                                           const SizeBands& sizes) {
  BandConfusion bc(classes);
  bc.add(pred, gt, sizes);
  std::vector<IouResult> out;
  for (const auto& cm : bc.bands) out.push_back(compute_iou(cm));
  return out;
}

}  // namespace segmenter
