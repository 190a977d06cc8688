#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "segmenter/image.hpp"

namespace segmenter {

// K x K pixel counts; rows are ground truth, columns predictions. Pixels whose
// ground truth is the ignore id are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0);

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * classes_ + pred]; }
  std::uint64_t total() const { return total_; }

  // Throws DimensionError on size mismatch and ContractError on a label
  // outside [0, K) (ground truth may also be the ignore id).
  void add(const LabelMap& pred, const LabelMap& gt);
  // As add(), restricted to pixels where mask is non-zero.
  void add_masked(const LabelMap& pred, const LabelMap& gt, const std::vector<std::uint8_t>& mask);
  void add_pixel(std::size_t gt, std::size_t pred, std::uint64_t n = 1);
  void merge(const ConfusionMatrix& other);

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

struct IouResult {
  std::vector<double> per_class;  // NaN for classes absent from both GT and prediction
  double miou = 0.0;              // mean over present classes; NaN when none
  bool defined = false;           // false for an empty confusion matrix
};

IouResult compute_iou(const ConfusionMatrix& cm);
double miou(const ConfusionMatrix& cm);

// Component area thresholds in pixels: small < small_max, medium < medium_max,
// large otherwise.
struct SizeBands {
  std::size_t small_max = 32 * 32;
  std::size_t medium_max = 96 * 96;

  std::size_t band_of(std::size_t area) const { return area < small_max ? 0 : area < medium_max ? 1 : 2; }
  void validate() const;
};

inline constexpr const char* kBandNames[3] = {"small", "medium", "large"};

// 4-connected components of equal ground-truth class (ignore pixels excluded).
// Returns a component id per pixel (-1 for ignore) and the area of each id.
struct Components {
  std::vector<std::int64_t> id;
  std::vector<std::size_t> area;
};
Components connected_components(const LabelMap& gt);

struct BandConfusion {
  std::vector<ConfusionMatrix> bands;  // small, medium, large

  explicit BandConfusion(std::size_t classes) : bands(3, ConfusionMatrix(classes)) {}
  void add(const LabelMap& pred, const LabelMap& gt, const SizeBands& sizes);
  void merge(const BandConfusion& other);
};

// Per-band IoU; bands with no pixels have defined == false.
std::vector<IouResult> size_stratified_iou(const LabelMap& pred, const LabelMap& gt, std::size_t classes,
                                           const SizeBands& bands = {});

}  // namespace segmenter
