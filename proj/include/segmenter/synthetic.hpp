#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "segmenter/dataset.hpp"
#include "segmenter/image.hpp"

namespace segmenter {

enum class ShapeKind { Rectangle, Disk, Stripe };

std::string_view shape_kind_name(ShapeKind k);

struct DrawnShape {
  ShapeKind kind = ShapeKind::Rectangle;
  std::uint8_t class_id = 1;
  // Rectangle: [x0, x1) x [y0, y1).
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  // Disk: center and radius.
  double cx = 0, cy = 0, radius = 0;
  // Stripe: full-length band of `thickness` px starting at `offset`.
  bool vertical = false;
  double offset = 0, thickness = 0;

  // Hit test at a pixel center (x + 0.5, y + 0.5).
  bool covers(std::size_t x, std::size_t y) const;
};

struct SyntheticSpec {
  std::size_t n_images = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 3;  // class 0 is background
  std::vector<ShapeKind> kinds{ShapeKind::Rectangle, ShapeKind::Disk};
  double noise_std = 8.0;
  std::size_t min_size = 8;  // rectangle side / disk diameter, px
  std::size_t max_size = 20;
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  std::size_t stripe_width = 2;
  // When non-zero, rectangle corners land on multiples of `snap` px (sizes
  // rounded to multiples too). Other kinds are unaffected.
  std::size_t snap = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Fixed per-class mean colors; classes beyond the table are rejected.
inline constexpr std::size_t kColorTableSize = 12;
const std::array<std::uint8_t, 3>& class_color(std::size_t class_id);

struct SyntheticImage {
  Sample sample;
  std::vector<DrawnShape> shapes;  // back to front
};

// Deterministic from spec.seed. Shapes are painted back to front; a pixel's
// label is the topmost covering shape's class (background 0), its color the
// class color plus N(0, noise_std) per channel, clamped and rounded.
std::vector<SyntheticImage> generate_synthetic_samples(const SyntheticSpec& spec);

// Label map implied by a shape list.
LabelMap rasterize(const std::vector<DrawnShape>& shapes, std::size_t height, std::size_t width);

// Writes images/NNNN.ppm, labels/NNNN.pgm, shapes.txt and manifest.txt under
// `out_dir`; returns the manifest.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// "key = value" text: n_images, height, width, classes, shapes (comma list of
// rectangle|disk|stripe), noise_std, min_size, max_size, min_shapes,
// max_shapes, stripe_width, snap, seed.
SyntheticSpec parse_synthetic_spec_text(std::string_view text);
SyntheticSpec parse_synthetic_spec(const std::filesystem::path& path);

}  // namespace segmenter
