#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace segmenter {

struct EncoderConfig {
  std::size_t image_h = 512;
  std::size_t image_w = 512;
  std::size_t patch_size = 16;
  std::size_t channels = 3;
  std::size_t depth = 12;
  std::size_t token_size = 192;
  std::size_t heads = 3;
  std::size_t mlp_hidden = 4 * 192;
  double dropout = 0.0;
  double stochastic_depth = 0.1;
  // Kept branches are scaled by 1/(1 - rate) while training so that the
  // full, unscaled branch at eval time matches the training expectation.
  bool drop_path_scaling = true;
  double layer_norm_eps = 1e-6;
  double init_std = 0.02;

  std::size_t head_dim() const { return token_size / heads; }
  std::size_t grid_h() const { return image_h / patch_size; }
  std::size_t grid_w() const { return image_w / patch_size; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  // Throws ConfigError naming the violated constraint.
  void validate() const;
};

enum class DecoderKind { Linear, Mask };

std::string_view decoder_kind_name(DecoderKind k);
DecoderKind parse_decoder_kind(std::string_view s);

struct DecoderConfig {
  DecoderKind kind = DecoderKind::Mask;
  std::size_t layers = 2;  // mask transformer depth
  bool final_norm = true;
  bool normalize_classes = false;
};

struct ModelConfig {
  std::string variant = "custom";
  EncoderConfig encoder;
  DecoderConfig decoder;
  std::size_t classes = 0;
  std::array<double, 3> mean{123.675, 116.28, 103.53};
  std::array<double, 3> std{58.395, 57.12, 57.375};

  void validate() const;
};

struct VariantPreset {
  std::string_view name;
  std::size_t depth, token_size, heads;
};

// Seg-Ti, Seg-S, Seg-B, Seg-L.
const VariantPreset* find_variant(std::string_view name);
// Applies a preset: layers, token size, heads and the 4x MLP width.
void apply_variant(ModelConfig& cfg, std::string_view name);

struct TrainConfig {
  double base_lr = 1e-3;
  std::size_t iterations = 160000;
  std::size_t batch_size = 8;
  double poly_power = 0.9;
  double weight_decay = 0.0;
  double momentum = 0.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;
  double min_scale = 0.5;
  double max_scale = 2.0;
  double flip_prob = 0.5;
  // Iterations already run; non-zero in checkpoints written by training.
  std::size_t completed_iterations = 0;

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

// "key = value" lines, '#' comments. Unknown keys, bad values and a missing
// `classes` key raise ConfigError; empty values fall back to defaults.
RunConfig parse_config_text(std::string_view text);
RunConfig parse_config(const std::filesystem::path& path);

// Canonical text form; parse_config_text(config_to_text(c)) reproduces c.
std::string config_to_text(const RunConfig& cfg);

// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace segmenter
