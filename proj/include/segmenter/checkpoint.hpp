#pragma once

// Checkpoint layout, little-endian throughout:
//
//   "SEGCKPT1"                      8 bytes
//   u32 version (= 1)
//   u32 config length, UTF-8 config text (config_to_text form)
//   u32 tensor count
//   per tensor: u32 name length, UTF-8 name, u8 dtype (0 = f32), u8 ndim,
//               ndim x u64 dims, raw f32 payload
//
// The embedded config makes a checkpoint self-describing.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segmenter/config.hpp"
#include "segmenter/model.hpp"

namespace segmenter {

inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'G', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<CheckpointTensor> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

void save_checkpoint(const Segmenter<float>& model, const TrainConfig& train, const std::filesystem::path& path);

struct LoadedCheckpoint {
  Segmenter<float> model;
  RunConfig config;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Copies tensors into an existing model. Throws LoadError listing every
// missing, unexpected or mis-shaped tensor (first offender first).
void load_into(const CheckpointFile& file, Segmenter<float>& model);

// As load_checkpoint, then retargets the model to a new input size:
// position embeddings are bilinearly resampled, everything else is verbatim.
LoadedCheckpoint load_checkpoint_resized(const std::filesystem::path& path, std::size_t height,
                                         std::size_t width);

}  // namespace segmenter
