#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "segmenter/image.hpp"

namespace segmenter {

struct DatasetManifest {
  std::filesystem::path root;  // directory the relative paths resolve against
  std::vector<std::pair<std::string, std::string>> pairs;  // (image.ppm, labels.pgm)
  std::size_t classes = 0;
  std::vector<std::string> class_names;
  std::array<double, 3> mean{0, 0, 0};  // dataset pixel statistics
  std::array<double, 3> std{1, 1, 1};

  // Resolves a manifest path: absolute paths as-is; relative ones against
  // $SEGMENTER_DATA when set, else against root.
  std::filesystem::path resolve(const std::string& relative) const;
};

// Format:
//   classes = K
//   class_names = background, a, b
//   mean = r, g, b
//   std = r, g, b
//   pair = images/0000.ppm labels/0000.pgm
DatasetManifest parse_manifest_text(std::string_view text, const std::filesystem::path& root);
DatasetManifest read_manifest(const std::filesystem::path& path);
std::string manifest_to_text(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Checks a single pair: matching sizes, labels in [0, K) or the ignore id.
void validate_sample(const Sample& sample, std::size_t classes, const std::string& where);

// Reads and validates every pair. Throws ConfigError on invalid content.
std::vector<Sample> load_dataset(const DatasetManifest& manifest);

}  // namespace segmenter
