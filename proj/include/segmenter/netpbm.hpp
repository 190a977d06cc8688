#pragma once

// Binary netpbm codecs: P6 (RGB) for images, P5 (gray) for label maps.
// Only maxval 255 is accepted. Header comments ('#' to end of line) are
// skipped. Errors carry the byte offset where parsing failed.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "segmenter/image.hpp"

namespace segmenter {

Image decode_ppm(std::span<const std::uint8_t> bytes);
LabelMap decode_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const Image& image);
std::vector<std::uint8_t> encode_pgm(const LabelMap& labels);

Image read_image_ppm(const std::filesystem::path& path);
LabelMap read_labels_pgm(const std::filesystem::path& path);
void write_image_ppm(const Image& image, const std::filesystem::path& path);
void write_labels_pgm(const LabelMap& labels, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace segmenter
