#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <ostream>
#include <span>
#include <vector>

#include "segmenter/model.hpp"

namespace segmenter {

// Mean attention distance in pixels, indexed [layer][head].
using AttentionDistances = std::vector<std::vector<double>>;

// For each [heads x N x N] map over a grid_h x grid_w patch grid: sum over keys
// of A[q, k] * |center(q) - center(k)|, averaged over queries.
template <typename T>
AttentionDistances mean_attention_distance(std::span<const Tensor<T>> layers, std::size_t grid_h,
                                           std::size_t grid_w, std::size_t patch);

// Eval-mode encoder attention over normalized images of the configured size,
// averaged over the images.
template <typename T>
AttentionDistances attention_distance(const Segmenter<T>& model, std::span<const Tensor<T>> images);

void write_attention_tsv(std::ostream& out, const AttentionDistances& d);

struct Projection2 {
  std::vector<std::array<double, 2>> coords;  // one row per input row
  std::array<double, 2> singular_values{0, 0};
  std::vector<std::vector<double>> directions;  // 2 unit vectors of length D
};

// Centers the rows of a [rows x cols] row-major matrix, finds its top two right
// singular vectors by power iteration with deflation (tolerance 1e-10) and
// projects onto them. Each direction's first non-zero coordinate is positive.
Projection2 project_top2(std::span<const double> matrix, std::size_t rows, std::size_t cols);

// Class embeddings of a mask decoder projected to 2-D; UnsupportedError for
// the linear decoder.
template <typename T>
Projection2 class_embedding_projection(const Segmenter<T>& model);

void write_projection_tsv(std::ostream& out, const Projection2& p, const std::vector<std::string>& names = {});

}  // namespace segmenter
