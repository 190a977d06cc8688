#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "segmenter/config.hpp"
#include "segmenter/rng.hpp"
#include "segmenter/tensor.hpp"

namespace testutil {

using namespace segmenter;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng = make_stream(seed, "test", 0);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = T(uniform(rng, lo, hi));
  return Tensor<T>::from_data(std::move(shape), std::move(v));
}

// Small model used across suites: L=2, D=32, 2 heads, P=8, 16x16 input.
inline ModelConfig micro_config(DecoderKind kind, std::size_t classes = 3) {
  ModelConfig m;
  m.classes = classes;
  m.encoder.image_h = m.encoder.image_w = 16;
  m.encoder.patch_size = 8;
  m.encoder.depth = 2;
  m.encoder.token_size = 32;
  m.encoder.heads = 2;
  m.encoder.mlp_hidden = 64;
  m.encoder.stochastic_depth = 0.0;
  m.decoder.kind = kind;
  m.decoder.layers = 1;
  return m;
}

// Largest relative error between the analytic gradient of f at `x` and
// central differences with step h. Relative to max(|analytic|, |numeric|, floor).
inline double grad_check(Tensor<double>& x, const std::function<Tensor<double>()>& f, double h = 1e-6,
                         double floor = 1e-3) {
  x.zero_grad();
  f().backward();
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  auto data = x.mutable_data();
  double worst = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    double plus, minus;
    {
      NoGradGuard g;
      data[i] = saved + h;
      plus = f().item();
      data[i] = saved - h;
      minus = f().item();
    }
    data[i] = saved;
    const double numeric = (plus - minus) / (2 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() /
           ("segmenter_test_" + name + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testutil
