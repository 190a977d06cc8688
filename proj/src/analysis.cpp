#include "segmenter/analysis.hpp"

#include <cmath>

#include "segmenter/config.hpp"
#include "segmenter/error.hpp"

namespace segmenter {

template <typename T>
AttentionDistances mean_attention_distance(std::span<const Tensor<T>> layers, std::size_t grid_h,
                                           std::size_t grid_w, std::size_t patch) {
  const std::size_t n = grid_h * grid_w;
  std::vector<double> dist(n * n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k < n; ++k) {
      const double dy = (double(q / grid_w) - double(k / grid_w)) * double(patch);
      const double dx = (double(q % grid_w) - double(k % grid_w)) * double(patch);
      dist[q * n + k] = std::sqrt(dy * dy + dx * dx);
    }
  }
  AttentionDistances out;
  for (const auto& layer : layers) {
    if (layer.rank() != 3 || layer.dim(1) != n || layer.dim(2) != n) {
      throw DimensionError("attention distance: map " + shape_str(layer.shape()) + " does not fit a " +
                           std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
    }
    const auto a = layer.data();
    std::vector<double> heads(layer.dim(0), 0.0);
    for (std::size_t h = 0; h < heads.size(); ++h) {
      double acc = 0;
      for (std::size_t i = 0; i < n * n; ++i) acc += double(a[h * n * n + i]) * dist[i];
      heads[h] = acc / double(n);
    }
    out.push_back(std::move(heads));
  }
  return out;
}

template <typename T>
AttentionDistances attention_distance(const Segmenter<T>& model, std::span<const Tensor<T>> images) {
  NoGradGuard guard;
  const EncoderConfig& e = model.config().encoder;
  AttentionDistances total;
  for (const auto& image : images) {
    AttentionCapture<T> capture;
    ForwardContext<T> ctx;
    ctx.attention = &capture;
    model.patch_logits(image, ctx);
    const auto d = mean_attention_distance<T>(capture.layers, e.grid_h(), e.grid_w(), e.patch_size);
    if (total.empty()) total.assign(d.size(), std::vector<double>(d.empty() ? 0 : d[0].size(), 0.0));
    for (std::size_t l = 0; l < d.size(); ++l)
      for (std::size_t h = 0; h < d[l].size(); ++h) total[l][h] += d[l][h];
  }
  for (auto& layer : total)
    for (auto& v : layer) v /= double(images.size());
  return total;
}

void write_attention_tsv(std::ostream& out, const AttentionDistances& d) {
  out << "layer\thead\tmean_distance_px\n";
  for (std::size_t l = 0; l < d.size(); ++l)
    for (std::size_t h = 0; h < d[l].size(); ++h) out << l << "\t" << h << "\t" << format_double(d[l][h]) << "\n";
}

namespace {

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void orthogonalize(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
  for (const auto& b : basis) {
    double d = 0;
    for (std::size_t i = 0; i < v.size(); ++i) d += v[i] * b[i];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * b[i];
  }
}

}  // namespace

Projection2 project_top2(std::span<const double> matrix, std::size_t rows, std::size_t cols) {
  if (matrix.size() != rows * cols) throw DimensionError("projection: matrix size does not match rows x cols");
  if (cols < 2) throw DimensionError("projection: need at least 2 columns");
  std::vector<double> a(matrix.begin(), matrix.end());
  for (std::size_t j = 0; j < cols; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < rows; ++i) m += a[i * cols + j];
    m /= double(rows);
    for (std::size_t i = 0; i < rows; ++i) a[i * cols + j] -= m;
  }
  double scale_ref = 0;
  for (double x : a) scale_ref = std::max(scale_ref, std::abs(x));

  auto apply_gram = [&](const std::vector<double>& v) {  // A^T A v
    std::vector<double> av(rows, 0.0), out(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) av[i] += a[i * cols + j] * v[j];
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out[j] += a[i * cols + j] * av[i];
    return out;
  };

  Projection2 p;
  for (std::size_t r = 0; r < 2; ++r) {
    // Start from the residual row with the largest norm, else a basis vector.
    std::vector<double> v(cols, 0.0);
    double best = 0;
    for (std::size_t i = 0; i < rows; ++i) {
      std::vector<double> row(a.begin() + i * cols, a.begin() + (i + 1) * cols);
      orthogonalize(row, p.directions);
      if (const double nr = norm(row); nr > best) {
        best = nr;
        v = row;
      }
    }
    if (best <= 1e-300) {
      for (std::size_t j = 0; j < cols && norm(v) < 0.5; ++j) {
        std::fill(v.begin(), v.end(), 0.0);
        v[j] = 1.0;
        orthogonalize(v, p.directions);
      }
    }
    const double nv = norm(v);
    for (auto& x : v) x /= nv;

    for (int it = 0; it < 1000000; ++it) {
      std::vector<double> next = apply_gram(v);
      orthogonalize(next, p.directions);
      const double nn = norm(next);
      if (nn <= 1e-300 * std::max(1.0, scale_ref)) break;  // remaining rank exhausted
      double diff = 0;
      for (std::size_t j = 0; j < cols; ++j) {
        next[j] /= nn;
        diff = std::max(diff, std::abs(next[j] - v[j]));
      }
      v = std::move(next);
      if (diff < 1e-10) break;
    }
    for (double x : v) {
      if (std::abs(x) > 1e-12) {
        if (x < 0)
          for (auto& y : v) y = -y;
        break;
      }
    }
    double sigma2 = 0;
    for (std::size_t i = 0; i < rows; ++i) {
      double d = 0;
      for (std::size_t j = 0; j < cols; ++j) d += a[i * cols + j] * v[j];
      sigma2 += d * d;
    }
    p.singular_values[r] = std::sqrt(sigma2);
    p.directions.push_back(std::move(v));
  }

  p.coords.assign(rows, {0.0, 0.0});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t r = 0; r < 2; ++r) {
      double d = 0;
      for (std::size_t j = 0; j < cols; ++j) d += a[i * cols + j] * p.directions[r][j];
      p.coords[i][r] = d;
    }
  return p;
}

template <typename T>
Projection2 class_embedding_projection(const Segmenter<T>& model) {
  if (model.config().decoder.kind != DecoderKind::Mask) {
    throw UnsupportedError("class embedding projection needs the mask decoder; this model uses the linear head");
  }
  const Tensor<T>& cls = model.decoder().mask.cls;
  std::vector<double> m(cls.data().begin(), cls.data().end());
  return project_top2(m, cls.dim(0), cls.dim(1));
}

void write_projection_tsv(std::ostream& out, const Projection2& p, const std::vector<std::string>& names) {
  out << "class\tname\tx\ty\n";
  for (std::size_t i = 0; i < p.coords.size(); ++i) {
    out << i << "\t" << (i < names.size() ? names[i] : "class" + std::to_string(i)) << "\t"
        << format_double(p.coords[i][0]) << "\t" << format_double(p.coords[i][1]) << "\n";
  }
}

template AttentionDistances mean_attention_distance(std::span<const Tensor<float>>, std::size_t, std::size_t,
                                                    std::size_t);
template AttentionDistances mean_attention_distance(std::span<const Tensor<double>>, std::size_t, std::size_t,
                                                    std::size_t);
template AttentionDistances attention_distance(const Segmenter<float>&, std::span<const Tensor<float>>);
template AttentionDistances attention_distance(const Segmenter<double>&, std::span<const Tensor<double>>);
template Projection2 class_embedding_projection(const Segmenter<float>&);
template Projection2 class_embedding_projection(const Segmenter<double>&);

}  // namespace segmenter
