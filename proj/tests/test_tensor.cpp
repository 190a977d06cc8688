#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "segmenter/error.hpp"

using namespace segmenter;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

constexpr double kGradTol = 1e-6;

Tensor<double> param(Shape s, std::uint64_t seed) {
  auto t = random_tensor<double>(std::move(s), seed);
  t.set_requires_grad(true);
  return t;
}

// Fixed random weights so every output element contributes to the scalar.
Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed = 99) {
  return sum(mul(y, random_tensor<double>(y.shape(), seed)));
}

// Independent half-pixel bilinear sampler.
double bilinear_ref(const Tensor<double>& x, double oy, double ox, std::size_t out_h, std::size_t out_w,
                    std::size_t c) {
  const std::size_t h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  auto coord = [](double o, std::size_t in, std::size_t out, std::size_t& i0, std::size_t& i1, double& f) {
    double s = (o + 0.5) * double(in) / double(out) - 0.5;
    s = std::clamp(s, 0.0, double(in - 1));
    i0 = std::size_t(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    f = s - double(i0);
  };
  std::size_t y0, y1, x0, x1;
  double fy, fx;
  coord(oy, h, out_h, y0, y1, fy);
  coord(ox, w, out_w, x0, x1, fx);
  auto at = [&](std::size_t y, std::size_t xx) { return x.at((y * w + xx) * ch + c); };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

}  // namespace

TEST_CASE("construction and shape checks") {
  auto t = Tensor<float>::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor<float>::from_data({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(matmul(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({2, 3})), DimensionError);
  CHECK(Tensor<double>::scalar(4.0).item() == 4.0);
}

TEST_CASE("matmul forward") {
  auto a = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<double>::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{58, 64, 139, 154});
  auto d = matmul_nt(a, a);
  CHECK(d.at(1) == 32.0);
}

TEST_CASE("gradients of linear algebra ops") {
  auto a = param({3, 4}, 1), b = param({4, 5}, 2), w = param({5, 4}, 3), bias = param({5}, 4);
  CHECK(grad_check(a, [&] { return weighted_sum(matmul(a, b)); }) < kGradTol);
  CHECK(grad_check(b, [&] { return weighted_sum(matmul(a, b)); }) < kGradTol);
  CHECK(grad_check(a, [&] { return weighted_sum(matmul_nt(a, w)); }) < kGradTol);
  CHECK(grad_check(w, [&] { return weighted_sum(matmul_nt(a, w)); }) < kGradTol);
  CHECK(grad_check(w, [&] { return weighted_sum(linear(a, w, bias)); }) < kGradTol);
  CHECK(grad_check(bias, [&] { return weighted_sum(linear(a, w, bias)); }) < kGradTol);
  CHECK(grad_check(a, [&] { return weighted_sum(linear(a, w, Tensor<double>())); }) < kGradTol);
  CHECK(grad_check(a, [&] { return weighted_sum(transpose(a)); }) < kGradTol);
}

TEST_CASE("gradients of elementwise and shape ops") {
  auto a = param({3, 4}, 5), b = param({3, 4}, 6), c = param({2, 4}, 7);
  CHECK(grad_check(a, [&] { return weighted_sum(add(a, b)); }) < kGradTol);
  CHECK(grad_check(a, [&] { return weighted_sum(mul(a, a)); }) < kGradTol);
  CHECK(grad_check(a, [&] { return weighted_sum(scale(a, 2.5)); }) < kGradTol);
  CHECK(grad_check(a, [&] { return weighted_sum(reshape(a, {2, 6})); }) < kGradTol);
  const std::vector<Tensor<double>> rows{a, c};
  CHECK(grad_check(c, [&] { return weighted_sum(concat<double>(rows, 0)); }) < kGradTol);
  const std::vector<Tensor<double>> cols{a, b};
  CHECK(grad_check(b, [&] { return weighted_sum(concat<double>(cols, 1)); }) < kGradTol);
  CHECK(grad_check(a, [&] { return weighted_sum(slice(a, 1, 1, 2)); }) < kGradTol);
  CHECK(grad_check(a, [&] { return weighted_sum(slice(a, 0, 2, 1)); }) < kGradTol);
  CHECK(grad_check(a, [&] { return mean(a); }) < kGradTol);
}

TEST_CASE("concat and slice forward") {
  auto a = Tensor<float>::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<float>::from_data({2, 1}, {5, 6});
  const std::vector<Tensor<float>> parts{a, b};
  auto c = concat<float>(parts, 1);
  CHECK(std::vector<float>(c.data().begin(), c.data().end()) == std::vector<float>{1, 2, 5, 3, 4, 6});
  auto s = slice(c, 1, 1, 2);
  CHECK(std::vector<float>(s.data().begin(), s.data().end()) == std::vector<float>{2, 5, 4, 6});
}

TEST_CASE("softmax rows sum to one and have correct gradient") {
  auto x = param({4, 5}, 8);
  auto p = softmax(x, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 5; ++k) s += p.at(r * 5 + k);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(grad_check(x, [&] { return weighted_sum(softmax(x, 1)); }) < kGradTol);
  CHECK(grad_check(x, [&] { return weighted_sum(softmax(x, 0)); }) < kGradTol);
  auto big = Tensor<double>::from_data({1, 2}, {1000.0, 1000.0});
  CHECK(softmax(big, 1).at(0) == doctest::Approx(0.5));
  auto with_nan = Tensor<float>::from_data({1, 2}, {std::numeric_limits<float>::quiet_NaN(), 1.0f});
  CHECK(std::isnan(softmax(with_nan, 1).at(1)));
}

TEST_CASE("layer norm forward and gradients") {
  auto x = param({3, 6}, 9), g = param({6}, 10), b = param({6}, 11);
  auto y = layer_norm(x, Tensor<double>::full({6}, 1.0), Tensor<double>::zeros({6}), 1e-6);
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 6; ++i) m += y.at(r * 6 + i) / 6;
    for (std::size_t i = 0; i < 6; ++i) v += (y.at(r * 6 + i) - m) * (y.at(r * 6 + i) - m) / 6;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
  CHECK(grad_check(x, [&] { return weighted_sum(layer_norm(x, g, b, 1e-6)); }) < kGradTol);
  CHECK(grad_check(g, [&] { return weighted_sum(layer_norm(x, g, b, 1e-6)); }) < kGradTol);
  CHECK(grad_check(b, [&] { return weighted_sum(layer_norm(x, g, b, 1e-6)); }) < kGradTol);
}

TEST_CASE("gelu uses the tanh approximation") {
  auto x = Tensor<double>::from_data({4}, {-2.0, -0.5, 0.0, 1.5});
  auto y = gelu(x);
  for (std::size_t i = 0; i < 4; ++i) {
    const double v = x.at(i);
    const double ref = 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v)));
    CHECK(y.at(i) == doctest::Approx(ref).epsilon(1e-14));
  }
  auto p = param({3, 4}, 12);
  CHECK(grad_check(p, [&] { return weighted_sum(gelu(p)); }) < kGradTol);
}

TEST_CASE("l2 normalize") {
  auto x = param({3, 4}, 13);
  auto y = l2_normalize(x, 1);
  for (std::size_t r = 0; r < 3; ++r) {
    double n = 0;
    for (std::size_t i = 0; i < 4; ++i) n += y.at(r * 4 + i) * y.at(r * 4 + i);
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(grad_check(x, [&] { return weighted_sum(l2_normalize(x, 1)); }) < kGradTol);
  auto zero = Tensor<double>::zeros({1, 3});
  const auto normalized = l2_normalize(zero, 1);
  for (double v : normalized.data()) CHECK(v == 0.0);
}

TEST_CASE("cross entropy matches a log-sum-exp oracle and skips ignored rows") {
  auto logits = param({4, 3}, 14);
  const std::vector<std::uint8_t> labels{0, 2, 255, 1};
  auto ce = cross_entropy(logits, labels);
  double ref = 0;
  for (std::size_t r : {0u, 1u, 3u}) {
    double m = -1e300, s = 0;
    for (std::size_t k = 0; k < 3; ++k) m = std::max(m, logits.at(r * 3 + k));
    for (std::size_t k = 0; k < 3; ++k) s += std::exp(logits.at(r * 3 + k) - m);
    ref += -(logits.at(r * 3 + labels[r]) - m - std::log(s));
  }
  CHECK(ce.counted == 3);
  CHECK(ce.loss.item() == doctest::Approx(ref / 3).epsilon(1e-12));
  CHECK(grad_check(logits, [&] { return cross_entropy(logits, labels).loss; }) < kGradTol);

  const std::vector<std::uint8_t> ignored(4, 255);
  auto none = cross_entropy(logits, ignored);
  CHECK(none.all_ignored);
  CHECK(none.loss.item() == 0.0);
  const std::vector<std::uint8_t> bad{0, 1, 7, 1};
  CHECK_THROWS(cross_entropy(logits, bad));
}

TEST_CASE("bilinear resize matches a half-pixel oracle") {
  auto x = random_tensor<double>({3, 5, 2}, 15);
  for (auto [oh, ow] : {std::pair{6u, 10u}, {3u, 5u}, {2u, 3u}, {7u, 4u}}) {
    auto y = bilinear_resize(x, oh, ow);
    REQUIRE(y.shape() == Shape{oh, ow, 2});
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t c = 0; c < 2; ++c)
          CHECK(y.at((i * ow + j) * 2 + c) == doctest::Approx(bilinear_ref(x, double(i), double(j), oh, ow, c)).epsilon(1e-12));
  }
  auto same = bilinear_resize(x, 3, 5);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same.at(i) == x.at(i));
  auto p = param({2, 3, 2}, 16);
  CHECK(grad_check(p, [&] { return weighted_sum(bilinear_resize(p, 5, 4)); }) < kGradTol);
  CHECK(grad_check(p, [&] { return weighted_sum(bilinear_resize(p, 1, 2)); }) < kGradTol);
}

TEST_CASE("gather and flip") {
  auto x = param({2, 3, 1}, 17);
  auto f = flip_horizontal(x);
  CHECK(f.at(0) == x.at(2));
  CHECK(f.at(3) == x.at(5));
  CHECK(grad_check(x, [&] { return weighted_sum(flip_horizontal(x)); }) < kGradTol);
  auto g = gather(x, {5, 0, 0}, {3});
  CHECK(g.at(0) == x.at(5));
  CHECK(grad_check(x, [&] { return weighted_sum(gather(x, {5, 0, 0, 2}, {4})); }) < kGradTol);
}

TEST_CASE("backward semantics") {
  auto a = param({2, 2}, 18);
  SUBCASE("leaf gradients accumulate across calls") {
    sum(a).backward();
    sum(a).backward();
    for (double g : a.grad()) CHECK(g == 2.0);
  }
  SUBCASE("a released graph cannot be walked twice") {
    auto y = sum(mul(a, a));
    y.backward();
    CHECK_THROWS_AS(y.backward(), ContractError);
  }
  SUBCASE("retain_graph allows a second pass") {
    auto y = sum(mul(a, a));
    y.backward(true);
    const std::vector<double> first(a.grad().begin(), a.grad().end());
    y.backward();
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(a.grad()[i] == doctest::Approx(2 * first[i]));
  }
  SUBCASE("no graph is recorded under NoGradGuard") {
    NoGradGuard g;
    auto y = sum(mul(a, a));
    CHECK(y.is_leaf());
    CHECK_FALSE(y.requires_grad());
  }
  SUBCASE("backward needs a scalar") { CHECK_THROWS(mul(a, a).backward()); }
  SUBCASE("op outputs are read-only") { CHECK_THROWS_AS(mul(a, a).mutable_data(), ContractError); }
  SUBCASE("shared subexpressions sum their contributions") {
    auto y = mul(a, a);
    auto z = sum(add(y, y));
    z.backward();
    for (std::size_t i = 0; i < 4; ++i) CHECK(a.grad()[i] == doctest::Approx(4 * a.at(i)));
  }
}

TEST_CASE("float and double agree on a composite expression") {
  auto xd = random_tensor<double>({4, 6}, 19);
  auto xf = xd.cast<float>();
  auto gd = Tensor<double>::full({6}, 1.0), bd = Tensor<double>::zeros({6});
  auto yd = softmax(gelu(layer_norm(xd, gd, bd, 1e-6)), 1);
  auto yf = softmax(gelu(layer_norm(xf, gd.cast<float>(), bd.cast<float>(), 1e-6f)), 1);
  for (std::size_t i = 0; i < yd.numel(); ++i) CHECK(yf.at(i) == doctest::Approx(yd.at(i)).epsilon(1e-5));
}
