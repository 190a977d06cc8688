#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "segmenter/error.hpp"
#include "segmenter/model.hpp"

using namespace segmenter;
using testutil::micro_config;
using testutil::random_tensor;

TEST_CASE("forward produces per-pixel logits at the input resolution") {
  for (auto kind : {DecoderKind::Linear, DecoderKind::Mask}) {
    auto cfg = micro_config(kind, 3);
    Rng rng = make_stream(1, "init");
    Segmenter<float> model(cfg, rng);
    auto x = random_tensor<float>({16, 16, 3}, 2);
    CHECK(model.patch_logits(x).shape() == Shape{2, 2, 3});
    CHECK(model.forward(x).shape() == Shape{16, 16, 3});
    auto labels = model.predict(x);
    CHECK(labels.height == 16);
    for (auto l : labels.labels) CHECK(l < 3);
    CHECK_THROWS_AS(model.forward(random_tensor<float>({24, 16, 3}, 3)), ContractError);
  }
}

TEST_CASE("class probabilities sum to one per pixel") {
  auto cfg = micro_config(DecoderKind::Mask, 4);
  Rng rng = make_stream(4, "init");
  Segmenter<double> model(cfg, rng);
  auto p = class_probabilities(model.forward(random_tensor<double>({16, 16, 3}, 5)));
  for (std::size_t i = 0; i < 256; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < 4; ++k) s += p.at(i * 4 + k);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("parameter count matches the closed form") {
  for (auto kind : {DecoderKind::Linear, DecoderKind::Mask}) {
    auto cfg = micro_config(kind, 3);
    Segmenter<float> model(cfg);
    CHECK(model.parameter_count() == model_param_count(cfg));
  }
}

TEST_CASE("same seed gives identical models, different seeds differ") {
  auto cfg = micro_config(DecoderKind::Mask, 3);
  Rng a = make_stream(6, "init"), b = make_stream(6, "init"), c = make_stream(7, "init");
  Segmenter<float> ma(cfg, a), mb(cfg, b), mc(cfg, c);
  auto pa = ma.named_parameters(), pb = mb.named_parameters(), pc = mc.named_parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pa[i].second->numel(); ++j) {
      CHECK(pa[i].second->at(j) == pb[i].second->at(j));
      any_diff |= pa[i].second->at(j) != pc[i].second->at(j);
    }
  }
  CHECK(any_diff);
}

TEST_CASE("convert and clone copy every value") {
  auto cfg = micro_config(DecoderKind::Mask, 3);
  Rng rng = make_stream(8, "init");
  Segmenter<float> model(cfg, rng);
  auto twin = model.clone();
  auto wide = convert<double>(model);
  auto back = convert<float>(wide);
  auto x = random_tensor<float>({16, 16, 3}, 9);
  auto y0 = model.forward(x), y1 = twin.forward(x), y2 = back.forward(x);
  for (std::size_t i = 0; i < y0.numel(); ++i) {
    CHECK(y0.at(i) == y1.at(i));
    CHECK(y0.at(i) == y2.at(i));
  }
}

TEST_CASE("resize_input resamples position embeddings") {
  auto cfg = micro_config(DecoderKind::Linear, 3);
  Rng rng = make_stream(10, "init");
  Segmenter<float> model(cfg, rng);
  model.resize_input(32, 24);
  CHECK(model.config().encoder.image_h == 32);
  CHECK(model.encoder().pos.shape() == Shape{12, 32});
  CHECK(model.forward(random_tensor<float>({32, 24, 3}, 11)).shape() == Shape{32, 24, 3});
  CHECK_THROWS_AS(model.resize_input(30, 24), ConfigError);
}

TEST_CASE("segmentation loss checks the label map size") {
  auto logits = random_tensor<float>({4, 4, 3}, 12);
  CHECK_THROWS_AS(segmentation_loss(logits, LabelMap(4, 5)), DimensionError);
  auto ce = segmentation_loss(logits, LabelMap(4, 4, 1));
  CHECK(ce.counted == 16);
  CHECK(ce.loss.item() > 0);
}

TEST_CASE("train mode differs from eval mode only through random draws") {
  auto cfg = micro_config(DecoderKind::Mask, 3);
  cfg.encoder.stochastic_depth = 0.0;
  Rng rng = make_stream(13, "init");
  Segmenter<float> model(cfg, rng);
  auto x = random_tensor<float>({16, 16, 3}, 14);
  Rng depth = make_stream(15, "stochastic_depth");
  ForwardContext<float> train{Mode::Train, &depth, nullptr, nullptr};
  auto a = model.forward(x, train);
  auto b = model.forward(x);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
}
