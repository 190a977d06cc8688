#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "segmenter/checkpoint.hpp"
#include "segmenter/error.hpp"
#include "segmenter/synthetic.hpp"
#include "segmenter/train.hpp"

using namespace segmenter;
using testutil::micro_config;
using testutil::random_tensor;

namespace {

std::vector<Sample> tiny_dataset(std::size_t n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_images = n;
  spec.height = spec.width = 16;
  spec.min_size = 4;
  spec.max_size = 10;
  spec.seed = seed;
  std::vector<Sample> out;
  for (auto& s : generate_synthetic_samples(spec)) out.push_back(std::move(s.sample));
  return out;
}

TrainConfig tiny_train(std::size_t iterations) {
  TrainConfig t;
  t.iterations = iterations;
  t.batch_size = 2;
  t.base_lr = 0.01;
  t.seed = 3;
  t.min_scale = 0.75;
  t.max_scale = 1.5;
  return t;
}

std::vector<float> flatten(const Segmenter<float>& m) {
  std::vector<float> out;
  for (const auto& [name, t] : m.named_parameters()) out.insert(out.end(), t->data().begin(), t->data().end());
  return out;
}

}  // namespace

TEST_CASE("poly schedule") {
  CHECK(poly_lr(1e-3, 0, 100) == 1e-3);
  CHECK(poly_lr(1e-3, 100, 100) == 0.0);
  CHECK(poly_lr(0.5, 25, 100, 0.9) == doctest::Approx(0.5 * std::pow(0.75, 0.9)).epsilon(1e-15));
  CHECK_THROWS_AS(poly_lr(1e-3, 101, 100), ContractError);
  CHECK_THROWS_AS(poly_lr(1e-3, 0, 0), ContractError);
  double prev = 1.0;
  for (std::size_t n = 0; n <= 50; ++n) {
    const double lr = poly_lr(1.0, n, 50);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("sgd step subtracts lr times gradient and clears gradients") {
  auto cfg = micro_config(DecoderKind::Linear, 3);
  Rng rng = make_stream(1, "init");
  Segmenter<double> model(cfg, rng);
  CHECK_THROWS_AS(sgd_step(model, 0.1), ContractError);

  auto x = random_tensor<double>({16, 16, 3}, 2);
  model.zero_grad();
  segmentation_loss(model.forward(x), LabelMap(16, 16, 1)).loss.backward();
  std::vector<std::vector<double>> before, grads;
  for (auto& [name, t] : model.named_parameters()) {
    before.emplace_back(t->data().begin(), t->data().end());
    grads.emplace_back(t->grad().begin(), t->grad().end());
  }
  sgd_step(model, 0.1);
  auto params = model.named_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < before[i].size(); ++j) {
      CHECK(params[i].second->at(j) == before[i][j] - 0.1 * grads[i][j]);
      CHECK(params[i].second->grad()[j] == 0.0);
    }
  }
}

TEST_CASE("momentum zero equals plain sgd; momentum accumulates velocity") {
  auto cfg = micro_config(DecoderKind::Linear, 3);
  Rng r1 = make_stream(4, "init"), r2 = make_stream(4, "init"), r3 = make_stream(4, "init");
  Segmenter<double> a(cfg, r1), b(cfg, r2), c(cfg, r3);
  Sgd<double> plain(0.0), heavy(0.9);
  auto x = random_tensor<double>({16, 16, 3}, 5);
  for (int step = 0; step < 2; ++step) {
    for (auto* m : {&a, &b, &c}) {
      m->zero_grad();
      segmentation_loss(m->forward(x), LabelMap(16, 16, 2)).loss.backward();
    }
    sgd_step(a, 0.1);
    plain.step(b, 0.1);
    heavy.step(c, 0.1);
  }
  auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].second->numel(); ++j) {
      CHECK(pa[i].second->at(j) == pb[i].second->at(j));
      differs |= pa[i].second->at(j) != pc[i].second->at(j);
    }
  CHECK(differs);
}

TEST_CASE("nearest label resize never invents classes") {
  LabelMap l(5, 7);
  for (std::size_t i = 0; i < l.labels.size(); ++i) l.labels[i] = std::uint8_t(i % 3 == 0 ? 255 : i % 4);
  auto same = resize_labels_nearest(l, 5, 7);
  CHECK(same == l);
  const std::set<std::uint8_t> in(l.labels.begin(), l.labels.end());
  for (auto [h, w] : {std::pair{3u, 4u}, {11u, 13u}, {1u, 1u}}) {
    auto r = resize_labels_nearest(l, h, w);
    for (auto v : r.labels) CHECK(in.count(v));
  }
}

TEST_CASE("augmentation") {
  auto data = tiny_dataset(1, 7);
  auto cfg = micro_config(DecoderKind::Mask, 3);
  SUBCASE("identity settings reproduce the normalized sample") {
    AugmentOptions opts{16, 16, 1.0, 1.0, 0.0};
    Rng rng = make_stream(1, "augment");
    auto a = augment(data[0], cfg, opts, rng);
    auto ref = normalize_image<float>(data[0].image, cfg.mean, cfg.std);
    for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(a.image.at(i) == ref.at(i));
    CHECK(a.labels == data[0].labels);
  }
  SUBCASE("forced flip mirrors image and labels") {
    AugmentOptions opts{16, 16, 1.0, 1.0, 1.0};
    Rng rng = make_stream(1, "augment");
    auto a = augment(data[0], cfg, opts, rng);
    CHECK(a.flipped);
    CHECK(a.labels == flip_labels(data[0].labels));
  }
  SUBCASE("random scales keep the crop size and the label set") {
    AugmentOptions opts{16, 16, 0.5, 2.0, 0.5};
    const std::set<std::uint8_t> in(data[0].labels.labels.begin(), data[0].labels.labels.end());
    std::set<bool> flips;
    for (std::uint64_t i = 0; i < 50; ++i) {
      Rng rng = make_stream(2, "augment", i);
      auto a = augment(data[0], cfg, opts, rng);
      CHECK(a.image.shape() == Shape{16, 16, 3});
      CHECK(a.scale >= 0.5);
      CHECK(a.scale <= 2.0);
      flips.insert(a.flipped);
      for (auto v : a.labels.labels) CHECK((in.count(v) || v == kIgnoreLabel));
      if (a.scale < 0.9) CHECK(a.labels.at(15, 15) == kIgnoreLabel);  // padded corner
    }
    CHECK(flips.size() == 2);
  }
  SUBCASE("same stream, same result") {
    AugmentOptions opts{16, 16, 0.5, 2.0, 0.5};
    Rng r1 = make_stream(3, "augment", 9), r2 = make_stream(3, "augment", 9);
    auto a = augment(data[0], cfg, opts, r1), b = augment(data[0], cfg, opts, r2);
    CHECK(a.labels == b.labels);
    CHECK(a.offset_x == b.offset_x);
  }
}

TEST_CASE("metrics log line format") {
  CHECK(format_record({3, 0.001, 0.5, -1}) == "iter=3 lr=0.001 loss=0.5");
  CHECK(format_record({10, 0.0005, 0.25, 0.75}) == "iter=10 lr=0.0005 loss=0.25 miou=0.75");
}

TEST_CASE("training lowers the loss and is deterministic") {
  auto data = tiny_dataset(4, 11);
  auto cfg = micro_config(DecoderKind::Mask, 3);
  cfg.encoder.stochastic_depth = 0.1;
  auto run = [&] {
    Rng rng = make_stream(3, "init");
    Segmenter<float> m(cfg, rng);
    auto r = train_loop(m, data, tiny_train(30));
    return std::pair{flatten(m), r};
  };
  auto [p1, r1] = run();
  auto [p2, r2] = run();
  CHECK(p1 == p2);
  REQUIRE(r1.records.size() == 30);
  CHECK(r1.final_config.completed_iterations == 30);
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) {
    first += r1.records[i].loss;
    last += r1.records[25 + i].loss;
  }
  CHECK(last < first);
}

TEST_CASE("a run resumed from a checkpoint matches an uninterrupted run") {
  auto data = tiny_dataset(3, 12);
  auto cfg = micro_config(DecoderKind::Mask, 3);
  cfg.encoder.stochastic_depth = 0.2;
  const TrainConfig t = tiny_train(8);
  Rng r1 = make_stream(3, "init"), r2 = make_stream(3, "init");
  Segmenter<float> full(cfg, r1), part(cfg, r2);
  const auto full_run = train_loop(full, data, t);

  TrainHooks stop;
  stop.stop_after = 5;
  const auto head = train_loop(part, data, t, stop);
  REQUIRE(head.final_config.completed_iterations == 5);
  testutil::TempDir dir("resume");
  const auto path = dir.path / "head.ckpt";
  save_checkpoint(part, head.final_config, path);

  LoadedCheckpoint ck = load_checkpoint(path);
  CHECK(ck.config.train.completed_iterations == 5);
  const auto tail = train_loop(ck.model, data, ck.config.train);
  REQUIRE(tail.records.size() == 3);
  CHECK(tail.records.front().iteration == 6);
  CHECK(flatten(ck.model) == flatten(full));
  CHECK(tail.records.back().loss == full_run.records.back().loss);
}

TEST_CASE("a non-finite loss aborts with a snapshot") {
  auto data = tiny_dataset(2, 13);
  auto cfg = micro_config(DecoderKind::Linear, 3);
  Rng rng = make_stream(3, "init");
  Segmenter<float> m(cfg, rng);
  TrainConfig t = tiny_train(20);
  t.base_lr = 1e30;
  testutil::TempDir dir("diverge");
  TrainHooks hooks;
  hooks.divergence_snapshot = (dir.path / "bad.ckpt").string();
  try {
    train_loop(m, data, t, hooks);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.snapshot_path() == hooks.divergence_snapshot);
    CHECK(std::filesystem::exists(hooks.divergence_snapshot));
  }
}

TEST_CASE("train config validation") {
  TrainConfig t = tiny_train(10);
  t.weight_decay = 0.01;
  auto data = tiny_dataset(1, 14);
  Rng rng = make_stream(3, "init");
  Segmenter<float> m(micro_config(DecoderKind::Linear, 3), rng);
  CHECK_THROWS_AS(train_loop(m, data, t), ConfigError);
  CHECK_THROWS_AS(train_loop(m, std::span<const Sample>(), tiny_train(1)), ContractError);
}
