// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any fails. `acceptance 3 5` runs a subset.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "segmenter/analysis.hpp"
#include "segmenter/checkpoint.hpp"
#include "segmenter/cli.hpp"
#include "segmenter/inference.hpp"
#include "segmenter/metrics.hpp"
#include "segmenter/synthetic.hpp"
#include "segmenter/train.hpp"

using namespace segmenter;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng = make_stream(seed, "acceptance", 0);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = T(uniform(rng, lo, hi));
  return Tensor<T>::from_data(std::move(shape), std::move(v));
}

std::vector<Sample> samples_of(const SyntheticSpec& spec) {
  std::vector<Sample> out;
  for (auto& s : generate_synthetic_samples(spec)) out.push_back(std::move(s.sample));
  return out;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

ModelConfig base_model(std::size_t depth, std::size_t dim, std::size_t heads, std::size_t patch, std::size_t crop,
                       std::size_t classes, DecoderKind kind) {
  ModelConfig m;
  m.classes = classes;
  m.encoder.image_h = m.encoder.image_w = crop;
  m.encoder.patch_size = patch;
  m.encoder.depth = depth;
  m.encoder.token_size = dim;
  m.encoder.heads = heads;
  m.encoder.mlp_hidden = 4 * dim;
  m.decoder.kind = kind;
  return m;
}

// Trains from the "init" stream of `seed` and returns held-out single-scale mIoU.
double train_and_score(const ModelConfig& mcfg, TrainConfig tcfg, const std::vector<Sample>& train,
                       const std::vector<Sample>& val, std::uint64_t seed) {
  tcfg.seed = seed;
  Rng init = make_stream(seed, "init", 0);
  Segmenter<float> model(mcfg, init);
  train_loop(model, train, tcfg);
  return miou(evaluate(model, val).confusion);
}

// ---- 1 ------------------------------------------------------------------
Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  std::size_t checked = 0;
  for (auto kind : {DecoderKind::Linear, DecoderKind::Mask}) {
    ModelConfig cfg = base_model(2, 32, 2, 8, 16, 3, kind);
    cfg.encoder.stochastic_depth = 0.0;
    Rng rng = make_stream(1, "init");
    Segmenter<double> model(cfg, rng);
    // Larger-than-default weights so every gradient is well away from zero.
    for (auto& [name, t] : model.named_parameters()) {
      Rng r = make_stream(2, name);
      for (double& v : t->mutable_data()) v += 0.1 * normal(r);
    }
    const auto image = random_tensor<double>({16, 16, 3}, 3);
    LabelMap labels(16, 16);
    Rng lr = make_stream(4, "labels");
    for (auto& l : labels.labels) l = std::uint8_t(uniform(lr, 0, 3));
    labels.labels[7] = kIgnoreLabel;
    auto loss = [&] { return segmentation_loss(model.forward(image), labels).loss; };

    model.zero_grad();
    loss().backward();
    for (auto& [name, t] : model.named_parameters()) {
      const std::vector<double> analytic(t->grad().begin(), t->grad().end());
      auto data = t->mutable_data();
      double diff = 0, scale = 0;
      NoGradGuard guard;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i], h = 1e-6;
        data[i] = saved + h;
        const double plus = loss().item();
        data[i] = saved - h;
        const double minus = loss().item();
        data[i] = saved;
        const double numeric = (plus - minus) / (2 * h);
        diff = std::max(diff, std::abs(numeric - analytic[i]));
        scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
        ++checked;
      }
      // Floor keeps structurally-zero gradients (key bias under softmax) from dividing noise by noise.
      const double rel = diff / std::max(scale, 1e-3);
      if (rel > worst) {
        worst = rel;
        worst_name = std::string(decoder_kind_name(kind)) + ":" + name;
      }
    }
  }
  const double secs = seconds_since(t0);
  char buf[256];
  std::snprintf(buf, sizeof buf, "max rel err %.3g (%s) over %zu entries, %.1f s", worst, worst_name.c_str(), checked,
                secs);
  return {worst < 1e-4 && secs < 120, buf};
}

// ---- 2 ------------------------------------------------------------------
Outcome exclusivity() {
  double worst = 0;
  for (auto kind : {DecoderKind::Linear, DecoderKind::Mask}) {
    const ModelConfig cfg = base_model(2, 32, 2, 8, 16, 5, kind);
    for (std::uint64_t i = 0; i < 100; ++i) {
      Rng rng = make_stream(i, "init");
      Segmenter<float> model(cfg, rng);
      const auto p = class_probabilities(model.forward(random_tensor<float>({16, 16, 3}, 100 + i, -3, 3)));
      for (std::size_t px = 0; px < 256; ++px) {
        double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += p.at(px * 5 + k);
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "max |sum_k p - 1| = %.3g over 200 forwards", worst);
  return {worst <= 1e-6, buf};
}

// ---- 3 ------------------------------------------------------------------
SyntheticSpec overfit_spec() {
  SyntheticSpec s;
  s.n_images = 8;
  s.height = s.width = 32;
  s.classes = 3;
  s.kinds = {ShapeKind::Rectangle};
  s.min_size = 8;
  s.max_size = 24;
  s.snap = 8;  // object boundaries on the 8 px patch grid
  s.seed = 1;
  return s;
}

Outcome overfit() {
  const auto t0 = Clock::now();
  const auto data = samples_of(overfit_spec());
  ModelConfig cfg = base_model(4, 64, 4, 8, 32, 3, DecoderKind::Mask);
  cfg.encoder.stochastic_depth = 0.0;
  TrainConfig t;
  t.base_lr = 1e-3;
  t.iterations = 500;
  t.batch_size = 8;
  t.min_scale = t.max_scale = 1.0;
  t.flip_prob = 0.0;
  t.seed = 1;
  Rng init = make_stream(t.seed, "init", 0);
  Segmenter<float> model(cfg, init);
  const auto result = train_loop(model, data, t);
  const double final_loss = result.records.back().loss;
  const double train_miou = miou(evaluate(model, data).confusion);
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "loss %.4f, train mIoU %.4f, %.1f s", final_loss, train_miou, secs);
  return {final_loss < 0.05 && train_miou >= 0.95 && secs < 300, buf};
}

// ---- 4 ------------------------------------------------------------------
Outcome decoder_trend() {
  SyntheticSpec spec;
  spec.n_images = 64;
  spec.height = spec.width = 32;
  spec.classes = 4;
  spec.kinds = {ShapeKind::Rectangle, ShapeKind::Disk};
  spec.min_size = 8;
  spec.max_size = 20;
  spec.seed = 10;
  const auto train = samples_of(spec);
  spec.n_images = 32;
  spec.seed = 11;
  const auto val = samples_of(spec);
  TrainConfig t;
  t.base_lr = 0.01;
  t.iterations = 400;
  t.batch_size = 8;
  double linear = 0, mask = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    linear += train_and_score(base_model(4, 64, 4, 8, 32, 4, DecoderKind::Linear), t, train, val, seed) / 3;
    mask += train_and_score(base_model(4, 64, 4, 8, 32, 4, DecoderKind::Mask), t, train, val, seed) / 3;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "held-out mIoU mask %.4f vs linear %.4f (3 seeds)", mask, linear);
  return {mask >= linear - 0.005, buf};
}

// ---- 5 ------------------------------------------------------------------
Outcome patch_trend() {
  SyntheticSpec spec;
  spec.n_images = 64;
  spec.height = spec.width = 32;
  spec.classes = 3;
  spec.kinds = {ShapeKind::Stripe, ShapeKind::Rectangle};
  spec.stripe_width = 2;
  spec.min_size = 8;
  spec.max_size = 16;
  spec.min_shapes = 2;
  spec.max_shapes = 4;
  spec.seed = 20;
  const auto train = samples_of(spec);
  spec.n_images = 32;
  spec.seed = 21;
  const auto val = samples_of(spec);
  TrainConfig t;
  t.base_lr = 0.01;
  t.iterations = 400;
  t.batch_size = 8;
  std::vector<double> score;
  for (std::size_t p : {4, 8, 16}) {
    double m = 0;
    for (std::uint64_t seed : {1, 2, 3})
      m += train_and_score(base_model(2, 64, 4, p, 32, 3, DecoderKind::Linear), t, train, val, seed) / 3;
    score.push_back(m);
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "held-out mIoU P=4 %.4f, P=8 %.4f, P=16 %.4f (3 seeds)", score[0], score[1], score[2]);
  return {score[0] >= score[1] - 0.01 && score[1] >= score[2] - 0.01, buf};
}

// ---- 6 ------------------------------------------------------------------
Outcome throughput() {
  std::vector<double> ips;
  std::string detail;
  for (std::size_t p : {32, 16, 8}) {
    ModelConfig cfg = base_model(12, 192, 3, p, 128, 150, DecoderKind::Mask);
    Rng rng = make_stream(1, "init");
    Segmenter<float> model(cfg, rng);
    const auto image = random_tensor<float>({128, 128, 3}, 2);
    NoGradGuard guard;
    model.forward(image);
    std::vector<double> times;
    for (int r = 0; r < 5; ++r) {
      const auto t0 = Clock::now();
      model.forward(image);
      times.push_back(seconds_since(t0));
    }
    std::sort(times.begin(), times.end());
    ips.push_back(1.0 / times[2]);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%sP=%zu %.2f im/s", detail.empty() ? "" : ", ", p, ips.back());
    detail += buf;
  }
  return {ips[0] > ips[1] && ips[1] > ips[2], detail + " (Seg-Ti shape, 128x128, median of 5)"};
}

// ---- 7 ------------------------------------------------------------------
Outcome parameter_counts() {
  const std::pair<const char*, double> expected[] = {{"Ti", 6e6}, {"S", 22e6}, {"B", 86e6}, {"L", 307e6}};
  bool ok = true;
  std::string detail;
  for (auto [name, target] : expected) {
    ModelConfig cfg;
    cfg.classes = 150;
    apply_variant(cfg, name);
    std::size_t encoder_params = 0;
    {
      Segmenter<float> model(cfg);
      for (const auto& [pname, t] : model.named_parameters())
        if (pname.rfind("encoder.", 0) == 0) encoder_params += t->numel();
    }
    const double rel = std::abs(double(encoder_params) - target) / target;
    ok &= rel <= 0.15;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s%s %.1fM (%+.1f%%)", detail.empty() ? "" : ", ", name, encoder_params / 1e6,
                  100 * (double(encoder_params) - target) / target);
    detail += buf;
  }
  return {ok, detail + " encoder params at 512x512"};
}

// ---- 8 ------------------------------------------------------------------
Outcome poly_schedule() {
  Rng rng = make_stream(8, "poly");
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t total = 1 + std::size_t(uniform(rng, 0, 200000));
    const std::size_t n = std::min(total, std::size_t(uniform(rng, 0, double(total + 1))));
    const double base = uniform(rng, 1e-5, 1e-1);
    const double ref = base * std::exp(0.9 * std::log1p(-double(n) / double(total)));
    const double got = poly_lr(base, n, total, 0.9);
    worst = std::max(worst, n == total ? std::abs(got) : std::abs(got - ref));
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "max abs deviation %.3g at 1000 points", worst);
  return {worst <= 1e-12, buf};
}

// ---- 9 ------------------------------------------------------------------
Outcome pipeline_identities() {
  const ModelConfig cfg = base_model(2, 32, 2, 8, 16, 3, DecoderKind::Mask);
  Rng rng = make_stream(9, "init");
  Segmenter<float> model(cfg, rng);
  const auto image = random_tensor<float>({16, 16, 3}, 10);
  const auto direct = model.forward(image);
  const auto windowed = sliding_window_logits(model, image);
  double sw = 0;
  for (std::size_t i = 0; i < direct.numel(); ++i) sw = std::max(sw, double(std::abs(direct.at(i) - windowed.at(i))));

  MultiscaleOptions single;
  single.scales = {1.0};
  single.flip = false;
  const bool ms_equal = multiscale_predict(model, image, single) == model.predict(image);

  const auto dir = std::filesystem::temp_directory_path() / "segmenter_acceptance_ckpt";
  std::filesystem::create_directories(dir);
  save_checkpoint(model, TrainConfig{}, dir / "m.ckpt");
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  const auto again = loaded.model.forward(image);
  bool bitwise = true;
  for (std::size_t i = 0; i < direct.numel(); ++i) bitwise &= direct.at(i) == again.at(i);
  std::filesystem::remove_all(dir);

  char buf[160];
  std::snprintf(buf, sizeof buf, "sliding-window max diff %.3g, multiscale{1} %s, checkpoint forward %s", sw,
                ms_equal ? "equal" : "DIFFERS", bitwise ? "bitwise equal" : "DIFFERS");
  return {sw <= 1e-6 && ms_equal && bitwise, buf};
}

// ---- 10 -----------------------------------------------------------------
Outcome oracle_equivalence() {
  std::vector<std::string> failures;
  // mIoU against per-class pixel counting.
  {
    Rng rng = make_stream(10, "miou");
    LabelMap gt(12, 12), pred(12, 12);
    for (std::size_t i = 0; i < 144; ++i) {
      gt.labels[i] = std::uint8_t(uniform(rng, 0, 4));
      pred.labels[i] = std::uint8_t(uniform(rng, 0, 4));
      if (i % 17 == 0) gt.labels[i] = kIgnoreLabel;
    }
    ConfusionMatrix cm(4);
    cm.add(pred, gt);
    double total = 0;
    int present = 0;
    for (std::uint8_t c = 0; c < 4; ++c) {
      int tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < 144; ++i) {
        if (gt.labels[i] == kIgnoreLabel) continue;
        tp += gt.labels[i] == c && pred.labels[i] == c;
        fp += gt.labels[i] != c && pred.labels[i] == c;
        fn += gt.labels[i] == c && pred.labels[i] != c;
      }
      if (tp + fp + fn) {
        total += double(tp) / (tp + fp + fn);
        ++present;
      }
    }
    if (miou(cm) != total / present) failures.push_back("miou");
  }
  // Cross-entropy against log-sum-exp.
  {
    const auto logits = random_tensor<double>({6, 4}, 11, -4, 4);
    const std::vector<std::uint8_t> labels{0, 3, 255, 1, 2, 2};
    double ref = 0;
    int n = 0;
    for (std::size_t r = 0; r < 6; ++r) {
      if (labels[r] == 255) continue;
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += std::exp(logits.at(r * 4 + k));
      ref += std::log(s) - logits.at(r * 4 + labels[r]);
      ++n;
    }
    if (std::abs(cross_entropy(logits, labels).loss.item() - ref / n) > 1e-12) failures.push_back("cross-entropy");
  }
  // Attention distance against pair enumeration on a 2x2 grid, P = 16.
  {
    const std::vector<Tensor<double>> layers{Tensor<double>::full({1, 4, 4}, 0.25)};
    const double d = mean_attention_distance<double>(layers, 2, 2, 16)[0][0];
    double total = 0;
    for (int q = 0; q < 4; ++q)
      for (int k = 0; k < 4; ++k) total += 16.0 * std::hypot(q / 2 - k / 2, q % 2 - k % 2);
    if (d != total / 16) failures.push_back("attention-distance");
  }
  // Top-2 singular values against a Gram eigensolve, K = 5, D = 8.
  double svd_err = 0;
  {
    const auto m = random_tensor<double>({5, 8}, 12);
    const std::vector<double> v(m.data().begin(), m.data().end());
    const auto p = project_top2(v, 5, 8);
    Eigen::MatrixXd a(5, 8);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 8; ++j) a(i, j) = v[i * 8 + j];
    a.rowwise() -= a.colwise().mean();
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a.transpose() * a).eigenvalues();
    svd_err = std::max(std::abs(p.singular_values[0] - std::sqrt(ev(7))), std::abs(p.singular_values[1] - std::sqrt(ev(6))));
    if (svd_err > 1e-8) failures.push_back("svd");
  }
  std::string detail = failures.empty() ? "miou, cross-entropy, attention-distance, svd all match" : "mismatch:";
  for (const auto& f : failures) detail += " " + f;
  char buf[64];
  std::snprintf(buf, sizeof buf, " (svd err %.2g)", svd_err);
  return {failures.empty(), detail + buf};
}

// ---- 11 -----------------------------------------------------------------
Outcome stochastic_depth() {
  ModelConfig cfg = base_model(2, 16, 2, 8, 16, 3, DecoderKind::Mask);
  cfg.encoder.stochastic_depth = 0.1;
  cfg.encoder.mlp_hidden = 32;
  Rng init = make_stream(11, "init");
  Segmenter<float> model(cfg, init);
  const auto image = random_tensor<float>({16, 16, 3}, 13);
  DropPathStats stats;
  NoGradGuard guard;
  for (std::uint64_t i = 0; stats.draws < 10000; ++i) {
    Rng rng = make_stream(11, "stochastic_depth", i);
    ForwardContext<float> ctx{Mode::Train, &rng, &stats, nullptr};
    model.patch_logits(image, ctx);
  }
  const double rate = double(stats.dropped) / double(stats.draws);
  char buf[96];
  std::snprintf(buf, sizeof buf, "drop rate %.4f over %zu draws", rate, stats.draws);
  return {std::abs(rate - 0.1) <= 0.02, buf};
}

// ---- 12 -----------------------------------------------------------------
Outcome dataset_size_trend() {
  SyntheticSpec spec;
  spec.height = spec.width = 32;
  spec.classes = 8;
  spec.kinds = {ShapeKind::Rectangle, ShapeKind::Disk};
  spec.min_size = 8;
  spec.max_size = 20;
  spec.noise_std = 40;
  spec.min_shapes = 2;
  spec.max_shapes = 4;
  spec.n_images = 128;
  spec.seed = 30;
  const auto pool = samples_of(spec);
  spec.n_images = 32;
  spec.seed = 31;
  const auto val = samples_of(spec);
  TrainConfig t;
  t.base_lr = 0.01;
  t.iterations = 400;
  t.batch_size = 8;
  std::vector<double> score;
  for (std::size_t n : {8, 32, 128}) {
    const std::vector<Sample> train(pool.begin(), pool.begin() + std::ptrdiff_t(n));
    double m = 0;
    for (std::uint64_t seed : {1, 2, 3})
      m += train_and_score(base_model(4, 64, 4, 8, 32, 8, DecoderKind::Linear), t, train, val, seed) / 3;
    score.push_back(m);
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "held-out mIoU n=8 %.4f, n=32 %.4f, n=128 %.4f (3 seeds)", score[0], score[1],
                score[2]);
  return {score[1] >= score[0] - 0.02 && score[2] >= score[1] - 0.02, buf};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient integrity", gradient_integrity},
      {2, "class probabilities exclusive", exclusivity},
      {3, "overfit micro model", overfit},
      {4, "mask decoder >= linear decoder", decoder_trend},
      {5, "smaller patches segment thin structures better", patch_trend},
      {6, "throughput falls with patch size", throughput},
      {7, "variant parameter counts", parameter_counts},
      {8, "poly schedule", poly_schedule},
      {9, "pipeline identities", pipeline_identities},
      {10, "oracle equivalence", oracle_equivalence},
      {11, "stochastic depth rate", stochastic_depth},
      {12, "more data, better held-out mIoU", dataset_size_trend},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
