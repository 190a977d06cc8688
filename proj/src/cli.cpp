#include "segmenter/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <thread>

#include "segmenter/analysis.hpp"
#include "segmenter/checkpoint.hpp"
#include "segmenter/dataset.hpp"
#include "segmenter/error.hpp"
#include "segmenter/inference.hpp"
#include "segmenter/kernels.hpp"
#include "segmenter/netpbm.hpp"
#include "segmenter/synthetic.hpp"
#include "segmenter/train.hpp"

namespace segmenter {
namespace {

std::string synthetic_spec_text(const SyntheticSpec& s) {
  std::string kinds;
  for (std::size_t i = 0; i < s.kinds.size(); ++i) kinds += (i ? ", " : "") + std::string(shape_kind_name(s.kinds[i]));
  std::ostringstream o;
  o << "n_images = " << s.n_images << "\nheight = " << s.height << "\nwidth = " << s.width
    << "\nclasses = " << s.classes << "\nshapes = " << kinds << "\nnoise_std = " << format_double(s.noise_std)
    << "\nmin_size = " << s.min_size << "\nmax_size = " << s.max_size << "\nmin_shapes = " << s.min_shapes
    << "\nmax_shapes = " << s.max_shapes << "\nstripe_width = " << s.stripe_width << "\nsnap = " << s.snap << "\nseed = " << s.seed << "\n";
  return o.str();
}

void print_config(std::ostream& out, const std::string& text) {
  out << "# resolved config\n" << text << "# end config\n";
}

std::string model_text(const ModelConfig& m) { return config_to_text(RunConfig{m, TrainConfig{}}); }

void check_classes(const ModelConfig& model, const DatasetManifest& m) {
  if (model.classes != m.classes) {
    throw ConfigError("class-count mismatch: checkpoint has " + std::to_string(model.classes) +
                      " classes, manifest has " + std::to_string(m.classes));
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream o;
  o << std::fixed << std::setprecision(4) << v;
  return o.str();
}

void print_iou(std::ostream& out, const IouResult& r, const std::vector<std::string>& names) {
  out << "class\tname\tiou\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    out << k << "\t" << (k < names.size() ? names[k] : "class" + std::to_string(k)) << "\t" << fmt(r.per_class[k])
        << "\n";
  }
}

// Bilinear resize in normalized space to the model's input size.
Tensor<float> fit_to_model(const Tensor<float>& image, const ModelConfig& cfg) {
  if (image.dim(0) == cfg.encoder.image_h && image.dim(1) == cfg.encoder.image_w) return image;
  return bilinear_resize(image, cfg.encoder.image_h, cfg.encoder.image_w);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transformer semantic segmentation: data generation, training, evaluation and analysis"};
  app.require_subcommand(1);

  // gen-data
  std::string spec_path, out_dir;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset");
  gen->add_option("--spec", spec_path, "Synthetic spec file (key = value)")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Override the spec seed");

  // train
  std::string config_path, data_path, ckpt_out, resume_path, log_path;
  std::optional<std::uint64_t> train_seed;
  std::size_t threads = 1;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Config file")->required();
  train->add_option("--data", data_path, "Dataset manifest")->required();
  train->add_option("--out", ckpt_out, "Checkpoint to write")->required();
  train->add_option("--resume", resume_path, "Checkpoint to continue from");
  train->add_option("--seed", train_seed, "Override the config seed");
  train->add_option("--log", log_path, "Append metrics lines to this file");
  std::size_t stop_after = 0;
  train->add_option("--stop-after", stop_after, "Stop (and save) once this many iterations are complete");

  // eval
  std::string ckpt_path;
  bool multiscale = false, size_bands = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  eval->add_option("--data", data_path, "Dataset manifest")->required();
  eval->add_flag("--multiscale", multiscale, "Average over scales 0.5..1.75 and flips");
  eval->add_flag("--size-bands", size_bands, "Also report small/medium/large object IoU");
  eval->add_option("--threads", threads, "Worker threads (0 = all cores)");

  // infer
  std::string image_path, pred_out;
  auto* infer = app.add_subcommand("infer", "Predict a label map for one image");
  infer->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  infer->add_option("--image", image_path, "Input PPM")->required();
  infer->add_option("--out", pred_out, "Output PGM")->required();
  infer->add_flag("--multiscale", multiscale, "Average over scales 0.5..1.75 and flips");

  // analyze
  std::string analysis, analysis_out;
  std::size_t max_images = 0;
  auto* analyze = app.add_subcommand("analyze", "Attention distance or class embedding projection");
  analyze->add_option("kind", analysis, "attention | classemb")
      ->required()
      ->check(CLI::IsMember({"attention", "classemb"}));
  analyze->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  analyze->add_option("--data", data_path, "Dataset manifest (attention)");
  analyze->add_option("--out", analysis_out, "Write the table here instead of stdout");
  analyze->add_option("--max-images", max_images, "Use at most this many images (0 = all)");

  // bench
  std::size_t resolution = 0, repeat = 5;
  std::string kernels_choice = "auto";
  std::uint64_t bench_seed = 0;
  auto* bench = app.add_subcommand("bench", "Forward-pass throughput");
  auto* bench_ckpt = bench->add_option("--ckpt", ckpt_path, "Checkpoint");
  auto* bench_cfg = bench->add_option("--config", config_path, "Config file (randomly initialized model)");
  bench_ckpt->excludes(bench_cfg);
  bench->add_option("--resolution", resolution, "Square input side in pixels (default: configured size)");
  bench->add_option("--repeat", repeat, "Timed passes per mode")->check(CLI::PositiveNumber);
  bench->add_option("--threads", threads, "Parallel-mode workers (0 = all cores)");
  bench->add_option("--kernels", kernels_choice, "scalar | avx2 | auto")->check(CLI::IsMember({"scalar", "avx2", "auto"}));
  bench->add_option("--seed", bench_seed, "Init seed with --config");

  // checkpoint-inspect
  auto* inspect = app.add_subcommand("checkpoint-inspect", "List tensors and config of a checkpoint");
  inspect->add_option("--ckpt", ckpt_path, "Checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (gen->parsed()) {
      SyntheticSpec spec = parse_synthetic_spec(spec_path);
      if (gen_seed) spec.seed = *gen_seed;
      print_config(out, synthetic_spec_text(spec));
      const DatasetManifest m = generate_synthetic(spec, out_dir);
      out << "wrote " << m.pairs.size() << " pairs and " << (std::filesystem::path(out_dir) / "manifest.txt").string()
          << "\n";
      return kExitOk;
    }

    if (train->parsed()) {
      RunConfig cfg = parse_config(config_path);
      if (train_seed) cfg.train.seed = *train_seed;
      const DatasetManifest manifest = read_manifest(data_path);
      check_classes(cfg.model, manifest);
      const std::vector<Sample> data = load_dataset(manifest);

      std::optional<Segmenter<float>> model;
      if (!resume_path.empty()) {
        LoadedCheckpoint ck = load_checkpoint(resume_path);
        if (model_text(ck.config.model) != model_text(cfg.model)) {
          throw ConfigError("--resume: checkpoint model config differs from " + config_path);
        }
        cfg.train.completed_iterations = ck.config.train.completed_iterations;
        model.emplace(std::move(ck.model));
      } else {
        Rng init = make_stream(cfg.train.seed, "init", 0);
        model.emplace(cfg.model, init);
      }
      print_config(out, config_to_text(cfg));
      out << "parameters: " << model->parameter_count() << "\n";

      std::ofstream log_file;
      if (!log_path.empty()) {
        log_file.open(log_path, std::ios::app);
        if (!log_file) throw IoError("cannot open log file '" + log_path + "'");
      }
      struct Tee : std::streambuf {
        std::streambuf *a, *b;
        int overflow(int c) override {
          if (c == EOF) return 0;
          a->sputc(char(c));
          if (b) b->sputc(char(c));
          return c;
        }
        int sync() override {
          a->pubsync();
          if (b) b->pubsync();
          return 0;
        }
      } tee;
      tee.a = out.rdbuf();
      tee.b = log_file.is_open() ? log_file.rdbuf() : nullptr;
      std::ostream log(&tee);

      TrainHooks hooks;
      hooks.log = &log;
      hooks.divergence_snapshot = ckpt_out + ".diverged";
      hooks.stop_after = stop_after;
      hooks.evaluate = [&](const Segmenter<float>& m) { return miou(evaluate(m, data).confusion); };
      const TrainResult result = train_loop(*model, data, cfg.train, hooks);
      save_checkpoint(*model, result.final_config, ckpt_out);
      out << "saved " << ckpt_out << " after " << result.final_config.completed_iterations << " iterations\n";
      return kExitOk;
    }

    if (eval->parsed()) {
      LoadedCheckpoint ck = load_checkpoint(ckpt_path);
      print_config(out, config_to_text(ck.config));
      const DatasetManifest manifest = read_manifest(data_path);
      check_classes(ck.config.model, manifest);
      const std::vector<Sample> data = load_dataset(manifest);
      EvalOptions opts;
      opts.multiscale = multiscale;
      opts.size_bands = size_bands;
      opts.threads = threads;
      const EvalReport report = evaluate(ck.model, data, opts);
      const IouResult iou = compute_iou(report.confusion);
      out << "images: " << data.size() << "\npixels: " << report.confusion.total() << "\nmIoU: " << fmt(iou.miou)
          << "\n";
      print_iou(out, iou, manifest.class_names);
      if (report.bands) {
        out << "band\tpixels\tmiou\n";
        for (std::size_t b = 0; b < 3; ++b) {
          const auto& cm = report.bands->bands[b];
          out << kBandNames[b] << "\t" << cm.total() << "\t" << fmt(miou(cm)) << "\n";
        }
      }
      return kExitOk;
    }

    if (infer->parsed()) {
      LoadedCheckpoint ck = load_checkpoint(ckpt_path);
      print_config(out, config_to_text(ck.config));
      const Image img = read_image_ppm(image_path);
      const Tensor<float> x = normalize_image<float>(img, ck.config.model.mean, ck.config.model.std);
      const LabelMap pred = multiscale ? multiscale_predict(ck.model, x) : sliding_window_predict(ck.model, x);
      write_labels_pgm(pred, pred_out);
      out << "wrote " << pred_out << " (" << pred.height << "x" << pred.width << ")\n";
      return kExitOk;
    }

    if (analyze->parsed()) {
      LoadedCheckpoint ck = load_checkpoint(ckpt_path);
      print_config(out, config_to_text(ck.config));
      std::ostringstream table;
      if (analysis == "attention") {
        if (data_path.empty()) throw ConfigError("analyze attention needs --data");
        const DatasetManifest manifest = read_manifest(data_path);
        std::vector<Sample> data = load_dataset(manifest);
        if (max_images && data.size() > max_images) data.resize(max_images);
        if (data.empty()) throw ConfigError("analyze attention: dataset is empty");
        std::vector<Tensor<float>> images;
        for (const auto& s : data) {
          NoGradGuard guard;
          images.push_back(
              fit_to_model(normalize_image<float>(s.image, ck.config.model.mean, ck.config.model.std), ck.config.model));
        }
        write_attention_tsv(table, attention_distance<float>(ck.model, images));
      } else {
        std::vector<std::string> names;
        if (!data_path.empty()) names = read_manifest(data_path).class_names;
        write_projection_tsv(table, class_embedding_projection(ck.model), names);
      }
      if (analysis_out.empty()) {
        out << table.str();
      } else {
        const std::string t = table.str();
        write_file(analysis_out, std::span(reinterpret_cast<const std::uint8_t*>(t.data()), t.size()));
        out << "wrote " << analysis_out << "\n";
      }
      return kExitOk;
    }

    if (bench->parsed()) {
      if (ckpt_path.empty() && config_path.empty()) throw ConfigError("bench needs --ckpt or --config");
      const kernels::Backend previous = kernels::current_backend();
      if (kernels_choice == "scalar") kernels::set_backend(kernels::Backend::Scalar);
      if (kernels_choice == "avx2") {
        if (!kernels::backend_available(kernels::Backend::Avx2)) throw ConfigError("--kernels avx2: not available");
        kernels::set_backend(kernels::Backend::Avx2);
      }
      std::optional<Segmenter<float>> model;
      RunConfig cfg;
      if (!ckpt_path.empty()) {
        LoadedCheckpoint ck = load_checkpoint(ckpt_path);
        cfg = ck.config;
        model.emplace(std::move(ck.model));
      } else {
        cfg = parse_config(config_path);
        Rng init = make_stream(bench_seed, "init", 0);
        model.emplace(cfg.model, init);
      }
      if (resolution) model->resize_input(resolution, resolution);
      cfg.model = model->config();
      print_config(out, config_to_text(cfg));
      const EncoderConfig& e = cfg.model.encoder;
      std::vector<float> pixels(e.image_h * e.image_w * e.channels);
      Rng rng = make_stream(bench_seed, "bench", 0);
      for (auto& p : pixels) p = float(normal(rng));
      const Tensor<float> image = Tensor<float>::from_data({e.image_h, e.image_w, e.channels}, pixels);

      using clock = std::chrono::steady_clock;
      NoGradGuard guard;
      model->forward(image);  // warm-up
      std::vector<double> single;
      for (std::size_t r = 0; r < repeat; ++r) {
        const auto t0 = clock::now();
        model->forward(image);
        single.push_back(std::chrono::duration<double>(clock::now() - t0).count());
      }
      const std::size_t workers = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
      std::vector<double> parallel;
      for (std::size_t r = 0; r < repeat; ++r) {
        const auto t0 = clock::now();
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&] {
            NoGradGuard g;
            model->forward(image);
          });
        }
        for (auto& t : pool) t.join();
        parallel.push_back(std::chrono::duration<double>(clock::now() - t0).count());
      }
      out << "kernels: " << kernels::backend_name(kernels::current_backend()) << "\nresolution: " << e.image_h << "x" << e.image_w
          << "\npatch_size: " << e.patch_size << "\n";
      out << "single_thread_images_per_sec: " << format_double(1.0 / median(single)) << "\n";
      out << "parallel_threads: " << workers << "\n";
      out << "parallel_images_per_sec: " << format_double(double(workers) / median(parallel)) << "\n";
      kernels::set_backend(previous);
      return kExitOk;
    }

    if (inspect->parsed()) {
      const CheckpointFile file = read_checkpoint_file(ckpt_path);
      print_config(out, file.config_text);
      out << "version: " << file.version << "\ntensors: " << file.tensors.size() << "\n";
      std::size_t total = 0;
      for (const auto& t : file.tensors) {
        out << t.name << "\t" << shape_str(t.shape) << "\t" << t.data.size() << "\n";
        total += t.data.size();
      }
      out << "total_parameters: " << total << "\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const UnsupportedError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    if (!e.snapshot_path().empty()) err << "diverged model: " << e.snapshot_path() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace segmenter
