#include "segmenter/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "segmenter/error.hpp"

namespace segmenter {
namespace {

constexpr VariantPreset kVariants[] = {
    {"Ti", 12, 192, 3},
    {"S", 12, 384, 6},
    {"B", 12, 768, 12},
    {"L", 24, 1024, 16},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

std::array<double, 3> to_triple(const std::string& key, const std::string& v) {
  std::array<double, 3> out{};
  std::stringstream ss(v);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 3) break;
    out[i++] = to_double(key, trim(item));
  }
  if (i != 3 || std::getline(ss, item, ',')) {
    throw ConfigError("key '" + key + "': expected three comma-separated numbers, got '" + v + "'");
  }
  return out;
}

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string_view decoder_kind_name(DecoderKind k) { return k == DecoderKind::Mask ? "mask" : "linear"; }

DecoderKind parse_decoder_kind(std::string_view s) {
  if (s == "mask") return DecoderKind::Mask;
  if (s == "linear") return DecoderKind::Linear;
  throw ConfigError("unknown decoder kind '" + std::string(s) + "' (expected linear or mask)");
}

const VariantPreset* find_variant(std::string_view name) {
  for (const auto& v : kVariants) {
    if (v.name == name) return &v;
  }
  return nullptr;
}

void apply_variant(ModelConfig& cfg, std::string_view name) {
  const VariantPreset* v = find_variant(name);
  if (!v) throw ConfigError("unknown variant '" + std::string(name) + "' (expected Ti, S, B or L)");
  cfg.variant = std::string(v->name);
  cfg.encoder.depth = v->depth;
  cfg.encoder.token_size = v->token_size;
  cfg.encoder.heads = v->heads;
  cfg.encoder.mlp_hidden = 4 * v->token_size;
}

void EncoderConfig::validate() const {
  check(patch_size > 0, "patch_size must be positive");
  check(image_h > 0 && image_w > 0, "image size must be positive");
  check(image_h % patch_size == 0 && image_w % patch_size == 0,
        "image size " + std::to_string(image_h) + "x" + std::to_string(image_w) +
            " is not divisible by patch_size " + std::to_string(patch_size));
  check(channels > 0, "channels must be positive");
  check(depth > 0, "depth must be positive");
  check(token_size > 0 && heads > 0, "token_size and heads must be positive");
  check(token_size % heads == 0, "token_size " + std::to_string(token_size) +
                                     " is not divisible by heads " + std::to_string(heads));
  check(mlp_hidden > 0, "mlp_hidden must be positive");
  check(dropout >= 0 && dropout < 1, "dropout must lie in [0, 1)");
  check(stochastic_depth >= 0 && stochastic_depth <= 1, "stochastic_depth must lie in [0, 1]");
  check(layer_norm_eps > 0, "layer_norm_eps must be positive");
  check(init_std > 0, "init_std must be positive");
}

void ModelConfig::validate() const {
  encoder.validate();
  check(classes >= 1 && classes < 255, "classes must lie in [1, 254]");
  for (double s : std) check(s > 0, "std entries must be positive");
}

void TrainConfig::validate() const {
  check(base_lr > 0, "base_lr must be positive");
  check(batch_size >= 1, "batch_size must be at least 1");
  check(poly_power > 0, "poly_power must be positive");
  check(weight_decay == 0, "weight_decay must be 0");
  check(momentum >= 0 && momentum < 1, "momentum must lie in [0, 1)");
  check(min_scale > 0 && min_scale <= max_scale, "need 0 < aug_min_scale <= aug_max_scale");
  check(flip_prob >= 0 && flip_prob <= 1, "flip_prob must lie in [0, 1]");
  check(completed_iterations <= iterations, "completed_iterations exceeds iterations");
}

RunConfig parse_config_text(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    if (kv.count(key)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv[key] = trim(t.substr(eq + 1));
  }

  static const std::set<std::string> kKnown = {
      "variant", "patch_size", "crop_size", "image_height", "image_width", "depth", "token_size",
      "heads", "mlp_hidden", "dropout", "stochastic_depth", "drop_path_scaling", "layer_norm_eps",
      "init_std", "decoder", "decoder_layers", "decoder_final_norm", "normalize_class_embeddings",
      "classes", "mean", "std", "base_lr", "iterations", "batch_size", "poly_power",
      "weight_decay", "momentum", "seed", "eval_every", "aug_min_scale", "aug_max_scale",
      "flip_prob", "completed_iterations"};
  for (const auto& [k, v] : kv) {
    if (!kKnown.count(k)) throw ConfigError("unknown key '" + k + "'");
  }
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() || it->second.empty() ? nullptr : &it->second;
  };

  RunConfig cfg;
  ModelConfig& m = cfg.model;
  EncoderConfig& e = m.encoder;
  bool preset = false;
  if (auto v = get("variant"); v && *v != "custom") {
    apply_variant(m, *v);
    preset = true;
  }
  bool overridden = false;
  auto set_size = [&](const char* key, std::size_t& dst, bool arch) {
    if (auto v = get(key)) {
      dst = to_size(key, *v);
      overridden = overridden || arch;
    }
  };
  set_size("depth", e.depth, true);
  set_size("token_size", e.token_size, true);
  set_size("heads", e.heads, true);
  if (!preset) {
    for (const char* key : {"depth", "token_size", "heads"}) {
      if (!get(key)) throw ConfigError(std::string("missing mandatory key '") + key + "' (or set variant)");
    }
  }
  e.mlp_hidden = 4 * e.token_size;
  set_size("mlp_hidden", e.mlp_hidden, true);
  if (preset && overridden) {
    const VariantPreset* p = find_variant(m.variant);
    if (p->depth != e.depth || p->token_size != e.token_size || p->heads != e.heads ||
        e.mlp_hidden != 4 * e.token_size) {
      m.variant = "custom";
    }
  }
  set_size("patch_size", e.patch_size, false);
  if (auto v = get("crop_size")) e.image_h = e.image_w = to_size("crop_size", *v);
  set_size("image_height", e.image_h, false);
  set_size("image_width", e.image_w, false);
  if (auto v = get("dropout")) e.dropout = to_double("dropout", *v);
  if (auto v = get("stochastic_depth")) e.stochastic_depth = to_double("stochastic_depth", *v);
  if (auto v = get("drop_path_scaling")) e.drop_path_scaling = to_bool("drop_path_scaling", *v);
  if (auto v = get("layer_norm_eps")) e.layer_norm_eps = to_double("layer_norm_eps", *v);
  if (auto v = get("init_std")) e.init_std = to_double("init_std", *v);
  if (auto v = get("decoder")) m.decoder.kind = parse_decoder_kind(*v);
  set_size("decoder_layers", m.decoder.layers, false);
  if (auto v = get("decoder_final_norm")) m.decoder.final_norm = to_bool("decoder_final_norm", *v);
  if (auto v = get("normalize_class_embeddings")) {
    m.decoder.normalize_classes = to_bool("normalize_class_embeddings", *v);
  }
  if (auto v = get("classes")) {
    m.classes = to_size("classes", *v);
  } else {
    throw ConfigError("missing mandatory key 'classes'");
  }
  if (auto v = get("mean")) m.mean = to_triple("mean", *v);
  if (auto v = get("std")) m.std = to_triple("std", *v);

  TrainConfig& t = cfg.train;
  if (auto v = get("base_lr")) t.base_lr = to_double("base_lr", *v);
  set_size("iterations", t.iterations, false);
  set_size("batch_size", t.batch_size, false);
  if (auto v = get("poly_power")) t.poly_power = to_double("poly_power", *v);
  if (auto v = get("weight_decay")) t.weight_decay = to_double("weight_decay", *v);
  if (auto v = get("momentum")) t.momentum = to_double("momentum", *v);
  if (auto v = get("seed")) t.seed = to_size("seed", *v);
  set_size("eval_every", t.eval_every, false);
  if (auto v = get("aug_min_scale")) t.min_scale = to_double("aug_min_scale", *v);
  if (auto v = get("aug_max_scale")) t.max_scale = to_double("aug_max_scale", *v);
  if (auto v = get("flip_prob")) t.flip_prob = to_double("flip_prob", *v);
  set_size("completed_iterations", t.completed_iterations, false);

  m.validate();
  t.validate();
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const RunConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const EncoderConfig& e = m.encoder;
  const TrainConfig& t = cfg.train;
  auto triple = [](const std::array<double, 3>& a) {
    return format_double(a[0]) + ", " + format_double(a[1]) + ", " + format_double(a[2]);
  };
  auto b = [](bool v) { return v ? "true" : "false"; };
  std::ostringstream o;
  o << "# model\n";
  o << "variant = " << m.variant << "\n";
  o << "depth = " << e.depth << "\n";
  o << "token_size = " << e.token_size << "\n";
  o << "heads = " << e.heads << "\n";
  o << "mlp_hidden = " << e.mlp_hidden << "\n";
  o << "patch_size = " << e.patch_size << "\n";
  o << "image_height = " << e.image_h << "\n";
  o << "image_width = " << e.image_w << "\n";
  o << "dropout = " << format_double(e.dropout) << "\n";
  o << "stochastic_depth = " << format_double(e.stochastic_depth) << "\n";
  o << "drop_path_scaling = " << b(e.drop_path_scaling) << "\n";
  o << "layer_norm_eps = " << format_double(e.layer_norm_eps) << "\n";
  o << "init_std = " << format_double(e.init_std) << "\n";
  o << "decoder = " << decoder_kind_name(m.decoder.kind) << "\n";
  o << "decoder_layers = " << m.decoder.layers << "\n";
  o << "decoder_final_norm = " << b(m.decoder.final_norm) << "\n";
  o << "normalize_class_embeddings = " << b(m.decoder.normalize_classes) << "\n";
  o << "classes = " << m.classes << "\n";
  o << "mean = " << triple(m.mean) << "\n";
  o << "std = " << triple(m.std) << "\n";
  o << "# training\n";
  o << "base_lr = " << format_double(t.base_lr) << "\n";
  o << "iterations = " << t.iterations << "\n";
  o << "batch_size = " << t.batch_size << "\n";
  o << "poly_power = " << format_double(t.poly_power) << "\n";
  o << "weight_decay = " << format_double(t.weight_decay) << "\n";
  o << "momentum = " << format_double(t.momentum) << "\n";
  o << "seed = " << t.seed << "\n";
  o << "eval_every = " << t.eval_every << "\n";
  o << "aug_min_scale = " << format_double(t.min_scale) << "\n";
  o << "aug_max_scale = " << format_double(t.max_scale) << "\n";
  o << "flip_prob = " << format_double(t.flip_prob) << "\n";
  o << "completed_iterations = " << t.completed_iterations << "\n";
  return o.str();
}

}  // namespace segmenter
