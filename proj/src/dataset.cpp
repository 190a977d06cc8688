#include "segmenter/dataset.hpp"

#include <cstdlib>
#include <sstream>

#include "segmenter/config.hpp"
#include "segmenter/error.hpp"
#include "segmenter/netpbm.hpp"

namespace segmenter {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::array<double, 3> parse_triple(const std::string& key, const std::string& v) {
  const auto parts = split_list(v);
  if (parts.size() != 3) throw ConfigError("manifest key '" + key + "': expected three comma-separated numbers");
  std::array<double, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    try {
      std::size_t used = 0;
      out[i] = std::stod(parts[i], &used);
      if (used != parts[i].size()) throw std::invalid_argument(parts[i]);
    } catch (const std::exception&) {
      throw ConfigError("manifest key '" + key + "': '" + parts[i] + "' is not a number");
    }
  }
  return out;
}

}  // namespace

std::filesystem::path DatasetManifest::resolve(const std::string& relative) const {
  const std::filesystem::path p(relative);
  if (p.is_absolute()) return p;
  if (const char* env = std::getenv("SEGMENTER_DATA"); env && *env) return std::filesystem::path(env) / p;
  return root / p;
}

DatasetManifest parse_manifest_text(std::string_view text, const std::filesystem::path& root) {
  DatasetManifest m;
  m.root = root;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool have_classes = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("manifest line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (key == "classes") {
      try {
        std::size_t used = 0;
        const long long k = std::stoll(value, &used);
        if (used != value.size() || k < 1 || k > 255) throw std::invalid_argument(value);
        m.classes = std::size_t(k);
      } catch (const std::exception&) {
        throw ConfigError("manifest: classes must be an integer in [1, 255], got '" + value + "'");
      }
      have_classes = true;
    } else if (key == "class_names") {
      m.class_names = split_list(value);
    } else if (key == "mean") {
      m.mean = parse_triple(key, value);
    } else if (key == "std") {
      m.std = parse_triple(key, value);
    } else if (key == "pair") {
      std::istringstream ps(value);
      std::string img, lab, extra;
      if (!(ps >> img >> lab) || (ps >> extra)) {
        throw ConfigError("manifest line " + std::to_string(lineno) + ": pair needs exactly two paths");
      }
      m.pairs.emplace_back(img, lab);
    } else {
      throw ConfigError("manifest line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  if (!have_classes) throw ConfigError("manifest: missing 'classes'");
  if (!m.class_names.empty() && m.class_names.size() != m.classes) {
    throw ConfigError("manifest: " + std::to_string(m.class_names.size()) + " class names for " +
                      std::to_string(m.classes) + " classes");
  }
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_manifest_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                             path.parent_path());
}

std::string manifest_to_text(const DatasetManifest& m) {
  std::string out = "classes = " + std::to_string(m.classes) + "\n";
  if (!m.class_names.empty()) {
    out += "class_names = ";
    for (std::size_t i = 0; i < m.class_names.size(); ++i) out += (i ? ", " : "") + m.class_names[i];
    out += "\n";
  }
  auto triple = [](const std::array<double, 3>& a) {
    return format_double(a[0]) + ", " + format_double(a[1]) + ", " + format_double(a[2]);
  };
  out += "mean = " + triple(m.mean) + "\n";
  out += "std = " + triple(m.std) + "\n";
  for (const auto& [img, lab] : m.pairs) out += "pair = " + img + " " + lab + "\n";
  return out;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  const std::string text = manifest_to_text(m);
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void validate_sample(const Sample& s, std::size_t classes, const std::string& where) {
  if (s.image.height != s.labels.height || s.image.width != s.labels.width) {
    throw ConfigError(where + ": image is " + std::to_string(s.image.height) + "x" + std::to_string(s.image.width) +
                      " but labels are " + std::to_string(s.labels.height) + "x" + std::to_string(s.labels.width));
  }
  for (std::size_t i = 0; i < s.labels.labels.size(); ++i) {
    const std::uint8_t v = s.labels.labels[i];
    if (v != kIgnoreLabel && v >= classes) {
      throw ConfigError(where + ": label " + std::to_string(v) + " at pixel (" + std::to_string(i / s.labels.width) +
                        ", " + std::to_string(i % s.labels.width) + ") is outside [0, " + std::to_string(classes) +
                        ") and not the ignore id 255");
    }
  }
}

std::vector<Sample> load_dataset(const DatasetManifest& m) {
  std::vector<Sample> out;
  out.reserve(m.pairs.size());
  for (const auto& [img, lab] : m.pairs) {
    const auto img_path = m.resolve(img), lab_path = m.resolve(lab);
    if (!std::filesystem::exists(img_path)) throw ConfigError("missing image file '" + img_path.string() + "'");
    if (!std::filesystem::exists(lab_path)) throw ConfigError("missing label file '" + lab_path.string() + "'");
    Sample s;
    s.image = read_image_ppm(img_path);
    s.labels = read_labels_pgm(lab_path);
    validate_sample(s, m.classes, img + " / " + lab);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace segmenter
