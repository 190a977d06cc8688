#include "segmenter/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "segmenter/error.hpp"
#include "segmenter/netpbm.hpp"
#include "segmenter/rng.hpp"

namespace segmenter {
namespace {

constexpr std::array<std::array<std::uint8_t, 3>, kColorTableSize> kColors = {{
    {110, 110, 110},  // background
    {220, 40, 40},
    {40, 180, 60},
    {50, 80, 220},
    {230, 210, 40},
    {200, 60, 200},
    {40, 200, 210},
    {250, 140, 30},
    {130, 60, 20},
    {240, 240, 240},
    {20, 20, 20},
    {150, 200, 120},
}};

std::size_t randint(Rng& rng, std::size_t lo, std::size_t hi) {  // inclusive
  const std::size_t v = lo + std::size_t(uniform(rng, 0.0, double(hi - lo + 1)));
  return std::min(v, hi);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string_view shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Rectangle:
      return "rectangle";
    case ShapeKind::Disk:
      return "disk";
    case ShapeKind::Stripe:
      return "stripe";
  }
  return "?";
}

const std::array<std::uint8_t, 3>& class_color(std::size_t class_id) {
  if (class_id >= kColorTableSize) {
    throw ConfigError("class " + std::to_string(class_id) + " has no color; the table holds " +
                      std::to_string(kColorTableSize) + " classes");
  }
  return kColors[class_id];
}

bool DrawnShape::covers(std::size_t x, std::size_t y) const {
  const double px = double(x) + 0.5, py = double(y) + 0.5;
  switch (kind) {
    case ShapeKind::Rectangle:
      return px >= x0 && px < x1 && py >= y0 && py < y1;
    case ShapeKind::Disk:
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= radius * radius;
    case ShapeKind::Stripe: {
      const double c = vertical ? px : py;
      return c >= offset && c < offset + thickness;
    }
  }
  return false;
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes (background + shapes)");
  if (classes > kColorTableSize) {
    throw ConfigError("classes = " + std::to_string(classes) + " exceeds the color table (" +
                      std::to_string(kColorTableSize) + ")");
  }
  if (height == 0 || width == 0) throw ConfigError("image size must be positive");
  if (kinds.empty()) throw ConfigError("at least one shape kind is required");
  if (min_size == 0 || min_size > max_size) throw ConfigError("need 0 < min_size <= max_size");
  if (min_shapes > max_shapes) throw ConfigError("need min_shapes <= max_shapes");
  if (stripe_width == 0 || stripe_width > std::min(height, width)) throw ConfigError("stripe_width out of range");
  if (noise_std < 0) throw ConfigError("noise_std must be non-negative");
  if (snap && (height % snap || width % snap || snap > std::min(height, width))) {
    throw ConfigError("snap must divide the image height and width");
  }
}

LabelMap rasterize(const std::vector<DrawnShape>& shapes, std::size_t height, std::size_t width) {
  LabelMap out(height, width, 0);
  for (const auto& s : shapes) {
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        if (s.covers(x, y)) out.at(y, x) = s.class_id;
  }
  return out;
}

std::vector<SyntheticImage> generate_synthetic_samples(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<SyntheticImage> out;
  out.reserve(spec.n_images);
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    Rng rng = make_stream(spec.seed, "synthetic.shapes", i);
    SyntheticImage img;
    const std::size_t count = randint(rng, spec.min_shapes, spec.max_shapes);
    for (std::size_t s = 0; s < count; ++s) {
      DrawnShape shape;
      shape.kind = spec.kinds[randint(rng, 0, spec.kinds.size() - 1)];
      shape.class_id = std::uint8_t(randint(rng, 1, spec.classes - 1));
      switch (shape.kind) {
        case ShapeKind::Rectangle: {
          std::size_t w = std::min(randint(rng, spec.min_size, spec.max_size), spec.width);
          std::size_t h = std::min(randint(rng, spec.min_size, spec.max_size), spec.height);
          if (spec.snap) {
            w = std::max(spec.snap, (w + spec.snap / 2) / spec.snap * spec.snap);
            h = std::max(spec.snap, (h + spec.snap / 2) / spec.snap * spec.snap);
            shape.x0 = double(randint(rng, 0, (spec.width - w) / spec.snap) * spec.snap);
            shape.y0 = double(randint(rng, 0, (spec.height - h) / spec.snap) * spec.snap);
          } else {
            shape.x0 = double(randint(rng, 0, spec.width - w));
            shape.y0 = double(randint(rng, 0, spec.height - h));
          }
          shape.x1 = shape.x0 + double(w);
          shape.y1 = shape.y0 + double(h);
          break;
        }
        case ShapeKind::Disk: {
          const std::size_t d = std::min({randint(rng, spec.min_size, spec.max_size), spec.width, spec.height});
          shape.radius = double(d) / 2.0;
          shape.cx = shape.radius + uniform(rng, 0.0, double(spec.width - d));
          shape.cy = shape.radius + uniform(rng, 0.0, double(spec.height - d));
          break;
        }
        case ShapeKind::Stripe: {
          shape.vertical = bernoulli(rng, 0.5);
          const std::size_t extent = shape.vertical ? spec.width : spec.height;
          shape.thickness = double(spec.stripe_width);
          shape.offset = double(randint(rng, 0, extent - spec.stripe_width));
          break;
        }
      }
      img.shapes.push_back(shape);
    }
    img.sample.labels = rasterize(img.shapes, spec.height, spec.width);

    Rng noise = make_stream(spec.seed, "synthetic.noise", i);
    Image& im = img.sample.image;
    im.height = spec.height;
    im.width = spec.width;
    im.rgb.resize(spec.height * spec.width * 3);
    for (std::size_t p = 0; p < spec.height * spec.width; ++p) {
      const auto& color = class_color(img.sample.labels.labels[p]);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = double(color[c]);
        if (spec.noise_std > 0) v += spec.noise_std * normal(noise);
        im.rgb[p * 3 + c] = std::uint8_t(std::clamp(std::lround(v), 0L, 255L));
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  const auto images = generate_synthetic_samples(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "labels", ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  DatasetManifest m;
  m.root = out_dir;
  m.classes = spec.classes;
  m.class_names.push_back("background");
  for (std::size_t k = 1; k < spec.classes; ++k) m.class_names.push_back("class" + std::to_string(k));

  std::array<double, 3> s1{}, s2{};
  double count = 0;
  std::ostringstream shapes;
  shapes << "# image kind class params\n";
  for (std::size_t i = 0; i < images.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", i);
    const std::string img_rel = std::string("images/") + stem + ".ppm";
    const std::string lab_rel = std::string("labels/") + stem + ".pgm";
    write_image_ppm(images[i].sample.image, out_dir / img_rel);
    write_labels_pgm(images[i].sample.labels, out_dir / lab_rel);
    m.pairs.emplace_back(img_rel, lab_rel);
    const auto& rgb = images[i].sample.image.rgb;
    for (std::size_t p = 0; p < rgb.size(); ++p) {
      s1[p % 3] += rgb[p];
      s2[p % 3] += double(rgb[p]) * rgb[p];
    }
    count += double(rgb.size() / 3);
    for (const auto& s : images[i].shapes) {
      shapes << i << " " << shape_kind_name(s.kind) << " " << int(s.class_id);
      switch (s.kind) {
        case ShapeKind::Rectangle:
          shapes << " " << s.x0 << " " << s.y0 << " " << s.x1 << " " << s.y1;
          break;
        case ShapeKind::Disk:
          shapes << " " << s.cx << " " << s.cy << " " << s.radius;
          break;
        case ShapeKind::Stripe:
          shapes << " " << (s.vertical ? "vertical" : "horizontal") << " " << s.offset << " " << s.thickness;
          break;
      }
      shapes << "\n";
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    m.mean[c] = count > 0 ? s1[c] / count : 0.0;
    const double var = count > 0 ? s2[c] / count - m.mean[c] * m.mean[c] : 1.0;
    m.std[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  const std::string text = shapes.str();
  write_file(out_dir / "shapes.txt", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  write_manifest(m, out_dir / "manifest.txt");
  return m;
}

SyntheticSpec parse_synthetic_spec_text(std::string_view text) {
  SyntheticSpec spec;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  auto as_size = [&](const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const unsigned long long out = std::stoull(v, &used);
      if (used != v.size() || v[0] == '-') throw std::invalid_argument(v);
      return std::size_t(out);
    } catch (const std::exception&) {
      throw ConfigError("synthetic spec key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("synthetic spec line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (value.empty()) continue;
    if (key == "n_images") spec.n_images = as_size(key, value);
    else if (key == "height") spec.height = as_size(key, value);
    else if (key == "width") spec.width = as_size(key, value);
    else if (key == "classes") spec.classes = as_size(key, value);
    else if (key == "min_size") spec.min_size = as_size(key, value);
    else if (key == "max_size") spec.max_size = as_size(key, value);
    else if (key == "min_shapes") spec.min_shapes = as_size(key, value);
    else if (key == "max_shapes") spec.max_shapes = as_size(key, value);
    else if (key == "stripe_width") spec.stripe_width = as_size(key, value);
    else if (key == "snap") spec.snap = as_size(key, value);
    else if (key == "seed") spec.seed = as_size(key, value);
    else if (key == "noise_std") {
      try {
        spec.noise_std = std::stod(value);
      } catch (const std::exception&) {
        throw ConfigError("synthetic spec key 'noise_std': expected a number, got '" + value + "'");
      }
    } else if (key == "shapes") {
      spec.kinds.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        const std::string k = trim(item);
        if (k == "rectangle" || k == "rectangles") spec.kinds.push_back(ShapeKind::Rectangle);
        else if (k == "disk" || k == "disks") spec.kinds.push_back(ShapeKind::Disk);
        else if (k == "stripe" || k == "stripes") spec.kinds.push_back(ShapeKind::Stripe);
        else throw ConfigError("unknown shape kind '" + k + "'");
      }
    } else {
      throw ConfigError("unknown synthetic spec key '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

SyntheticSpec parse_synthetic_spec(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_synthetic_spec_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace segmenter
