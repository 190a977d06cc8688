#include "segmenter/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <limits>
#include <map>

#include "segmenter/error.hpp"
#include "segmenter/netpbm.hpp"

namespace segmenter {
namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(std::uint8_t(std::uint64_t(v) >> (8 * i)));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::size_t pos() const { return pos_; }
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) throw ParseError(std::string("truncated checkpoint while reading ") + what, pos_);
  }
  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return U(v);
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>("payload")); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.le<std::uint32_t>(file.version);
  w.le<std::uint32_t>(std::uint32_t(file.config_text.size()));
  w.bytes(file.config_text.data(), file.config_text.size());
  w.le<std::uint32_t>(std::uint32_t(file.tensors.size()));
  for (const auto& t : file.tensors) {
    if (numel(t.shape) != t.data.size()) throw ContractError("checkpoint tensor '" + t.name + "' has inconsistent size");
    w.le<std::uint32_t>(std::uint32_t(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.le<std::uint8_t>(0);
    w.le<std::uint8_t>(std::uint8_t(t.shape.size()));
    for (std::size_t d : t.shape) w.le<std::uint64_t>(d);
    for (float v : t.data) w.f32(v);
  }
  return w.take();
}

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::string magic = r.str(8, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 8) != 0) throw ParseError("bad checkpoint magic", 0);
  CheckpointFile f;
  f.version = r.le<std::uint32_t>("version");
  if (f.version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(f.version), 8);
  }
  const auto config_len = r.le<std::uint32_t>("config length");
  f.config_text = r.str(config_len, "config text");
  const auto count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = r.le<std::uint32_t>("name length");
    t.name = r.str(name_len, "tensor name");
    const std::size_t dtype_at = r.pos();
    if (const auto dtype = r.le<std::uint8_t>("dtype"); dtype != 0) {
      throw ParseError("tensor '" + t.name + "': unsupported dtype " + std::to_string(dtype), dtype_at);
    }
    const auto ndim = r.le<std::uint8_t>("ndim");
    for (std::uint8_t d = 0; d < ndim; ++d) t.shape.push_back(std::size_t(r.le<std::uint64_t>("dims")));
    const std::size_t n = numel(t.shape);
    r.need(n * 4, "payload");
    t.data.resize(n);
    for (float& v : t.data) v = r.f32();
    f.tensors.push_back(std::move(t));
  }
  return f;
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const ParseError& e) {
    throw LoadError(path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw LoadError(e.what());
  }
}

void save_checkpoint(const Segmenter<float>& model, const TrainConfig& train, const std::filesystem::path& path) {
  CheckpointFile f;
  f.config_text = config_to_text({model.config(), train});
  for (const auto& [name, t] : model.named_parameters()) {
    f.tensors.push_back({name, t->shape(), std::vector<float>(t->data().begin(), t->data().end())});
  }
  write_file(path, encode_checkpoint(f));
}

void load_into(const CheckpointFile& file, Segmenter<float>& model) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : file.tensors) by_name[t.name] = &t;
  std::vector<std::string> problems;
  auto params = model.named_parameters();
  for (auto& [name, p] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      problems.push_back("missing '" + name + "'");
    } else if (it->second->shape != p->shape()) {
      problems.push_back("'" + name + "' has shape " + shape_str(it->second->shape) + ", model expects " +
                         shape_str(p->shape()));
    }
  }
  if (file.tensors.size() != params.size() || !problems.empty()) {
    std::map<std::string, bool> known;
    for (auto& [name, p] : params) known[name] = true;
    for (const auto& t : file.tensors) {
      if (!known.count(t.name)) problems.push_back("unexpected '" + t.name + "'");
    }
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match model: ";
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
    throw LoadError(msg);
  }
  for (auto& [name, p] : params) {
    const auto& src = by_name[name]->data;
    std::copy(src.begin(), src.end(), p->mutable_data().begin());
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const CheckpointFile f = read_checkpoint_file(path);
  RunConfig cfg;
  try {
    cfg = parse_config_text(f.config_text);
  } catch (const ConfigError& e) {
    throw LoadError(path.string() + ": embedded config invalid: " + e.what());
  }
  Segmenter<float> model(cfg.model);
  load_into(f, model);
  return {std::move(model), cfg};
}

LoadedCheckpoint load_checkpoint_resized(const std::filesystem::path& path, std::size_t height,
                                         std::size_t width) {
  LoadedCheckpoint c = load_checkpoint(path);
  if (height != c.model.config().encoder.image_h || width != c.model.config().encoder.image_w) {
    c.model.resize_input(height, width);
    c.config.model = c.model.config();
  }
  return c;
}

}  // namespace segmenter
