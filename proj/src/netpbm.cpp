#include "segmenter/netpbm.hpp"

#include <fstream>
#include <string>

#include "segmenter/error.hpp"

namespace segmenter {
namespace {

struct Header {
  std::size_t width = 0, height = 0, data_offset = 0;
};

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

Header parse_header(std::span<const std::uint8_t> b, char kind) {
  if (b.size() < 2 || b[0] != 'P' || b[1] != std::uint8_t(kind)) {
    throw ParseError(std::string("bad magic, expected P") + kind, 0);
  }
  std::size_t pos = 2, number_at = 2;
  auto next_number = [&](const char* what) -> std::size_t {
    for (;;) {
      while (pos < b.size() && is_space(b[pos])) ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n' && b[pos] != '\r') ++pos;
        continue;
      }
      break;
    }
    if (pos >= b.size()) throw ParseError(std::string("truncated header, missing ") + what, pos);
    if (b[pos] < '0' || b[pos] > '9') throw ParseError(std::string("expected ") + what, pos);
    number_at = pos;
    std::size_t v = 0;
    while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
      v = v * 10 + (b[pos] - '0');
      if (v > (std::size_t(1) << 32)) throw ParseError(std::string(what) + " too large", pos);
      ++pos;
    }
    return v;
  };
  Header h;
  h.width = next_number("width");
  h.height = next_number("height");
  const std::size_t maxval = next_number("maxval");
  if (maxval != 255) throw ParseError("unsupported maxval " + std::to_string(maxval) + " (need 255)", number_at);
  if (pos >= b.size() || !is_space(b[pos])) throw ParseError("expected whitespace after maxval", pos);
  h.data_offset = pos + 1;
  return h;
}

std::vector<std::uint8_t> encode(char kind, std::size_t w, std::size_t h, std::span<const std::uint8_t> px) {
  const std::string head = std::string("P") + kind + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), px.begin(), px.end());
  return out;
}

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  const Header h = parse_header(bytes, '6');
  const std::size_t need = h.width * h.height * 3;
  if (bytes.size() - h.data_offset < need) {
    throw ParseError("truncated pixel data: need " + std::to_string(need) + " bytes", bytes.size());
  }
  Image img;
  img.width = h.width;
  img.height = h.height;
  img.rgb.assign(bytes.begin() + h.data_offset, bytes.begin() + h.data_offset + need);
  return img;
}

LabelMap decode_pgm(std::span<const std::uint8_t> bytes) {
  const Header h = parse_header(bytes, '5');
  const std::size_t need = h.width * h.height;
  if (bytes.size() - h.data_offset < need) {
    throw ParseError("truncated pixel data: need " + std::to_string(need) + " bytes", bytes.size());
  }
  LabelMap m;
  m.width = h.width;
  m.height = h.height;
  m.labels.assign(bytes.begin() + h.data_offset, bytes.begin() + h.data_offset + need);
  return m;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  return encode('6', image.width, image.height, image.rgb);
}

std::vector<std::uint8_t> encode_pgm(const LabelMap& labels) {
  return encode('5', labels.width, labels.height, labels.labels);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Image read_image_ppm(const std::filesystem::path& path) {
  try {
    return decode_ppm(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.offset());
  }
}

LabelMap read_labels_pgm(const std::filesystem::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.offset());
  }
}

void write_image_ppm(const Image& image, const std::filesystem::path& path) { write_file(path, encode_ppm(image)); }

void write_labels_pgm(const LabelMap& labels, const std::filesystem::path& path) {
  write_file(path, encode_pgm(labels));
}

}  // namespace segmenter
