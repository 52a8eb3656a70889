#include "mvlt/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mvlt/error.hpp"

namespace mvlt {

void write_pnm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw DataError("PNM output supports 1 or 3 channels, got " + std::to_string(image.channels));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << (image.channels == 1 ? "P5" : "P6") << '\n'
      << image.width << ' ' << image.height << '\n'
      << "255\n";
  std::string bytes(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const double v = std::clamp(image.pixels[i], 0.0, 1.0);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in, const std::filesystem::path& path) {
  std::string tok;
  while (true) {
    int c = in.get();
    if (c == EOF) throw FormatError("truncated PNM header in " + path.string());
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
}

std::size_t parse_dim(const std::string& tok, const std::filesystem::path& path) {
  try {
    std::size_t pos = 0;
    long v = std::stol(tok, &pos);
    if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError("bad PNM header value '" + tok + "' in " + path.string());
  }
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = header_token(in, path);
  std::size_t channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw FormatError("unsupported image format '" + magic + "' in " + path.string());
  const std::size_t w = parse_dim(header_token(in, path), path);
  const std::size_t h = parse_dim(header_token(in, path), path);
  const std::size_t maxval = parse_dim(header_token(in, path), path);
  if (maxval != 255) throw FormatError("only maxval 255 is supported: " + path.string());
  Image img(h, w, channels);
  std::string bytes(img.pixels.size(), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw FormatError("truncated pixel data in " + path.string());
  }
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    img.pixels[i] = static_cast<double>(static_cast<unsigned char>(bytes[i])) / 255.0;
  }
  return img;
}

}  // namespace mvlt
