#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mvlt {

/// H x W x C pixels, channel-last, nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool same_dims(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

struct ImageSample {
  Image image;
  std::optional<std::string> label;
  std::string sample_id;
};

/// Binary PGM (C=1) or PPM (C=3), maxval 255. Values are clamped to [0, 1]
/// and rounded to 8 bits.
void write_pnm(const std::filesystem::path& path, const Image& image);
Image read_pnm(const std::filesystem::path& path);

}  // namespace mvlt
