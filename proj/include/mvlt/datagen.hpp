#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mvlt/image.hpp"
#include "mvlt/rng.hpp"
#include "mvlt/text.hpp"

namespace mvlt {

/// 5x7 binary bitmap font covering the canonical symbols.
class GlyphFont {
 public:
  static constexpr std::size_t kWidth = 5;
  static constexpr std::size_t kHeight = 7;
  using Glyph = std::array<std::string_view, kHeight>;

  static const GlyphFont& builtin();

  bool has(char c) const;
  const Glyph& glyph(char c) const;
  bool ink(char c, std::size_t row, std::size_t col) const;
  std::size_t ink_count(char c) const;
};

struct Canvas {
  std::size_t height = 32;
  std::size_t width = 128;
  std::size_t channels = 1;
};

/// Everything random about one rendered word, derived from its style seed.
struct RenderStyle {
  std::size_t scale_x = 1;
  std::size_t scale_y = 1;
  std::size_t gap = 1;  // blank columns between glyphs, in scaled pixels
  std::size_t origin_x = 0;
  std::size_t origin_y = 0;
  double shear = 0.0;  // horizontal shift per row, in pixels
  double foreground = 0.0;
  double background = 1.0;
  double noise_sigma = 0.0;
  std::array<double, 3> tint{1.0, 1.0, 1.0};
};

RenderStyle sample_style(std::string_view word, std::uint64_t style_seed, const Canvas& canvas);

/// Draws the word with nearest-pixel glyph placement (no antialiasing), so
/// every ink pixel is exactly foreground before noise.
ImageSample render_word(std::string_view word, std::uint64_t style_seed, const Canvas& canvas,
                        const Charset& charset = Charset());

struct WordSource {
  std::size_t min_len = 3;
  std::size_t max_len = 10;
  std::vector<std::string> words;  // when non-empty, words are drawn from this list

  static WordSource from_file(const std::filesystem::path& path, const Charset& charset,
                              std::size_t max_len);
  std::string draw(Rng& rng, const Charset& charset) const;
};

struct DatasetManifest {
  struct Entry {
    std::string file;  // relative to <root>/images
    std::optional<std::string> label;
  };

  std::filesystem::path root;
  std::vector<Entry> entries;
  bool labeled = false;
  std::uint64_t seed = 0;
  std::size_t index_offset = 0;
  Canvas canvas;

  std::size_t size() const { return entries.size(); }
  std::filesystem::path image_path(std::size_t i) const;
  // Throws DataError when the manifest carries no labels.
  const std::string& label(std::size_t i) const;
};

struct DatasetOptions {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  WordSource words;
  std::filesystem::path out_dir;
  bool labeled = true;
  Canvas canvas;
  // Global index of the first sample; splits use disjoint ranges.
  std::size_t index_offset = 0;
  // Words that must not appear (e.g. the training vocabulary of an eval split).
  std::set<std::string> exclude;
};

/// Writes images/<id>.pgm, labels.tsv (labeled only) and manifest.json.
DatasetManifest make_dataset(const DatasetOptions& options, const Charset& charset = Charset());

/// Reads a dataset directory written by make_dataset or strip_labels.
DatasetManifest load_manifest(const std::filesystem::path& root);

/// Copies the images of a labeled dataset to out_root without any labels.
/// An unlabeled input is returned unchanged with a warning.
DatasetManifest strip_labels(const DatasetManifest& manifest, const std::filesystem::path& out_root);

/// Loads every image of the manifest as samples, labels attached when present.
std::vector<ImageSample> load_samples(const DatasetManifest& manifest);

}  // namespace mvlt
