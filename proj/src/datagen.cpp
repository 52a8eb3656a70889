#include "mvlt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_map>

#include "mvlt/error.hpp"

namespace mvlt {
namespace fs = std::filesystem;

namespace {

// Row strings, '#' = ink.
const std::unordered_map<char, GlyphFont::Glyph>& glyph_table() {
  static const std::unordered_map<char, GlyphFont::Glyph> table = {
      {'a', {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
      {'b', {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."}},
      {'c', {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."}},
      {'d', {"####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."}},
      {'e', {"#####", "#....", "#....", "####.", "#....", "#....", "#####"}},
      {'f', {"#####", "#....", "#....", "####.", "#....", "#....", "#...."}},
      {'g', {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"}},
      {'h', {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
      {'i', {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
      {'j', {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."}},
      {'k', {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"}},
      {'l', {"#....", "#....", "#....", "#....", "#....", "#....", "#####"}},
      {'m', {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"}},
      {'n', {"#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"}},
      {'o', {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
      {'p', {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."}},
      {'q', {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"}},
      {'r', {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"}},
      {'s', {".####", "#....", "#....", ".###.", "....#", "....#", "####."}},
      {'t', {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}},
      {'u', {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
      {'v', {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
      {'w', {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."}},
      {'x', {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"}},
      {'y', {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."}},
      {'z', {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"}},
      {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
      {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
      {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
      {'3', {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."}},
      {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
      {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
      {'6', {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}},
      {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
      {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
      {'9', {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}},
  };
  return table;
}

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::string sample_file_name(std::size_t global_index, std::size_t channels) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%08zu.%s", global_index, channels == 1 ? "pgm" : "ppm");
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_manifest_json(const fs::path& root, std::size_t n, std::uint64_t seed, bool labeled,
                         const Canvas& canvas, std::size_t index_offset) {
  nlohmann::json j;
  j["format"] = "mvlt-dataset";
  j["version"] = 1;
  j["n"] = n;
  j["seed"] = seed;
  j["labeled"] = labeled;
  j["height"] = canvas.height;
  j["width"] = canvas.width;
  j["channels"] = canvas.channels;
  j["index_offset"] = index_offset;
  write_text(root / "manifest.json", j.dump(2) + "\n");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

const GlyphFont& GlyphFont::builtin() {
  static const GlyphFont font;
  return font;
}

bool GlyphFont::has(char c) const { return glyph_table().contains(lower(c)); }

const GlyphFont::Glyph& GlyphFont::glyph(char c) const {
  auto it = glyph_table().find(lower(c));
  if (it == glyph_table().end()) throw LabelError(std::string("no glyph for '") + c + "'");
  return it->second;
}

bool GlyphFont::ink(char c, std::size_t row, std::size_t col) const {
  return glyph(c)[row][col] == '#';
}

std::size_t GlyphFont::ink_count(char c) const {
  std::size_t n = 0;
  for (auto row : glyph(c)) n += static_cast<std::size_t>(std::count(row.begin(), row.end(), '#'));
  return n;
}

RenderStyle sample_style(std::string_view word, std::uint64_t style_seed, const Canvas& canvas) {
  if (word.empty()) throw LabelError("cannot render an empty word");
  const std::size_t len = word.size();
  const std::size_t gw = GlyphFont::kWidth, gh = GlyphFont::kHeight;
  Rng rng = Rng::derive(style_seed, {0});
  RenderStyle s;

  const std::size_t sy_max = std::min<std::size_t>(3, canvas.height / gh);
  if (sy_max == 0) throw DataError("canvas height " + std::to_string(canvas.height) + " below glyph height");
  const std::size_t sy_min = std::max<std::size_t>(1, sy_max - 1);
  s.scale_y = sy_min + rng.below(sy_max - sy_min + 1);

  std::size_t sx_max = 0;
  for (std::size_t sx = 3; sx >= 1; --sx) {
    if (len * gw * sx + (len - 1) * sx <= canvas.width) {
      sx_max = sx;
      break;
    }
  }
  if (sx_max == 0) {
    if (len * gw > canvas.width) {
      throw DataError("word '" + std::string(word) + "' does not fit a canvas of width " +
                      std::to_string(canvas.width));
    }
    s.scale_x = 1;
    s.gap = 0;
  } else {
    const std::size_t sx_min = std::max<std::size_t>(1, sx_max - 1);
    s.scale_x = sx_min + rng.below(sx_max - sx_min + 1);
    s.gap = s.scale_x;
  }

  const std::size_t word_w = len * gw * s.scale_x + (len - 1) * s.gap;
  const std::size_t glyph_h = gh * s.scale_y;
  s.shear = rng.uniform(-0.15, 0.15);
  auto max_shift = static_cast<std::size_t>(std::lround(std::abs(s.shear) * glyph_h / 2.0)) + 1;
  if (word_w + 2 * max_shift > canvas.width) {
    s.shear = 0.0;
    max_shift = 0;
  }
  s.origin_x = max_shift + rng.below(canvas.width - word_w - 2 * max_shift + 1);
  s.origin_y = rng.below(canvas.height - glyph_h + 1);

  double bg = rng.uniform(0.55, 0.95);
  double fg = rng.uniform(0.05, bg - 0.45);
  if (rng.uniform() < 0.5) {
    bg = 1.0 - bg;
    fg = 1.0 - fg;
  }
  const double brightness = rng.uniform(0.85, 1.0);
  s.background = bg * brightness;
  s.foreground = fg * brightness;
  s.noise_sigma = rng.uniform(0.0, 0.03);
  if (canvas.channels == 3) {
    for (auto& t : s.tint) t = rng.uniform(0.85, 1.0);
  }
  return s;
}

ImageSample render_word(std::string_view word, std::uint64_t style_seed, const Canvas& canvas,
                        const Charset& charset) {
  if (word.empty()) throw LabelError("cannot render an empty word");
  if (canvas.channels != 1 && canvas.channels != 3) {
    throw ConfigError("canvas must have 1 or 3 channels");
  }
  for (char c : word) charset.index_of(c);
  const auto& font = GlyphFont::builtin();
  const RenderStyle s = sample_style(word, style_seed, canvas);

  const std::size_t h = canvas.height, w = canvas.width, ch = canvas.channels;
  std::vector<bool> ink(h * w, false);
  const std::size_t glyph_h = GlyphFont::kHeight * s.scale_y;
  const double center = static_cast<double>(s.origin_y) + static_cast<double>(glyph_h) / 2.0;
  for (std::size_t k = 0; k < word.size(); ++k) {
    const std::size_t x0 = s.origin_x + k * (GlyphFont::kWidth * s.scale_x + s.gap);
    for (std::size_t gy = 0; gy < glyph_h; ++gy) {
      const std::size_t y = s.origin_y + gy;
      const auto shift = std::lround(s.shear * (static_cast<double>(y) + 0.5 - center));
      for (std::size_t gx = 0; gx < GlyphFont::kWidth * s.scale_x; ++gx) {
        if (!font.ink(word[k], gy / s.scale_y, gx / s.scale_x)) continue;
        const auto x = static_cast<long>(x0 + gx) + shift;
        ink[y * w + static_cast<std::size_t>(x)] = true;
      }
    }
  }

  ImageSample out;
  out.image = Image(h, w, ch);
  out.label = std::string();
  for (char c : word) out.label->push_back(lower(c));
  Rng noise = Rng::derive(style_seed, {1});
  for (std::size_t i = 0; i < h * w; ++i) {
    const double base = ink[i] ? s.foreground : s.background;
    for (std::size_t c = 0; c < ch; ++c) {
      const double v = base * s.tint[c] + s.noise_sigma * noise.normal();
      out.image.pixels[i * ch + c] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

WordSource WordSource::from_file(const fs::path& path, const Charset& charset,
                                 std::size_t max_len) {
  WordSource src;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.size() > max_len) continue;
    if (!std::all_of(line.begin(), line.end(), [&](char c) { return charset.contains(c); })) continue;
    std::string word;
    for (char c : line) word.push_back(lower(c));
    src.words.push_back(std::move(word));
  }
  if (src.words.empty()) throw DataError("no usable words in " + path.string());
  return src;
}

std::string WordSource::draw(Rng& rng, const Charset& charset) const {
  if (!words.empty()) return words[rng.below(words.size())];
  if (min_len == 0 || min_len > max_len) throw ConfigError("invalid word length range");
  const std::size_t len = min_len + rng.below(max_len - min_len + 1);
  std::string word;
  for (std::size_t i = 0; i < len; ++i) word.push_back(charset.symbols()[rng.below(charset.symbols().size())]);
  return word;
}

fs::path DatasetManifest::image_path(std::size_t i) const { return root / "images" / entries.at(i).file; }

const std::string& DatasetManifest::label(std::size_t i) const {
  if (!labeled) throw DataError("dataset " + root.string() + " is unlabeled");
  const auto& e = entries.at(i);
  if (!e.label) throw DataError("sample " + e.file + " has no label");
  return *e.label;
}

DatasetManifest make_dataset(const DatasetOptions& opt, const Charset& charset) {
  if (opt.n == 0) throw ConfigError("dataset size must be positive");
  ensure_dir(opt.out_dir / "images");
  DatasetManifest m;
  m.root = opt.out_dir;
  m.labeled = opt.labeled;
  m.seed = opt.seed;
  m.index_offset = opt.index_offset;
  m.canvas = opt.canvas;
  std::string tsv;
  for (std::size_t i = 0; i < opt.n; ++i) {
    const std::size_t gi = opt.index_offset + i;
    Rng word_rng = Rng::derive(opt.seed, {0x776f7264, gi});
    std::string word = opt.words.draw(word_rng, charset);
    for (int tries = 0; opt.exclude.contains(word); ++tries) {
      if (tries > 10000) throw DataError("word source exhausted by the exclusion list");
      word = opt.words.draw(word_rng, charset);
    }
    const std::uint64_t style_seed = Rng::derive(opt.seed, {0x7374796c, gi}).next_u64();
    ImageSample s = render_word(word, style_seed, opt.canvas, charset);
    const std::string file = sample_file_name(gi, opt.canvas.channels);
    write_pnm(opt.out_dir / "images" / file, s.image);
    m.entries.push_back({file, opt.labeled ? s.label : std::nullopt});
    if (opt.labeled) tsv += file + "\t" + *s.label + "\n";
  }
  if (opt.labeled) write_text(opt.out_dir / "labels.tsv", tsv);
  write_manifest_json(opt.out_dir, opt.n, opt.seed, opt.labeled, opt.canvas, opt.index_offset);
  return m;
}

DatasetManifest load_manifest(const fs::path& root) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(root / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad manifest.json in " + root.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = root;
  std::size_t n = 0;
  try {
    if (j.at("format") != "mvlt-dataset" || j.at("version") != 1) {
      throw FormatError("unsupported dataset format in " + root.string());
    }
    n = j.at("n").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.labeled = j.at("labeled").get<bool>();
    m.canvas = {j.at("height").get<std::size_t>(), j.at("width").get<std::size_t>(),
                j.at("channels").get<std::size_t>()};
    m.index_offset = j.value("index_offset", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad manifest.json in " + root.string() + ": " + e.what());
  }

  if (m.labeled) {
    std::istringstream in(read_text(root / "labels.tsv"));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos) throw FormatError("labels.tsv row without a tab: " + line);
      m.entries.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
  } else {
    if (fs::exists(root / "labels.tsv")) {
      throw DataError("unlabeled dataset " + root.string() + " must not carry labels.tsv");
    }
    std::vector<std::string> files;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(root / "images", ec)) {
      if (e.is_regular_file()) files.push_back(e.path().filename().string());
    }
    if (ec) throw IoError("cannot list " + (root / "images").string() + ": " + ec.message());
    std::sort(files.begin(), files.end());
    for (auto& f : files) m.entries.push_back({std::move(f), std::nullopt});
  }
  if (m.entries.size() != n) {
    throw DataError("dataset " + root.string() + " lists " + std::to_string(m.entries.size()) +
                    " samples, manifest says " + std::to_string(n));
  }
  return m;
}

DatasetManifest strip_labels(const DatasetManifest& manifest, const fs::path& out_root) {
  if (!manifest.labeled) {
    std::cerr << "warning: dataset " << manifest.root.string() << " is already unlabeled\n";
    return manifest;
  }
  ensure_dir(out_root / "images");
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    std::error_code ec;
    fs::copy_file(manifest.image_path(i), out_root / "images" / manifest.entries[i].file,
                  fs::copy_options::overwrite_existing, ec);
    if (ec) throw IoError("cannot copy " + manifest.image_path(i).string() + ": " + ec.message());
  }
  write_manifest_json(out_root, manifest.size(), manifest.seed, false, manifest.canvas,
                      manifest.index_offset);
  return load_manifest(out_root);
}

std::vector<ImageSample> load_samples(const DatasetManifest& manifest) {
  std::vector<ImageSample> out;
  out.reserve(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    ImageSample s;
    s.image = read_pnm(manifest.image_path(i));
    if (s.image.height != manifest.canvas.height || s.image.width != manifest.canvas.width ||
        s.image.channels != manifest.canvas.channels) {
      throw DataError("image " + manifest.image_path(i).string() + " does not match the manifest canvas");
    }
    s.label = manifest.entries[i].label;
    s.sample_id = fs::path(manifest.entries[i].file).stem().string();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mvlt
