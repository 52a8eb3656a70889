#include "mvlt/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "mvlt/error.hpp"

namespace mvlt {

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

Charset::Charset(std::size_t num_classes) {
  if (num_classes < 2 || num_classes > kCanonicalSymbols.size() + 1) {
    throw ConfigError("num_classes must lie in [2, " +
                      std::to_string(kCanonicalSymbols.size() + 1) + "], got " +
                      std::to_string(num_classes));
  }
  symbols_ = std::string(kCanonicalSymbols.substr(0, num_classes - 1));
}

bool Charset::contains(char c) const {
  const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return symbols_.find(lc) != std::string::npos;
}

std::size_t Charset::index_of(char c) const {
  const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  auto pos = symbols_.find(lc);
  if (pos == std::string::npos) {
    throw LabelError(std::string("character '") + c + "' is not in the charset");
  }
  return pos;
}

char Charset::symbol(std::size_t index) const {
  if (index >= symbols_.size()) throw IndexError("class " + std::to_string(index) + " is no symbol");
  return symbols_[index];
}

CharTargets encode_label(std::string_view word, std::size_t max_len, const Charset& charset) {
  if (word.empty()) throw LabelError("empty label");
  if (word.size() + 1 > max_len) {
    throw LabelError("label '" + std::string(word) + "' exceeds " + std::to_string(max_len - 1) +
                     " characters");
  }
  CharTargets out(max_len, charset.eos());
  for (std::size_t i = 0; i < word.size(); ++i) out[i] = charset.index_of(word[i]);
  return out;
}

std::string decode_targets(std::span<const std::size_t> targets, const Charset& charset) {
  std::string out;
  for (auto t : targets) {
    if (t == charset.eos()) break;
    out.push_back(charset.symbol(t));
  }
  return out;
}

TextMaskPlan sample_text_mask(std::size_t word_len, double ratio, std::size_t max_len, Rng& rng) {
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("text mask ratio outside [0, 1]");
  if (word_len > max_len) throw LabelError("word longer than the text sequence");
  TextMaskPlan plan;
  plan.ratio = ratio;
  if (ratio >= 1.0) return full_text_mask(max_len);
  std::vector<bool> masked(max_len, false);
  for (auto i : rng.choose(word_len, round_half_up(ratio * static_cast<double>(word_len)))) {
    masked[i] = true;
  }
  for (std::size_t i = word_len; i < max_len; ++i) masked[i] = true;
  for (std::size_t i = 0; i < max_len; ++i) (masked[i] ? plan.masked : plan.unmasked).push_back(i);
  return plan;
}

TextMaskPlan full_text_mask(std::size_t max_len) {
  TextMaskPlan plan;
  plan.ratio = 1.0;
  plan.masked.resize(max_len);
  for (std::size_t i = 0; i < max_len; ++i) plan.masked[i] = i;
  return plan;
}

std::vector<std::size_t> masked_text_input(std::span<const std::size_t> targets,
                                           const TextMaskPlan& plan, const Charset& charset) {
  if (plan.length() != targets.size()) {
    throw DimensionError("text plan covers " + std::to_string(plan.length()) + " positions, got " +
                         std::to_string(targets.size()) + " targets");
  }
  std::vector<std::size_t> ids(targets.begin(), targets.end());
  for (auto i : plan.masked) ids[i] = charset.mask_token();
  return ids;
}

std::string decode_prediction(const Tensor& logits, const Charset& charset) {
  const std::size_t m = logits.cols();
  if (m != charset.num_classes()) {
    throw DimensionError("logits have " + std::to_string(m) + " classes, charset " +
                         std::to_string(charset.num_classes()));
  }
  std::string out;
  auto d = logits.data();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = d.subspan(r * m, m);
    const auto best =
        static_cast<std::size_t>(std::distance(row.begin(), std::max_element(row.begin(), row.end())));
    if (best == charset.eos()) break;
    out.push_back(charset.symbol(best));
  }
  return out;
}

}  // namespace mvlt
