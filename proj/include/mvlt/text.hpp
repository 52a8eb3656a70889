#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvlt/rng.hpp"
#include "mvlt/tensor.hpp"

namespace mvlt {

/// Canonical symbol order: a..z, then 0..9. Class indices follow this order,
/// the end-of-sequence class comes right after the last symbol, and the MASK
/// input token (an embedding row, never a prediction class) after that.
inline constexpr std::string_view kCanonicalSymbols = "abcdefghijklmnopqrstuvwxyz0123456789";

class Charset {
 public:
  // The first num_classes - 1 canonical symbols plus EOS.
  explicit Charset(std::size_t num_classes = kCanonicalSymbols.size() + 1);

  std::size_t num_classes() const { return symbols_.size() + 1; }
  std::size_t eos() const { return symbols_.size(); }
  std::size_t mask_token() const { return symbols_.size() + 1; }
  std::string_view symbols() const { return symbols_; }

  bool contains(char c) const;
  // Case-insensitive lookup; throws LabelError for unknown characters.
  std::size_t index_of(char c) const;
  char symbol(std::size_t index) const;

 private:
  std::string symbols_;
};

using CharTargets = std::vector<std::size_t>;

/// Lowercases, then maps to class indices: chars, one EOS, EOS padding to L.
CharTargets encode_label(std::string_view word, std::size_t max_len, const Charset& charset);

/// Inverse of encode_label: symbols up to the first EOS.
std::string decode_targets(std::span<const std::size_t> targets, const Charset& charset);

struct TextMaskPlan {
  std::vector<std::size_t> masked;    // sorted
  std::vector<std::size_t> unmasked;  // sorted
  double ratio = 0.0;

  std::size_t length() const { return masked.size() + unmasked.size(); }
};

/// For ratio < 1 masks round(ratio * word_len) word positions uniformly at
/// random plus every padding position; ratio 1 masks all L positions.
TextMaskPlan sample_text_mask(std::size_t word_len, double ratio, std::size_t max_len, Rng& rng);

/// Every position masked.
TextMaskPlan full_text_mask(std::size_t max_len);

/// Decoder input ids: the target class at unmasked positions, MASK elsewhere.
std::vector<std::size_t> masked_text_input(std::span<const std::size_t> targets,
                                           const TextMaskPlan& plan, const Charset& charset);

/// Row-wise argmax (lowest index wins ties), truncated at the first EOS.
std::string decode_prediction(const Tensor& logits, const Charset& charset);

std::size_t round_half_up(double x);

}  // namespace mvlt
