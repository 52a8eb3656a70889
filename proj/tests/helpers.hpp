#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvlt/config.hpp"
#include "mvlt/image.hpp"
#include "mvlt/rng.hpp"
#include "mvlt/text.hpp"

namespace mvlt::testing {

/// Uniform-noise images of the model's input size with random words over its
/// charset. Unlabeled samples carry no label.
inline std::vector<ImageSample> random_samples(const ModelConfig& c, std::size_t n,
                                               std::uint64_t seed, bool labeled = true) {
  Rng rng(seed);
  const Charset cs(c.num_classes);
  std::vector<ImageSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    ImageSample s;
    s.image = Image(c.height, c.width, c.channels);
    for (auto& v : s.image.pixels) v = rng.uniform();
    std::string word;
    const std::size_t len = 1 + rng.below(c.max_len - 1);
    for (std::size_t k = 0; k < len; ++k) word.push_back(cs.symbols()[rng.below(cs.symbols().size())]);
    if (labeled) s.label = word;
    s.sample_id = "s" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline std::vector<double> grad_values(const Tensor& t) {
  if (!t.has_grad()) return std::vector<double>(t.numel(), 0.0);
  return {t.grad().begin(), t.grad().end()};
}

}  // namespace mvlt::testing
