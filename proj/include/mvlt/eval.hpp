#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "mvlt/image.hpp"
#include "mvlt/model.hpp"

namespace mvlt {

struct EvalReport {
  double word_accuracy = 0.0;  // from t_K
  double char_accuracy = 0.0;  // per-position match over all L targets of t_K
  std::size_t count = 0;
  std::vector<double> iteration_accuracy;  // word accuracy of t_0..t_K
  std::string config_hash;

  nlohmann::json to_json() const;
  /// "iteration_count,accuracy" rows for k = 0..K.
  std::string accuracy_curve_csv() const;
};

/// Word accuracy compares decode_prediction against the label, case-insensitive.
EvalReport evaluate(const MvltModel& model, std::span<const ImageSample> samples, std::size_t iterations);

/// Decoded words for t_0..t_K of one image.
std::vector<std::string> predict(const MvltModel& model, const Image& image, std::size_t iterations);

/// Four panels of a pretraining reconstruction, all at the input size.
struct Reconstruction {
  Image masked;          // masked patches zeroed
  Image recon_explicit;  // decoder pixels at masked slots, input elsewhere
  Image recon_implicit;
  Image ground_truth;
  std::string text_explicit;
  std::string text_implicit;
  std::size_t masked_patches = 0;
};

/// Runs both decoder views on one random patch plan drawn from `seed`. The
/// explicit view sees the label with the configured ratio masked, or only
/// MASK tokens when no label is given.
Reconstruction reconstruct(const MvltModel& model, const ImageSample& sample, std::uint64_t seed);

}  // namespace mvlt
