#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mvlt/config.hpp"
#include "mvlt/optim.hpp"
#include "mvlt/text.hpp"
#include "mvlt/vision.hpp"

namespace mvlt {

/// Decoder predictions split by the plans that built its input. Members are
/// undefined tensors when the corresponding index set is empty.
struct DecoderOutput {
  Tensor pixels;       // N x P^2C, grid order
  Tensor text_logits;  // L x M, position order
  Tensor pixels_masked;    // v_m hat
  Tensor pixels_unmasked;  // v_u hat
  Tensor text_masked;      // t_m hat
  Tensor text_unmasked;    // t_u hat
};

/// Masked vision-language transformer: a ViT encoder over visible patches and
/// a single multi-modal decoder over N visual + L text slots. The explicit and
/// implicit decoding branches are two calls into the same decoder weights.
class MvltModel {
 public:
  explicit MvltModel(const ModelConfig& config, std::uint64_t seed = 0);
  // Parameters are shared handles, so a copy would alias the weights.
  MvltModel(const MvltModel&) = delete;
  MvltModel& operator=(const MvltModel&) = delete;
  MvltModel(MvltModel&&) = default;
  MvltModel& operator=(MvltModel&&) = default;

  const ModelConfig& config() const { return config_; }
  const Charset& charset() const { return charset_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// Visible patches -> N_u x D1 features, rows in plan.unmasked order.
  Tensor encode_masked(const Tensor& patches, const PatchMaskPlan& plan) const;
  /// All patches -> N x D1.
  Tensor encode_full(const Tensor& patches) const;

  /// Decoder call with text given as class ids; positions in text_plan.masked
  /// are replaced by the MASK token. `visual` holds encoder rows for
  /// patch_plan.unmasked, in that order.
  DecoderOutput decode(const Tensor& visual, const PatchMaskPlan& patch_plan,
                       std::span<const std::size_t> text_targets,
                       const TextMaskPlan& text_plan) const;

  /// Decoder call with precomputed L x D2 text embeddings (all positions
  /// treated as visible input, all positions predicted).
  DecoderOutput decode_embedded(const Tensor& visual, const PatchMaskPlan& patch_plan,
                                const Tensor& text_embeddings) const;

  /// Logits t_0..t_K for a fully visible image encoding `v` (N x D1).
  /// Iteration k feeds softmax(t_{k-1}), detached, through the correction
  /// projection as the text input.
  std::vector<Tensor> iterative_correct(const Tensor& v, std::size_t iterations) const;

  /// Parameter names that belong to the (single) decoder.
  std::vector<std::string> decoder_parameter_names() const;

 private:
  struct Block {
    std::string prefix;
    std::size_t heads;
  };

  Tensor run_block(const Block& block, const Tensor& x) const;
  void run_decoder(const Tensor& visual, const PatchMaskPlan& patch_plan,
                   const Tensor& text_embeddings, DecoderOutput& out) const;
  const Tensor& p(const std::string& name) const { return params_.get(name); }

  void add_block(const std::string& prefix, std::size_t dim, std::optional<int> layer, Rng& rng);

  ModelConfig config_;
  Charset charset_;
  ParameterStore params_;
  std::vector<Block> encoder_blocks_;
  std::vector<Block> decoder_blocks_;
};

}  // namespace mvlt
