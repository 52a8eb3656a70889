#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mvlt/config.hpp"
#include "mvlt/image.hpp"
#include "mvlt/model.hpp"

namespace mvlt {

/// Scalar values of one pretraining step; disabled terms are empty.
struct PretrainLossReport {
  std::optional<double> v1;
  std::optional<double> t1;
  std::optional<double> v2;
  std::optional<double> t2;
  std::optional<double> ur;
  double total = 0.0;
};

/// Per-term scalar tensors; undefined tensors are disabled terms.
struct PretrainTerms {
  Tensor v1, t1, v2, t2;
};

struct PretrainLoss {
  Tensor total;
  PretrainLossReport report;
};

/// MSE restricted to the masked patches' pixels.
Tensor masked_mse(const Tensor& predicted_masked, const Tensor& target_masked);

/// alpha*v1 + beta*v2 + gamma*t1 + epsilon*t2 over the defined terms.
Tensor combine_pretrain_terms(const PretrainTerms& terms, const ModelConfig& config);

/// Both decoder views of one labeled sample, decoded on the same patch plan.
/// Either view may be null when all of its terms are disabled.
PretrainLoss pretrain_loss(const DecoderOutput* explicit_view, const DecoderOutput* implicit_view,
                           const Tensor& masked_pixels, std::span<const std::size_t> text_targets,
                           const TextMaskPlan& explicit_plan, const TextMaskPlan& implicit_plan,
                           const ModelConfig& config, const LossToggles& toggles);

/// Iterative-correction objective over logits t_0..t_K. The `paper` variant is
/// 1/2 CE_0 + 1/(2(K-1)) sum_{j=1..K} CE_j and rejects K == 1; K == 0 is
/// plain CE_0 under either variant.
Tensor finetune_loss(std::span<const Tensor> logits, std::span<const std::size_t> targets,
                     std::size_t iterations, FinetuneLossVariant variant);

/// Reconstruction-only loss for unlabeled images.
Tensor unlabeled_loss(const Tensor& predicted_masked, const Tensor& target_masked);

struct LabeledExample {
  Tensor patches;  // N x P^2C
  CharTargets targets;
  std::size_t word_len = 0;
  PatchMaskPlan patch_plan;
  TextMaskPlan explicit_plan;
  TextMaskPlan implicit_plan;
};

struct UnlabeledExample {
  Tensor patches;
  PatchMaskPlan patch_plan;
};

struct MixedBatch {
  std::vector<LabeledExample> labeled;
  std::vector<UnlabeledExample> unlabeled;
};

/// Patchifies the images and draws mask plans. Labels of the unlabeled
/// samples are never read.
MixedBatch build_mixed_batch(std::span<const ImageSample> labeled,
                             std::span<const ImageSample> unlabeled, const ModelConfig& config,
                             Rng& rng);

/// Mean pretraining objective over labeled samples plus mean L_ur over
/// unlabeled samples, as one differentiable scalar.
PretrainLoss mixed_batch_loss(const MixedBatch& batch, const MvltModel& model,
                              const LossToggles& toggles);

struct FinetuneLoss {
  Tensor total;
  std::vector<double> iteration_ce;  // batch-mean CE of each t_k
};

/// Mean fine-tuning objective over a labeled batch of fully visible images.
FinetuneLoss finetune_batch_loss(std::span<const Tensor> patches,
                                 std::span<const CharTargets> targets, const MvltModel& model,
                                 std::size_t iterations);

}  // namespace mvlt
