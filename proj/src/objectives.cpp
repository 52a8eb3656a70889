#include "mvlt/objectives.hpp"

#include "mvlt/error.hpp"
#include "mvlt/ops.hpp"

namespace mvlt {
namespace {

std::vector<std::size_t> pick(std::span<const std::size_t> targets,
                              const std::vector<std::size_t>& positions) {
  std::vector<std::size_t> out;
  out.reserve(positions.size());
  for (auto i : positions) out.push_back(targets[i]);
  return out;
}

Tensor accumulate(const Tensor& acc, const Tensor& term) {
  return acc.defined() ? ops::add(acc, term) : term;
}

std::optional<double> value_of(const Tensor& t) {
  return t.defined() ? std::optional<double>(t.item()) : std::nullopt;
}

}  // namespace

Tensor masked_mse(const Tensor& predicted_masked, const Tensor& target_masked) {
  return ops::mse(predicted_masked, target_masked);
}

Tensor unlabeled_loss(const Tensor& predicted_masked, const Tensor& target_masked) {
  return masked_mse(predicted_masked, target_masked);
}

Tensor combine_pretrain_terms(const PretrainTerms& t, const ModelConfig& c) {
  Tensor total;
  if (t.v1.defined()) total = accumulate(total, ops::scale(t.v1, c.alpha));
  if (t.v2.defined()) total = accumulate(total, ops::scale(t.v2, c.beta));
  if (t.t1.defined()) total = accumulate(total, ops::scale(t.t1, c.gamma));
  if (t.t2.defined()) total = accumulate(total, ops::scale(t.t2, c.epsilon));
  return total.defined() ? total : Tensor::scalar(0.0);
}

PretrainLoss pretrain_loss(const DecoderOutput* explicit_view, const DecoderOutput* implicit_view,
                           const Tensor& masked_pixels, std::span<const std::size_t> text_targets,
                           const TextMaskPlan& explicit_plan, const TextMaskPlan& implicit_plan,
                           const ModelConfig& config, const LossToggles& on) {
  PretrainTerms terms;
  if (on.decoder1() && !explicit_view) throw ContractError("explicit decoder view required");
  if (on.decoder2() && !implicit_view) throw ContractError("implicit decoder view required");
  if (on.v1) terms.v1 = masked_mse(explicit_view->pixels_masked, masked_pixels);
  if (on.t1 && !explicit_plan.masked.empty()) {
    terms.t1 = ops::cross_entropy(explicit_view->text_masked, pick(text_targets, explicit_plan.masked));
  }
  if (on.v2) terms.v2 = masked_mse(implicit_view->pixels_masked, masked_pixels);
  if (on.t2) {
    terms.t2 = ops::cross_entropy(implicit_view->text_masked, pick(text_targets, implicit_plan.masked));
  }
  PretrainLoss out;
  out.total = combine_pretrain_terms(terms, config);
  out.report.v1 = value_of(terms.v1);
  out.report.t1 = on.t1 ? std::optional<double>(terms.t1.defined() ? terms.t1.item() : 0.0) : std::nullopt;
  out.report.v2 = value_of(terms.v2);
  out.report.t2 = value_of(terms.t2);
  out.report.total = out.total.item();
  return out;
}

Tensor finetune_loss(std::span<const Tensor> logits, std::span<const std::size_t> targets,
                     std::size_t k, FinetuneLossVariant variant) {
  if (logits.size() != k + 1) {
    throw ConfigError("finetune_loss: expected " + std::to_string(k + 1) + " logit sets, got " +
                      std::to_string(logits.size()));
  }
  if (k == 0) return ops::cross_entropy(logits[0], targets);
  double tail_weight = 0.0;
  if (variant == FinetuneLossVariant::paper) {
    if (k == 1) throw ConfigError("finetune_loss: K = 1 makes the 1/(2(K-1)) weight undefined");
    tail_weight = 1.0 / (2.0 * static_cast<double>(k - 1));
  } else {
    tail_weight = 1.0 / (2.0 * static_cast<double>(k));
  }
  Tensor total = ops::scale(ops::cross_entropy(logits[0], targets), 0.5);
  for (std::size_t j = 1; j <= k; ++j) {
    total = ops::add(total, ops::scale(ops::cross_entropy(logits[j], targets), tail_weight));
  }
  return total;
}

MixedBatch build_mixed_batch(std::span<const ImageSample> labeled,
                             std::span<const ImageSample> unlabeled, const ModelConfig& config,
                             Rng& rng) {
  const Charset charset(config.num_classes);
  MixedBatch batch;
  for (const auto& s : labeled) {
    if (!s.label) throw DataError("labeled sample " + s.sample_id + " has no label");
    LabeledExample ex;
    ex.patches = patchify(s.image, config.patch).patches;
    ex.targets = encode_label(*s.label, config.max_len, charset);
    ex.word_len = s.label->size();
    ex.patch_plan = sample_patch_mask(config.num_patches(), config.patch_mask_ratio, rng);
    ex.explicit_plan = sample_text_mask(ex.word_len, config.text_mask_ratio_explicit, config.max_len, rng);
    ex.implicit_plan = sample_text_mask(ex.word_len, config.text_mask_ratio_implicit, config.max_len, rng);
    batch.labeled.push_back(std::move(ex));
  }
  for (const auto& s : unlabeled) {
    UnlabeledExample ex;
    ex.patches = patchify(s.image, config.patch).patches;
    ex.patch_plan = sample_patch_mask(config.num_patches(), config.patch_mask_ratio, rng);
    batch.unlabeled.push_back(std::move(ex));
  }
  return batch;
}

PretrainLoss mixed_batch_loss(const MixedBatch& batch, const MvltModel& model,
                              const LossToggles& on) {
  const auto& cfg = model.config();
  if (batch.labeled.empty() && on.any()) {
    throw ConfigError("supervised pretraining losses need at least one labeled sample");
  }
  if (batch.labeled.empty() && batch.unlabeled.empty()) throw ConfigError("empty batch");

  PretrainLoss out;
  Tensor supervised;
  double sum_v1 = 0, sum_t1 = 0, sum_v2 = 0, sum_t2 = 0;
  if (on.any()) {
    for (const auto& ex : batch.labeled) {
      Tensor visual = model.encode_masked(ex.patches, ex.patch_plan);
      Tensor masked_pixels = ops::gather_rows(ex.patches, ex.patch_plan.masked);
      std::optional<DecoderOutput> d1, d2;
      if (on.decoder1()) d1 = model.decode(visual, ex.patch_plan, ex.targets, ex.explicit_plan);
      if (on.decoder2()) d2 = model.decode(visual, ex.patch_plan, ex.targets, ex.implicit_plan);
      auto loss = pretrain_loss(d1 ? &*d1 : nullptr, d2 ? &*d2 : nullptr, masked_pixels, ex.targets,
                                ex.explicit_plan, ex.implicit_plan, cfg, on);
      supervised = accumulate(supervised, loss.total);
      sum_v1 += loss.report.v1.value_or(0.0);
      sum_t1 += loss.report.t1.value_or(0.0);
      sum_v2 += loss.report.v2.value_or(0.0);
      sum_t2 += loss.report.t2.value_or(0.0);
    }
    const double n1 = static_cast<double>(batch.labeled.size());
    supervised = ops::scale(supervised, 1.0 / n1);
    if (on.v1) out.report.v1 = sum_v1 / n1;
    if (on.t1) out.report.t1 = sum_t1 / n1;
    if (on.v2) out.report.v2 = sum_v2 / n1;
    if (on.t2) out.report.t2 = sum_t2 / n1;
  }

  Tensor unsupervised;
  if (!batch.unlabeled.empty()) {
    const auto blank = CharTargets(cfg.max_len, model.charset().eos());
    const auto all_masked = full_text_mask(cfg.max_len);
    for (const auto& ex : batch.unlabeled) {
      Tensor visual = model.encode_masked(ex.patches, ex.patch_plan);
      auto d = model.decode(visual, ex.patch_plan, blank, all_masked);
      unsupervised = accumulate(
          unsupervised,
          unlabeled_loss(d.pixels_masked, ops::gather_rows(ex.patches, ex.patch_plan.masked)));
    }
    unsupervised = ops::scale(unsupervised, 1.0 / static_cast<double>(batch.unlabeled.size()));
    out.report.ur = unsupervised.item();
  }

  if (supervised.defined() && unsupervised.defined()) out.total = ops::add(supervised, unsupervised);
  else if (supervised.defined()) out.total = supervised;
  else if (unsupervised.defined()) out.total = unsupervised;
  else out.total = Tensor::scalar(0.0);
  out.report.total = out.total.item();
  return out;
}

FinetuneLoss finetune_batch_loss(std::span<const Tensor> patches,
                                 std::span<const CharTargets> targets, const MvltModel& model,
                                 std::size_t iterations) {
  if (patches.size() != targets.size() || patches.empty()) {
    throw ConfigError("fine-tuning batch needs matching, non-empty patches and targets");
  }
  const auto variant = model.config().finetune_loss_variant;
  if (variant == FinetuneLossVariant::paper && iterations == 1) {
    throw ConfigError("K = 1 is rejected by the fine-tuning objective (divisor 2(K-1))");
  }
  FinetuneLoss out;
  out.iteration_ce.assign(iterations + 1, 0.0);
  Tensor total;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    Tensor v = model.encode_full(patches[i]);
    auto logits = model.iterative_correct(v, iterations);
    total = accumulate(total, finetune_loss(logits, targets[i], iterations, variant));
    for (std::size_t k = 0; k <= iterations; ++k) {
      out.iteration_ce[k] += ops::cross_entropy(logits[k].detach(), targets[i]).item();
    }
  }
  const double n = static_cast<double>(patches.size());
  out.total = ops::scale(total, 1.0 / n);
  for (auto& ce : out.iteration_ce) ce /= n;
  return out;
}

}  // namespace mvlt
