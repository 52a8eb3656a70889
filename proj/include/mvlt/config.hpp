#pragma once

#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

namespace mvlt {

enum class FinetuneLossVariant {
  paper,       // 1/2 CE_0 + 1/(2(K-1)) sum_{j=1..K} CE_j
  normalized,  // 1/2 CE_0 + 1/(2K) sum_{j=1..K} CE_j
};

struct ModelConfig {
  std::size_t height = 32;
  std::size_t width = 128;
  std::size_t channels = 1;
  std::size_t patch = 4;
  std::size_t enc_dim = 128;  // D1
  std::size_t dec_dim = 64;   // D2
  std::size_t enc_depth = 4;
  std::size_t enc_heads = 4;
  std::size_t dec_depth = 2;
  std::size_t dec_heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t max_len = 12;       // L
  std::size_t num_classes = 37;   // M
  double patch_mask_ratio = 0.75;
  double text_mask_ratio_explicit = 0.2;
  double text_mask_ratio_implicit = 1.0;
  double alpha = 0.5;    // L_v1
  double beta = 0.5;     // L_v2
  double gamma = 0.01;   // L_t1
  double epsilon = 0.01; // L_t2
  std::size_t iterations = 3;  // K
  FinetuneLossVariant finetune_loss_variant = FinetuneLossVariant::paper;
  double layer_norm_eps = 1e-6;
  double init_std = 0.02;

  std::size_t grid_h() const { return height / patch; }
  std::size_t grid_w() const { return width / patch; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }
  std::size_t patch_dim() const { return patch * patch * channels; }

  void validate() const;

  static ModelConfig toy();
  static ModelConfig micro();
  static ModelConfig paper_scale();
};

enum class Stage { pretrain, finetune };

struct LossToggles {
  bool v1 = true;
  bool t1 = true;
  bool v2 = true;
  bool t2 = true;

  bool any_text() const { return t1 || t2; }
  bool any() const { return v1 || t1 || v2 || t2; }
  bool decoder1() const { return v1 || t1; }
  bool decoder2() const { return v2 || t2; }
};

struct TrainConfig {
  Stage stage = Stage::pretrain;
  std::size_t steps = 1000;
  std::size_t warmup_steps = 100;
  std::size_t batch_labeled = 16;    // N1
  std::size_t batch_unlabeled = 0;   // N2
  double base_lr = 1.5e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  std::optional<double> grad_clip;
  std::optional<double> layer_decay;
  std::uint64_t seed = 0;
  std::size_t log_every = 1;
  std::size_t ckpt_every = 0;  // 0 disables periodic checkpoints
  bool augment = true;
  LossToggles losses;
  bool use_iter = true;
  std::optional<std::size_t> iterations;  // overrides ModelConfig::iterations

  void validate() const;

  static TrainConfig pretrain_toy();
  static TrainConfig finetune_toy();
  static TrainConfig pretrain_paper();
  static TrainConfig finetune_paper();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Version of the JSON config schema used by the CLI and checkpoints.
inline constexpr int kConfigSchemaVersion = 1;

/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ModelConfig& c);

}  // namespace mvlt
