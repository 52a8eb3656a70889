#include "mvlt/config.hpp"

#include <cstdio>
#include <set>

#include "mvlt/error.hpp"

namespace mvlt {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (height == 0 || width == 0 || patch == 0) fail("image and patch sizes must be positive");
  if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
  if (height % patch != 0 || width % patch != 0) {
    fail("patch " + std::to_string(patch) + " must divide " + std::to_string(height) + "x" +
         std::to_string(width));
  }
  if (enc_heads == 0 || enc_dim % enc_heads != 0) fail("enc_dim must be divisible by enc_heads");
  if (dec_heads == 0 || dec_dim % dec_heads != 0) fail("dec_dim must be divisible by dec_heads");
  if (enc_depth == 0 || dec_depth == 0) fail("depths must be positive");
  if (mlp_ratio == 0) fail("mlp_ratio must be positive");
  if (max_len < 2) fail("max_len must be at least 2");
  if (num_classes < 2 || num_classes > 37) fail("num_classes must lie in [2, 37]");
  for (double r : {patch_mask_ratio, text_mask_ratio_explicit}) {
    if (r < 0.0 || r > 1.0) fail("mask ratios must lie in [0, 1]");
  }
  if (patch_mask_ratio >= 1.0) fail("patch_mask_ratio must leave at least one visible patch");
  if (text_mask_ratio_implicit != 1.0) fail("text_mask_ratio_implicit is fixed at 1.0");
  if (!(layer_norm_eps > 0.0) || !(init_std > 0.0)) fail("eps and init_std must be positive");
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.height = 8;
  c.width = 16;
  c.channels = 1;
  c.patch = 4;
  c.enc_dim = 16;
  c.dec_dim = 8;
  c.enc_depth = 1;
  c.enc_heads = 2;
  c.dec_depth = 1;
  c.dec_heads = 2;
  c.max_len = 4;
  c.num_classes = 6;
  return c;
}

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.height = 112;
  c.width = 448;
  c.channels = 3;
  c.patch = 14;
  c.enc_dim = 768;
  c.dec_dim = 512;
  c.enc_depth = 12;
  c.enc_heads = 12;
  c.dec_depth = 4;
  c.dec_heads = 8;
  c.max_len = 27;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (steps == 0) fail("steps must be positive");
  if (warmup_steps > steps) fail("warmup_steps exceeds steps");
  if (!(base_lr > 0.0)) fail("base_lr must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) fail("betas must lie in [0, 1)");
  if (grad_clip && !(*grad_clip > 0.0)) fail("grad_clip must be positive");
  if (layer_decay && !(*layer_decay > 0.0)) fail("layer_decay must be positive");
  if (log_every == 0) fail("log_every must be positive");
  if (stage == Stage::pretrain) {
    if (batch_labeled == 0 && losses.any()) fail("supervised losses need batch_labeled >= 1");
    if (batch_labeled + batch_unlabeled == 0) fail("empty batch");
  } else if (batch_labeled == 0) {
    fail("fine-tuning needs batch_labeled >= 1");
  }
}

TrainConfig TrainConfig::pretrain_toy() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune_toy() {
  TrainConfig c;
  c.stage = Stage::finetune;
  c.steps = 500;
  c.warmup_steps = 100;
  c.batch_labeled = 4;
  c.base_lr = 1e-4;
  c.beta2 = 0.999;
  c.grad_clip = 2.0;
  c.layer_decay = 0.75;
  return c;
}

TrainConfig TrainConfig::pretrain_paper() {
  TrainConfig c;
  c.steps = 120000;
  c.warmup_steps = 8000;
  c.batch_labeled = 4096;
  c.batch_unlabeled = 2048;
  c.base_lr = 1.5e-4;
  c.log_every = 100;
  return c;
}

TrainConfig TrainConfig::finetune_paper() {
  TrainConfig c = finetune_toy();
  c.steps = 20000;
  c.warmup_steps = 8000;
  c.batch_labeled = 1024;
  c.base_lr = 1e-5;
  c.log_every = 100;
  return c;
}

namespace {

template <class T>
void read(const nlohmann::json& j, const char* key, T& field) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      field = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

template <class T>
void read_optional(const nlohmann::json& j, const char* key, std::optional<T>& field) {
  if (auto it = j.find(key); it != j.end()) {
    if (it->is_null()) {
      field.reset();
    } else {
      T v{};
      read(j, key, v);
      field = v;
    }
  }
}

template <class T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " config must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (!known.contains(k)) throw ConfigError(std::string("unknown ") + what + " config key: " + k);
  }
}

}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"height", c.height},
                     {"width", c.width},
                     {"channels", c.channels},
                     {"patch", c.patch},
                     {"enc_dim", c.enc_dim},
                     {"dec_dim", c.dec_dim},
                     {"enc_depth", c.enc_depth},
                     {"enc_heads", c.enc_heads},
                     {"dec_depth", c.dec_depth},
                     {"dec_heads", c.dec_heads},
                     {"mlp_ratio", c.mlp_ratio},
                     {"max_len", c.max_len},
                     {"num_classes", c.num_classes},
                     {"patch_mask_ratio", c.patch_mask_ratio},
                     {"text_mask_ratio_explicit", c.text_mask_ratio_explicit},
                     {"text_mask_ratio_implicit", c.text_mask_ratio_implicit},
                     {"alpha", c.alpha},
                     {"beta", c.beta},
                     {"gamma", c.gamma},
                     {"epsilon", c.epsilon},
                     {"iterations", c.iterations},
                     {"finetune_loss_variant",
                      c.finetune_loss_variant == FinetuneLossVariant::paper ? "paper" : "normalized"},
                     {"layer_norm_eps", c.layer_norm_eps},
                     {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  reject_unknown(j, nlohmann::json(c), "model");
  read(j, "height", c.height);
  read(j, "width", c.width);
  read(j, "channels", c.channels);
  read(j, "patch", c.patch);
  read(j, "enc_dim", c.enc_dim);
  read(j, "dec_dim", c.dec_dim);
  read(j, "enc_depth", c.enc_depth);
  read(j, "enc_heads", c.enc_heads);
  read(j, "dec_depth", c.dec_depth);
  read(j, "dec_heads", c.dec_heads);
  read(j, "mlp_ratio", c.mlp_ratio);
  read(j, "max_len", c.max_len);
  read(j, "num_classes", c.num_classes);
  read(j, "patch_mask_ratio", c.patch_mask_ratio);
  read(j, "text_mask_ratio_explicit", c.text_mask_ratio_explicit);
  read(j, "text_mask_ratio_implicit", c.text_mask_ratio_implicit);
  read(j, "alpha", c.alpha);
  read(j, "beta", c.beta);
  read(j, "gamma", c.gamma);
  read(j, "epsilon", c.epsilon);
  read(j, "iterations", c.iterations);
  std::string variant = c.finetune_loss_variant == FinetuneLossVariant::paper ? "paper" : "normalized";
  read(j, "finetune_loss_variant", variant);
  if (variant == "paper") c.finetune_loss_variant = FinetuneLossVariant::paper;
  else if (variant == "normalized") c.finetune_loss_variant = FinetuneLossVariant::normalized;
  else throw ConfigError("finetune_loss_variant must be 'paper' or 'normalized'");
  read(j, "layer_norm_eps", c.layer_norm_eps);
  read(j, "init_std", c.init_std);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"stage", c.stage == Stage::pretrain ? "pretrain" : "finetune"},
                     {"steps", c.steps},
                     {"warmup_steps", c.warmup_steps},
                     {"batch_labeled", c.batch_labeled},
                     {"batch_unlabeled", c.batch_unlabeled},
                     {"base_lr", c.base_lr},
                     {"weight_decay", c.weight_decay},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"grad_clip", optional_json(c.grad_clip)},
                     {"layer_decay", optional_json(c.layer_decay)},
                     {"seed", c.seed},
                     {"log_every", c.log_every},
                     {"ckpt_every", c.ckpt_every},
                     {"augment", c.augment},
                     {"loss_v1", c.losses.v1},
                     {"loss_t1", c.losses.t1},
                     {"loss_v2", c.losses.v2},
                     {"loss_t2", c.losses.t2},
                     {"use_iter", c.use_iter},
                     {"iterations", optional_json(c.iterations)}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  reject_unknown(j, nlohmann::json(c), "train");
  std::string stage = c.stage == Stage::pretrain ? "pretrain" : "finetune";
  read(j, "stage", stage);
  if (stage == "pretrain") c.stage = Stage::pretrain;
  else if (stage == "finetune") c.stage = Stage::finetune;
  else throw ConfigError("stage must be 'pretrain' or 'finetune'");
  read(j, "steps", c.steps);
  read(j, "warmup_steps", c.warmup_steps);
  read(j, "batch_labeled", c.batch_labeled);
  read(j, "batch_unlabeled", c.batch_unlabeled);
  read(j, "base_lr", c.base_lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read_optional(j, "grad_clip", c.grad_clip);
  read_optional(j, "layer_decay", c.layer_decay);
  read(j, "seed", c.seed);
  read(j, "log_every", c.log_every);
  read(j, "ckpt_every", c.ckpt_every);
  read(j, "augment", c.augment);
  read(j, "loss_v1", c.losses.v1);
  read(j, "loss_t1", c.losses.t1);
  read(j, "loss_v2", c.losses.v2);
  read(j, "loss_t2", c.losses.t2);
  read(j, "use_iter", c.use_iter);
  read_optional(j, "iterations", c.iterations);
}

std::string config_hash(const ModelConfig& c) {
  const std::string text = nlohmann::json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mvlt
