#include "mvlt/trainer.hpp"

#include "mvlt/error.hpp"
#include "mvlt/ops.hpp"
#include "mvlt/vision.hpp"

namespace mvlt {
namespace {

constexpr std::uint64_t kPretrainStream = 0x70726574;
constexpr std::uint64_t kFinetuneStream = 0x66696e65;

nlohmann::json optional_value(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json pretrain_record(std::size_t step, const PretrainLossReport& r, double lr) {
  return {{"step", step},
          {"stage", "pretrain"},
          {"L_v1", optional_value(r.v1)},
          {"L_t1", optional_value(r.t1)},
          {"L_v2", optional_value(r.v2)},
          {"L_t2", optional_value(r.t2)},
          {"L_ur", optional_value(r.ur)},
          {"total", r.total},
          {"lr", lr}};
}

Trainer::Trainer(MvltModel& model, TrainConfig config, std::vector<ImageSample> labeled,
                 std::vector<ImageSample> unlabeled)
    : model_(model),
      config_(std::move(config)),
      labeled_(std::move(labeled)),
      unlabeled_(std::move(unlabeled)),
      optimizer_(AdamWState::for_store(model.params())) {
  config_.validate();
  const auto& mc = model_.config();
  if (labeled_.empty() && (config_.stage == Stage::finetune || config_.losses.any())) {
    throw DataError("training needs a non-empty labeled set");
  }
  if (config_.batch_unlabeled > 0 && unlabeled_.empty()) {
    throw DataError("batch_unlabeled > 0 but no unlabeled samples were given");
  }
  for (const auto* set : {&labeled_, &unlabeled_}) {
    for (const auto& s : *set) {
      if (s.image.height != mc.height || s.image.width != mc.width || s.image.channels != mc.channels) {
        throw DataError("sample " + s.sample_id + " does not match the model input size");
      }
    }
  }
  for (const auto& s : labeled_) {
    if (!s.label) throw DataError("labeled sample " + s.sample_id + " has no label");
  }

  schedule_.base_lr = config_.base_lr;
  schedule_.warmup_steps = config_.warmup_steps;
  schedule_.total_steps = config_.steps;
  schedule_.weight_decay = config_.weight_decay;
  schedule_.beta1 = config_.beta1;
  schedule_.beta2 = config_.beta2;
  schedule_.grad_clip = config_.grad_clip;
  schedule_.layer_decay = config_.layer_decay;
  schedule_.validate();

  if (config_.stage == Stage::finetune) {
    iterations_ = config_.use_iter ? config_.iterations.value_or(mc.iterations) : 0;
    if (iterations_ == 1 && mc.finetune_loss_variant == FinetuneLossVariant::paper) {
      throw ConfigError("K = 1 is rejected by the fine-tuning objective (divisor 2(K-1))");
    }
  }
}

nlohmann::json Trainer::run_step() {
  if (done()) throw ContractError("training already finished");
  const std::uint64_t stream = config_.stage == Stage::pretrain ? kPretrainStream : kFinetuneStream;
  Rng rng = Rng::derive(config_.seed, {stream, step_});
  const double lr = lr_at(step_, schedule_);
  auto record = config_.stage == Stage::pretrain ? pretrain_step(rng, lr) : finetune_step(rng, lr);
  ++step_;
  return record;
}

nlohmann::json Trainer::pretrain_step(Rng& rng, double lr) {
  std::vector<ImageSample> lab, unl;
  const std::size_t n1 = config_.losses.any() ? config_.batch_labeled : 0;
  for (std::size_t i = 0; i < n1; ++i) lab.push_back(labeled_[rng.below(labeled_.size())]);
  for (std::size_t i = 0; i < config_.batch_unlabeled; ++i) {
    const auto& src = unlabeled_[rng.below(unlabeled_.size())];
    unl.push_back({src.image, std::nullopt, src.sample_id});
  }
  if (config_.augment) {
    for (auto& s : lab) s.image = random_resized_crop(s.image, rng);
    for (auto& s : unl) s.image = random_resized_crop(s.image, rng);
  }
  auto batch = build_mixed_batch(lab, unl, model_.config(), rng);
  auto loss = mixed_batch_loss(batch, model_, config_.losses);
  model_.params().clear_grad();
  loss.total.backward();
  if (schedule_.grad_clip) clip_global_norm(model_.params(), *schedule_.grad_clip);
  adamw_step(model_.params(), optimizer_, lr, schedule_);
  return pretrain_record(step_, loss.report, lr);
}

nlohmann::json Trainer::finetune_step(Rng& rng, double lr) {
  const auto& mc = model_.config();
  const Charset& charset = model_.charset();
  std::vector<Tensor> patches;
  std::vector<CharTargets> targets;
  for (std::size_t i = 0; i < config_.batch_labeled; ++i) {
    const auto& s = labeled_[rng.below(labeled_.size())];
    Image img = config_.augment ? random_rotation(s.image, rng) : s.image;
    patches.push_back(patchify(img, mc.patch).patches);
    targets.push_back(encode_label(*s.label, mc.max_len, charset));
  }
  auto loss = finetune_batch_loss(patches, targets, model_, iterations_);
  model_.params().clear_grad();
  loss.total.backward();
  double grad_norm = global_grad_norm(model_.params());
  if (schedule_.grad_clip) clip_global_norm(model_.params(), *schedule_.grad_clip);
  adamw_step(model_.params(), optimizer_, lr, schedule_);
  return {{"step", step_},
          {"stage", "finetune"},
          {"L_iter", loss.iteration_ce},
          {"total", loss.total.item()},
          {"grad_norm", grad_norm},
          {"lr", lr}};
}

void Trainer::run(const std::function<void(const nlohmann::json&)>& on_step) {
  while (!done()) {
    auto record = run_step();
    if (on_step) on_step(record);
  }
}

Checkpoint Trainer::checkpoint() const {
  return capture(model_, config_, &optimizer_, config_.seed, step_);
}

void Trainer::resume(const Checkpoint& ckpt) {
  if (!ckpt.optimizer) throw FormatError("checkpoint has no optimizer state to resume from");
  if (ckpt.train && ckpt.train->stage != config_.stage) {
    throw ConfigError("checkpoint was written by the other training stage");
  }
  if (ckpt.seed != config_.seed) throw ConfigError("checkpoint seed differs from the training seed");
  restore_parameters(model_, ckpt);
  optimizer_ = *ckpt.optimizer;
  step_ = ckpt.step;
}

}  // namespace mvlt
