#pragma once

#include <functional>
#include <nlohmann/json.hpp>
#include <vector>

#include "mvlt/checkpoint.hpp"
#include "mvlt/config.hpp"
#include "mvlt/image.hpp"
#include "mvlt/model.hpp"
#include "mvlt/objectives.hpp"
#include "mvlt/optim.hpp"

namespace mvlt {

/// Step loop for either training stage. Every step draws its batch, masks and
/// augmentations from a stream keyed by (seed, stage, step), so a run resumed
/// from a checkpoint continues exactly like the uninterrupted one.
class Trainer {
 public:
  Trainer(MvltModel& model, TrainConfig config, std::vector<ImageSample> labeled,
          std::vector<ImageSample> unlabeled = {});

  const TrainConfig& config() const { return config_; }
  const LrSchedule& schedule() const { return schedule_; }
  std::size_t step() const { return step_; }
  bool done() const { return step_ >= config_.steps; }
  // K used by the fine-tuning objective (0 when iterative correction is off).
  std::size_t iterations() const { return iterations_; }
  AdamWState& optimizer() { return optimizer_; }

  /// Runs one step and returns its log record.
  nlohmann::json run_step();
  /// Runs until `config().steps`, calling `on_step` after every step.
  void run(const std::function<void(const nlohmann::json&)>& on_step = {});

  Checkpoint checkpoint() const;
  /// Restores weights, optimizer state and step counter.
  void resume(const Checkpoint& ckpt);

 private:
  nlohmann::json pretrain_step(Rng& rng, double lr);
  nlohmann::json finetune_step(Rng& rng, double lr);

  MvltModel& model_;
  TrainConfig config_;
  LrSchedule schedule_;
  std::vector<ImageSample> labeled_;
  std::vector<ImageSample> unlabeled_;
  AdamWState optimizer_;
  std::size_t iterations_ = 0;
  std::size_t step_ = 0;
};

/// Log record for a pretraining step; disabled terms are null.
nlohmann::json pretrain_record(std::size_t step, const PretrainLossReport& report, double lr);

}  // namespace mvlt
