#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "helpers.hpp"
#include "mvlt/checkpoint.hpp"
#include "mvlt/error.hpp"
#include "mvlt/trainer.hpp"

namespace mvlt {
namespace {

namespace fs = std::filesystem;
using testing::random_samples;
using testing::values;

TrainConfig micro_pretrain(std::size_t steps = 12) {
  TrainConfig t;
  t.steps = steps;
  t.warmup_steps = 3;
  t.batch_labeled = 2;
  t.batch_unlabeled = 1;
  t.seed = 21;
  return t;
}

TrainConfig micro_finetune(std::size_t steps = 8) {
  TrainConfig t = TrainConfig::finetune_toy();
  t.steps = steps;
  t.warmup_steps = 2;
  t.batch_labeled = 2;
  t.seed = 22;
  return t;
}

std::vector<double> totals(Trainer& trainer, std::size_t n) {
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(trainer.run_step()["total"].get<double>());
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TrainerFixture : ::testing::Test {
  ModelConfig cfg = ModelConfig::micro();
  std::vector<ImageSample> labeled = random_samples(cfg, 10, 31);
  std::vector<ImageSample> unlabeled = random_samples(cfg, 6, 32, false);
};

TEST_F(TrainerFixture, SameSeedSameLossesAndBytes) {
  auto run = [&] {
    MvltModel model(cfg, 1);
    Trainer trainer(model, micro_pretrain(50), labeled, unlabeled);
    auto losses = totals(trainer, 50);
    return std::make_pair(losses, serialize_checkpoint(trainer.checkpoint()));
  };
  auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST_F(TrainerFixture, DifferentSeedDifferentLosses) {
  MvltModel m1(cfg, 1), m2(cfg, 1);
  auto c2 = micro_pretrain();
  c2.seed = 99;
  Trainer t1(m1, micro_pretrain(), labeled, unlabeled), t2(m2, c2, labeled, unlabeled);
  EXPECT_NE(totals(t1, 3), totals(t2, 3));
}

TEST_F(TrainerFixture, ResumeContinuesExactly) {
  for (auto stage : {Stage::pretrain, Stage::finetune}) {
    const auto tc = stage == Stage::pretrain ? micro_pretrain(20) : micro_finetune(20);
    MvltModel straight(cfg, 2);
    Trainer a(straight, tc, labeled, unlabeled);
    totals(a, 5);
    const auto bytes = serialize_checkpoint(a.checkpoint());
    const auto expected = totals(a, 10);

    MvltModel resumed(cfg, 77);
    Trainer b(resumed, tc, labeled, unlabeled);
    b.resume(deserialize_checkpoint(bytes));
    EXPECT_EQ(b.step(), 5u);
    EXPECT_EQ(totals(b, 10), expected);
  }
}

TEST_F(TrainerFixture, ResumeRejectsOtherSeed) {
  MvltModel model(cfg, 2);
  Trainer a(model, micro_pretrain(), labeled, unlabeled);
  a.run_step();
  auto ckpt = a.checkpoint();
  auto other = micro_pretrain();
  other.seed = 5;
  Trainer b(model, other, labeled, unlabeled);
  EXPECT_THROW(b.resume(ckpt), ConfigError);
}

TEST_F(TrainerFixture, ScheduleIsLogged) {
  MvltModel model(cfg, 3);
  auto tc = micro_pretrain(10);
  Trainer trainer(model, tc, labeled, unlabeled);
  std::vector<double> lr;
  trainer.run([&](const nlohmann::json& r) { lr.push_back(r["lr"].get<double>()); });
  ASSERT_EQ(lr.size(), 10u);
  EXPECT_EQ(lr[0], 0.0);
  EXPECT_DOUBLE_EQ(lr[3], tc.base_lr);
  for (std::size_t i = 4; i < lr.size(); ++i) EXPECT_LT(lr[i], lr[i - 1]);
  EXPECT_TRUE(trainer.done());
  EXPECT_THROW(trainer.run_step(), ContractError);
}

TEST_F(TrainerFixture, PretrainRecordSchema) {
  MvltModel model(cfg, 4);
  auto tc = micro_pretrain();
  tc.losses = {true, false, true, false};
  Trainer trainer(model, tc, labeled, unlabeled);
  auto r = trainer.run_step();
  for (const char* key : {"step", "stage", "L_v1", "L_t1", "L_v2", "L_t2", "L_ur", "total", "lr"}) {
    EXPECT_TRUE(r.contains(key)) << key;
  }
  EXPECT_TRUE(r["L_t1"].is_null());
  EXPECT_TRUE(r["L_t2"].is_null());
  EXPECT_TRUE(r["L_v1"].is_number());
  EXPECT_TRUE(r["L_ur"].is_number());
}

TEST_F(TrainerFixture, UnlabeledOnlyPretraining) {
  MvltModel model(cfg, 5);
  auto tc = micro_pretrain(3);
  tc.losses = {false, false, false, false};
  tc.batch_labeled = 0;
  Trainer trainer(model, tc, {}, unlabeled);
  auto r = trainer.run_step();
  EXPECT_EQ(r["total"].get<double>(), r["L_ur"].get<double>());
}

TEST_F(TrainerFixture, IterDisabledReducesToPlainCrossEntropy) {
  MvltModel model(cfg, 6);
  auto tc = micro_finetune();
  tc.use_iter = false;
  Trainer trainer(model, tc, labeled);
  EXPECT_EQ(trainer.iterations(), 0u);
  auto r = trainer.run_step();
  ASSERT_EQ(r["L_iter"].size(), 1u);
  EXPECT_EQ(r["total"].get<double>(), r["L_iter"][0].get<double>());
}

TEST_F(TrainerFixture, FinetuneKOneRejected) {
  MvltModel model(cfg, 6);
  auto tc = micro_finetune();
  tc.iterations = 1;
  EXPECT_THROW(Trainer(model, tc, labeled), ConfigError);
}

TEST_F(TrainerFixture, DataValidation) {
  MvltModel model(cfg, 6);
  EXPECT_THROW(Trainer(model, micro_pretrain(), {}, unlabeled), DataError);
  auto wrong = random_samples(ModelConfig::toy(), 1, 1);
  EXPECT_THROW(Trainer(model, micro_pretrain(), wrong, unlabeled), DataError);
  auto stripped = labeled;
  stripped[3].label.reset();
  EXPECT_THROW(Trainer(model, micro_pretrain(), stripped, unlabeled), DataError);
}

TEST_F(TrainerFixture, FinetuneLowersLoss) {
  MvltModel model(cfg, 8);
  auto tc = micro_finetune(150);
  tc.base_lr = 3e-3;
  tc.augment = false;
  Trainer trainer(model, tc, std::vector<ImageSample>(labeled.begin(), labeled.begin() + 2));
  auto losses = totals(trainer, 150);
  EXPECT_LT(losses.back(), 0.5 * losses.front());
}

// Checkpoints

struct CheckpointFixture : TrainerFixture {
  MvltModel model{cfg, 9};
  Checkpoint ckpt;
  void SetUp() override {
    Trainer trainer(model, micro_pretrain(), labeled, unlabeled);
    totals(trainer, 2);
    ckpt = trainer.checkpoint();
  }
};

TEST_F(CheckpointFixture, RoundTripIsBitExact) {
  const auto bytes = serialize_checkpoint(ckpt);
  auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  MvltModel fresh = model_from_checkpoint(back);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    EXPECT_EQ(values(fresh.params()[i].value), values(model.params()[i].value)) << model.params()[i].name;
  }
  EXPECT_EQ(back.step, 2u);
  EXPECT_EQ(back.seed, 21u);
  ASSERT_TRUE(back.optimizer.has_value());
  EXPECT_EQ(back.optimizer->t, 2u);
  EXPECT_EQ(back.optimizer->m, ckpt.optimizer->m);
}

TEST_F(CheckpointFixture, FileSaveLoadSave) {
  const fs::path dir = fs::temp_directory_path() / "mvlt_test_ckpt";
  fs::create_directories(dir);
  save_checkpoint(dir / "a.ckpt", ckpt);
  save_checkpoint(dir / "b.ckpt", load_checkpoint(dir / "a.ckpt"));
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  EXPECT_EQ(slurp(dir / "a.ckpt").substr(0, 4), "MVLT");
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_F(CheckpointFixture, CorruptionIsRejected) {
  const auto bytes = serialize_checkpoint(ckpt);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(deserialize_checkpoint(bad_version), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(trailing), FormatError);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(deserialize_checkpoint({bytes.begin(), bytes.begin() + cut}), FormatError) << cut;
  }
}

TEST_F(CheckpointFixture, FailedRestoreLeavesModelUntouched) {
  MvltModel target(cfg, 10);
  const auto before = values(target.params()[0].value);
  auto broken = ckpt;
  broken.tensors.back().shape = {1, broken.tensors.back().data.size()};
  EXPECT_THROW(restore_parameters(target, broken), FormatError);
  EXPECT_EQ(values(target.params()[0].value), before);
  auto renamed = ckpt;
  renamed.tensors[1].name = "nope";
  EXPECT_THROW(restore_parameters(target, renamed), FormatError);
  auto other = ModelConfig::micro();
  other.dec_dim = 4;
  MvltModel mismatched(other, 1);
  EXPECT_THROW(restore_parameters(mismatched, ckpt), FormatError);
}

}  // namespace
}  // namespace mvlt
