// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.
//
//   mvlt_acceptance [--only 1,3,7] [--skip 7] [--work DIR]

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "mvlt/checkpoint.hpp"
#include "mvlt/datagen.hpp"
#include "mvlt/error.hpp"
#include "mvlt/eval.hpp"
#include "mvlt/gradcheck.hpp"
#include "mvlt/objectives.hpp"
#include "mvlt/ops.hpp"
#include "mvlt/trainer.hpp"

namespace fs = std::filesystem;
using namespace mvlt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<ImageSample> rendered(std::size_t n, std::uint64_t seed, const fs::path& dir) {
  DatasetOptions opt;
  opt.n = n;
  opt.seed = seed;
  opt.out_dir = dir;
  return load_samples(make_dataset(opt));
}

Outcome gradient_fidelity() {
  GradcheckOptions opt;
  auto r = gradcheck_pretrain(opt);
  const bool pass = r.passed(1e-4) && r.seconds < 60.0;
  return {pass, fmt("max rel err %.3g over %zu tensors (worst %s), %.1f s", r.max_rel_error,
                    r.tensors.size(), r.worst.c_str(), r.seconds)};
}

Outcome masking_exactness() {
  Rng rng(2);
  const auto toy = ModelConfig::toy();
  const std::size_t n = toy.num_patches();
  const std::size_t expected = round_half_up(0.75 * static_cast<double>(n));
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    auto p = sample_patch_mask(n, 0.75, rng);
    std::vector<std::size_t> all(p.masked);
    all.insert(all.end(), p.unmasked.begin(), p.unmasked.end());
    std::sort(all.begin(), all.end());
    bool partition = all.size() == n;
    for (std::size_t k = 0; partition && k < n; ++k) partition = all[k] == k;
    if (p.masked.size() != expected || !partition) ++bad;

    auto t = sample_text_mask(10, 0.2, 27, rng);
    const auto word_masked = std::count_if(t.masked.begin(), t.masked.end(), [](auto j) { return j < 10; });
    if (word_masked != 2 || t.unmasked.size() != 8 || t.masked.size() != 19) ++bad;

    auto full = sample_text_mask(1 + rng.below(26), 1.0, 27, rng);
    if (!full.unmasked.empty() || full.masked.size() != 27) ++bad;
  }
  return {bad == 0, fmt("N=%zu -> %zu masked; 10 chars -> 2 masked, L_u=8; ratio 1 -> L_u=0; "
                        "%zu violations in 1000 draws",
                        n, expected, bad)};
}

Outcome shared_decoder() {
  const auto cfg = ModelConfig::toy();
  MvltModel model(cfg, 3);
  Rng rng(3);
  Canvas canvas;
  const auto sample = render_word("shared", 11, canvas);
  const Tensor patches = patchify(sample.image, cfg.patch).patches;
  const auto targets = encode_label(*sample.label, cfg.max_len, model.charset());
  const auto pplan = sample_patch_mask(cfg.num_patches(), 0.75, rng);
  const auto eplan = sample_text_mask(sample.label->size(), 0.2, cfg.max_len, rng);
  const auto iplan = full_text_mask(cfg.max_len);

  auto leaves = [](std::initializer_list<Tensor> roots) {
    std::set<const void*> out;
    for (const auto& r : roots) {
      for (const auto* id : reachable_leaves(r)) out.insert(id);
    }
    return out;
  };
  auto scalar = [](const DecoderOutput& d) { return ops::add(ops::sum(d.pixels), ops::sum(d.text_logits)); };
  std::set<const void*> decoder_ids;
  std::size_t decoder_numel = 0;
  for (const auto& name : model.decoder_parameter_names()) {
    decoder_ids.insert(model.params().get(name).storage_id());
    decoder_numel += model.params().get(name).numel();
  }
  auto decoder_count = [&](const std::set<const void*>& ids) {
    std::size_t c = 0;
    for (const auto& p : model.params()) {
      if (decoder_ids.count(p.value.storage_id()) && ids.count(p.value.storage_id())) c += p.value.numel();
    }
    return c;
  };

  const Tensor v = model.encode_masked(patches, pplan);
  auto d1 = model.decode(v, pplan, targets, eplan);
  auto d2 = model.decode(v, pplan, targets, iplan);
  const auto only1 = leaves({scalar(d1)});
  const auto only2 = leaves({scalar(d2)});
  const auto both = leaves({scalar(d1), scalar(d2)});
  const bool identity = only1 == only2 && only1 == both;
  const bool counts = decoder_count(only1) == decoder_numel && decoder_count(only2) == decoder_numel &&
                      decoder_count(both) == decoder_numel;

  const auto before = values(d2.pixels);
  const auto before_text = values(d2.text_logits);
  auto loss1 = pretrain_loss(&d1, nullptr, ops::gather_rows(patches, pplan.masked), targets, eplan, iplan,
                             cfg, LossToggles{true, true, false, false});
  model.params().clear_grad();
  loss1.total.backward();
  auto state = AdamWState::for_store(model.params());
  LrSchedule s;
  adamw_step(model.params(), state, 1e-3, s);
  const Tensor v_after = model.encode_masked(patches, pplan);
  auto d2_after = model.decode(v_after, pplan, targets, iplan);
  const bool moved = values(d2_after.pixels) != before && values(d2_after.text_logits) != before_text;
  return {identity && counts && moved,
          fmt("decoder params %zu counted once (view1 %zu, view2 %zu, both %zu); storage identity %s; "
              "decoder_1-only step moves decoder_2 output: %s",
              decoder_numel, decoder_count(only1), decoder_count(only2), decoder_count(both),
              identity ? "yes" : "no", moved ? "yes" : "no")};
}

Outcome implicit_independence() {
  const auto cfg = ModelConfig::toy();
  MvltModel model(cfg, 4);
  Rng rng(4);
  const auto sample = render_word("implicit", 12, Canvas{});
  const Tensor patches = patchify(sample.image, cfg.patch).patches;
  const auto pplan = sample_patch_mask(cfg.num_patches(), 0.75, rng);
  const auto plan = sample_text_mask(8, 1.0, cfg.max_len, rng);
  const Tensor v = model.encode_masked(patches, pplan);
  auto a = model.decode(v, pplan, encode_label("implicit", cfg.max_len, model.charset()), plan);
  auto b = model.decode(v, pplan, encode_label("zq7", cfg.max_len, model.charset()), plan);
  const bool same = values(a.pixels) == values(b.pixels) && values(a.text_logits) == values(b.text_logits);
  return {same && plan.unmasked.empty(), same ? "outputs bit-identical for labels 'implicit' and 'zq7'"
                                              : "outputs differ between labels"};
}

Outcome semi_supervised_isolation(const fs::path& work) {
  const auto cfg = ModelConfig::toy();
  MvltModel model(cfg, 5);
  auto labeled = rendered(8, 51, work / "iso_labeled");
  auto unlabeled = rendered(8, 52, work / "iso_unlabeled");
  const auto& head = model.params().get("char_head.weight");

  auto head_grad = [&](const std::vector<ImageSample>& u, const LossToggles& on) {
    model.params().clear_grad();
    Rng rng(53);
    auto batch = build_mixed_batch(labeled, u, cfg, rng);
    mixed_batch_loss(batch, model, on).total.backward();
    return head.has_grad() ? std::vector<double>(head.grad().begin(), head.grad().end())
                           : std::vector<double>(head.numel(), 0.0);
  };
  const auto off = head_grad(unlabeled, LossToggles{false, false, false, false});
  const bool zero = std::all_of(off.begin(), off.end(), [](double g) { return g == 0.0; });

  const auto on = head_grad(unlabeled, LossToggles{});
  auto relabeled = unlabeled;
  for (auto& s : relabeled) s.label = "x9y8z7";
  const auto on_relabeled = head_grad(relabeled, LossToggles{});
  auto stripped = unlabeled;
  for (auto& s : stripped) s.label.reset();
  const auto on_stripped = head_grad(stripped, LossToggles{});
  const bool invariant = on == on_relabeled && on == on_stripped;
  const bool nonzero = std::any_of(on.begin(), on.end(), [](double g) { return g != 0.0; });
  return {zero && invariant && nonzero,
          fmt("N1=8 N2=8: char-head grad exactly zero with toggles off: %s; bitwise invariant to "
              "unlabeled labels with toggles on: %s",
              zero ? "yes" : "no", invariant ? "yes" : "no")};
}

Outcome finetune_formula() {
  std::vector<std::size_t> targets{1, 0, 2};
  const Tensor t = Tensor::matrix({{0.3, -0.2, 1.1}, {2.0, 0.5, 0.1}, {0.0, 0.7, -1.3}});
  const std::vector<Tensor> logits{t, t, t, t};
  const double c = ops::cross_entropy(t, targets).item();
  const double got = finetune_loss(logits, targets, 3, FinetuneLossVariant::paper).item();
  return {std::abs(got - 1.25 * c) <= 1e-12, fmt("K=3, CE=%.15g: loss %.15g vs 1.25c %.15g", c, got, 1.25 * c)};
}

Outcome toy_end_to_end(const fs::path& work) {
  const auto t0 = Clock::now();
  auto data = rendered(256, 7, work / "toy_train");
  MvltModel model(ModelConfig::toy(), 7);
  TrainConfig pre = TrainConfig::pretrain_toy();
  pre.seed = 7;
  double at10 = 0.0, last = 0.0;
  {
    Trainer trainer(model, pre, data);
    trainer.run([&](const nlohmann::json& r) {
      if (r["step"] == 10) at10 = r["total"].get<double>();
      last = r["total"].get<double>();
    });
  }
  const double pre_s = seconds_since(t0);

  std::vector<ImageSample> subset(data.begin(), data.begin() + 32);
  TrainConfig fin = TrainConfig::finetune_toy();
  fin.seed = 7;
  {
    Trainer trainer(model, fin, subset);
    trainer.run();
  }
  const auto report = evaluate(model, subset, 3);
  const double total_s = seconds_since(t0);
  const bool pass = last * 2.0 <= at10 && report.word_accuracy >= 0.95 && total_s < 15 * 60;
  return {pass, fmt("pretrain total %.4f at step 10 -> %.4f at step %zu (%.1fx); overfit word acc %.3f "
                    "(t0..t3: %.3f %.3f %.3f %.3f); %.0f s pretrain + %.0f s finetune",
                    at10, last, pre.steps - 1, at10 / last, report.word_accuracy,
                    report.iteration_accuracy[0], report.iteration_accuracy[1],
                    report.iteration_accuracy[2], report.iteration_accuracy[3], pre_s, total_s - pre_s)};
}

std::string schema_of(const nlohmann::json& pre, const nlohmann::json& fin) {
  std::string s;
  for (const char* k : {"L_v1", "L_t1", "L_v2", "L_t2", "L_ur"}) s += pre[k].is_null() ? '-' : '#';
  return s + "/iter" + std::to_string(fin["L_iter"].size() - 1);
}

Outcome ablation_harness(const fs::path& work) {
  struct Row {
    LossToggles on;
    bool iter;
  };
  const Row rows[] = {{{true, true, true, true}, true},  {{true, true, true, true}, false},
                      {{false, false, true, true}, true}, {{false, false, true, true}, false},
                      {{true, true, false, false}, true}, {{true, true, false, false}, false},
                      {{true, false, false, false}, false}};
  auto data = rendered(64, 81, work / "abl_train");
  std::set<std::string> schemas;
  std::string listing;
  bool nulls_ok = true;
  const auto t0 = Clock::now();
  for (const auto& row : rows) {
    MvltModel model(ModelConfig::toy(), 8);
    TrainConfig pre = TrainConfig::pretrain_toy();
    pre.steps = 100;
    pre.warmup_steps = 10;
    pre.batch_labeled = 4;
    pre.losses = row.on;
    nlohmann::json last_pre;
    Trainer(model, pre, data).run([&](const nlohmann::json& r) { last_pre = r; });
    TrainConfig fin = TrainConfig::finetune_toy();
    fin.steps = 100;
    fin.warmup_steps = 10;
    fin.batch_labeled = 2;
    fin.use_iter = row.iter;
    nlohmann::json last_fin;
    Trainer(model, fin, data).run([&](const nlohmann::json& r) { last_fin = r; });
    nulls_ok = nulls_ok && last_pre["L_v1"].is_null() == !row.on.v1 && last_pre["L_t1"].is_null() == !row.on.t1 &&
               last_pre["L_v2"].is_null() == !row.on.v2 && last_pre["L_t2"].is_null() == !row.on.t2 &&
               last_pre["step"] == 99 && last_fin["step"] == 99;
    const auto schema = schema_of(last_pre, last_fin);
    schemas.insert(schema);
    listing += (listing.empty() ? "" : " ") + schema;
  }
  return {schemas.size() == 7 && nulls_ok,
          fmt("%zu distinct schemas [%s], 100+100 steps each, %.0f s", schemas.size(), listing.c_str(),
              seconds_since(t0))};
}

Outcome determinism(const fs::path& work) {
  auto data = rendered(32, 91, work / "det_train");
  TrainConfig tc = TrainConfig::pretrain_toy();
  tc.steps = 30;
  tc.warmup_steps = 5;
  tc.batch_labeled = 4;
  tc.seed = 9;
  auto run = [&](std::size_t steps) {
    MvltModel model(ModelConfig::toy(), 9);
    Trainer trainer(model, tc, data);
    std::vector<double> losses;
    for (std::size_t i = 0; i < steps; ++i) losses.push_back(trainer.run_step()["total"].get<double>());
    return std::make_pair(serialize_checkpoint(trainer.checkpoint()), losses);
  };
  const auto a = run(20), b = run(20);
  const bool identical = a.first == b.first && a.second == b.second;

  MvltModel straight(ModelConfig::toy(), 9);
  Trainer ref(straight, tc, data);
  for (int i = 0; i < 10; ++i) ref.run_step();
  save_checkpoint(work / "det.ckpt", ref.checkpoint());
  std::vector<double> expected;
  for (int i = 0; i < 10; ++i) expected.push_back(ref.run_step()["total"].get<double>());
  MvltModel fresh(ModelConfig::toy(), 1234);
  Trainer resumed(fresh, tc, data);
  resumed.resume(load_checkpoint(work / "det.ckpt"));
  std::vector<double> got;
  for (int i = 0; i < 10; ++i) got.push_back(resumed.run_step()["total"].get<double>());
  const bool resumes = got == expected;
  return {identical && resumes, fmt("identical runs give byte-identical checkpoints (%zu bytes): %s; "
                                    "resume reproduces next 10 losses exactly: %s",
                                    a.first.size(), identical ? "yes" : "no", resumes ? "yes" : "no")};
}

Outcome iterative_protocol(const fs::path& work) {
  const auto cfg = ModelConfig::toy();
  MvltModel model(cfg, 10);
  auto data = rendered(16, 101, work / "iter_eval");
  const auto report = evaluate(model, data, 3);
  bool bitwise = true;
  for (const auto& s : data) {
    const Tensor v = model.encode_full(patchify(s.image, cfg.patch).patches);
    const CharTargets blank(cfg.max_len, model.charset().eos());
    auto plain = model.decode(v, empty_patch_mask(cfg.num_patches()), blank, full_text_mask(cfg.max_len));
    bitwise = bitwise && values(model.iterative_correct(v, 0)[0]) == values(plain.text_logits);
  }
  const auto k0 = evaluate(model, data, 0);
  const bool consistent = k0.iteration_accuracy.size() == 1 &&
                          k0.iteration_accuracy[0] == report.iteration_accuracy[0];
  return {report.iteration_accuracy.size() == 4 && bitwise && consistent,
          fmt("K=3 eval emits %zu accuracies; K=0 logits bit-identical to the all-MASK decode on %zu images: %s",
              report.iteration_accuracy.size(), data.size(), bitwise ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only, skip;
  std::string work = (fs::temp_directory_path() / "mvlt_acceptance").string();
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_option("--skip", skip, "Criteria to skip")->delimiter(',');
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"masking exactness", masking_exactness},
      {"shared decoder parameters", shared_decoder},
      {"implicit-branch independence", implicit_independence},
      {"semi-supervised isolation", [&] { return semi_supervised_isolation(work); }},
      {"fine-tuning objective at K=3", finetune_formula},
      {"toy end-to-end learning", [&] { return toy_end_to_end(work); }},
      {"ablation harness", [&] { return ablation_harness(work); }},
      {"determinism and persistence", [&] { return determinism(work); }},
      {"iterative-correction protocol", [&] { return iterative_protocol(work); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    if (std::find(skip.begin(), skip.end(), id) != skip.end()) {
      std::printf("SKIP %2d %s\n", id, criteria[i].first);
      continue;
    }
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
