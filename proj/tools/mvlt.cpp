// mvlt: data generation, training, evaluation and diagnostics.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "mvlt/checkpoint.hpp"
#include "mvlt/config.hpp"
#include "mvlt/datagen.hpp"
#include "mvlt/error.hpp"
#include "mvlt/eval.hpp"
#include "mvlt/gradcheck.hpp"
#include "mvlt/image.hpp"
#include "mvlt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3, kIo = 4 };

struct ConfigArgs {
  std::string preset = "toy";
  std::string file;
  std::vector<std::string> sets;
  bool dump = false;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--preset", a.preset, "Model preset: toy, micro or paper")
      ->check(CLI::IsMember({"toy", "micro", "paper"}));
  cmd->add_option("--config", a.file, "JSON file with optional \"model\" and \"train\" objects");
  cmd->add_option("--set", a.sets, "Override, e.g. train.steps=200 or model.iterations=2");
  cmd->add_flag("--dump-config", a.dump, "Print the effective configuration and exit");
}

mvlt::ModelConfig preset_model(const std::string& name) {
  if (name == "micro") return mvlt::ModelConfig::micro();
  if (name == "paper") return mvlt::ModelConfig::paper_scale();
  return mvlt::ModelConfig::toy();
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

// Layers defaults, the config file and --set overrides into {"model", "train"}.
json effective_config(const ConfigArgs& a, json base) {
  if (!a.file.empty()) {
    std::ifstream in(a.file);
    if (!in) throw mvlt::IoError("cannot open config " + a.file);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw mvlt::ConfigError("config " + a.file + " is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw mvlt::ConfigError("config file must hold a JSON object");
    for (auto& [section, body] : file.items()) {
      if (section != "model" && section != "train") throw mvlt::ConfigError("unknown config section: " + section);
      if (!base.contains(section)) throw mvlt::ConfigError("section '" + section + "' does not apply here");
      base[section].merge_patch(body);
    }
  }
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    const auto dot = s.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw mvlt::ConfigError("--set expects section.key=value, got '" + s + "'");
    }
    const std::string section = s.substr(0, dot);
    if (!base.contains(section)) throw mvlt::ConfigError("--set: unknown section '" + section + "'");
    base[section][s.substr(dot + 1, eq - dot - 1)] = parse_value(s.substr(eq + 1));
  }
  return base;
}

struct Resolved {
  mvlt::ModelConfig model;
  std::optional<mvlt::TrainConfig> train;
};

Resolved resolve(const json& j) {
  Resolved r;
  r.model = j.at("model").get<mvlt::ModelConfig>();
  r.model.validate();
  if (j.contains("train")) {
    r.train = j.at("train").get<mvlt::TrainConfig>();
    r.train->validate();
  }
  return r;
}

bool dump_if_asked(const ConfigArgs& a, const json& j) {
  if (!a.dump) return false;
  json out = j;
  out["schema_version"] = mvlt::kConfigSchemaVersion;
  std::cout << out.dump(2) << '\n';
  return true;
}

std::vector<mvlt::ImageSample> load_dir(const std::string& dir) {
  return mvlt::load_samples(mvlt::load_manifest(dir));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw mvlt::IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw mvlt::IoError("failed writing " + path.string());
}

struct TrainArgs {
  ConfigArgs config;
  std::string data;
  std::string unlabeled;
  std::string init;
  std::string resume;
  std::string out = "model.ckpt";
  std::string log;
  std::uint64_t model_seed = 0;
};

int run_training(const TrainArgs& a, mvlt::Stage stage) {
  std::optional<mvlt::Checkpoint> source;
  if (!a.resume.empty()) source = mvlt::load_checkpoint(a.resume);
  else if (!a.init.empty()) source = mvlt::load_checkpoint(a.init);

  const auto preset_train =
      stage == mvlt::Stage::pretrain ? mvlt::TrainConfig::pretrain_toy() : mvlt::TrainConfig::finetune_toy();
  json base{{"model", source ? json(source->model) : json(preset_model(a.config.preset))},
            {"train", (!a.resume.empty() && source->train) ? json(*source->train) : json(preset_train)}};
  base["train"]["stage"] = stage == mvlt::Stage::pretrain ? "pretrain" : "finetune";
  const json j = effective_config(a.config, base);
  if (dump_if_asked(a.config, j)) return kOk;
  const auto cfg = resolve(j);

  if (a.data.empty() && (stage == mvlt::Stage::finetune || cfg.train->losses.any())) {
    throw mvlt::ConfigError("--data is required");
  }
  std::vector<mvlt::ImageSample> labeled = a.data.empty() ? std::vector<mvlt::ImageSample>{} : load_dir(a.data);
  std::vector<mvlt::ImageSample> unlabeled;
  if (!a.unlabeled.empty()) {
    unlabeled = load_dir(a.unlabeled);
    for (auto& s : unlabeled) {
      if (s.label) {
        std::cerr << "warning: ignoring labels of " << a.unlabeled << '\n';
        break;
      }
    }
    for (auto& s : unlabeled) s.label.reset();
  }

  mvlt::MvltModel model(cfg.model, source ? source->seed : a.model_seed);
  if (source) mvlt::restore_parameters(model, *source);
  mvlt::Trainer trainer(model, *cfg.train, std::move(labeled), std::move(unlabeled));
  if (!a.resume.empty()) trainer.resume(*source);

  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log, a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw mvlt::IoError("cannot open log " + a.log);
  }
  const auto& tc = trainer.config();
  trainer.run([&](const json& record) {
    const std::size_t step = record.at("step").get<std::size_t>();
    const bool last = step + 1 == tc.steps;
    if (tc.log_every > 0 && (step % tc.log_every == 0 || last)) {
      const auto line = record.dump();
      std::cout << line << '\n';
      if (log) log << line << '\n';
    }
    if (tc.ckpt_every > 0 && (step + 1) % tc.ckpt_every == 0 && !last) {
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, ".step%08zu", step + 1);
      mvlt::save_checkpoint(a.out + suffix, trainer.checkpoint());
    }
  });
  mvlt::save_checkpoint(a.out, trainer.checkpoint());
  std::cerr << "wrote " << a.out << '\n';
  return kOk;
}

mvlt::MvltModel load_model(const std::string& path, const ConfigArgs& overrides) {
  auto ckpt = mvlt::load_checkpoint(path);
  const json j = effective_config(overrides, json{{"model", ckpt.model}});
  ckpt.model = resolve(j).model;
  return mvlt::model_from_checkpoint(ckpt);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const mvlt::IoError*>(&e) || dynamic_cast<const mvlt::FormatError*>(&e)) return kIo;
  if (dynamic_cast<const mvlt::DataError*>(&e) || dynamic_cast<const mvlt::LabelError*>(&e) ||
      dynamic_cast<const mvlt::DimensionError*>(&e)) {
    return kData;
  }
  if (dynamic_cast<const mvlt::ConfigError*>(&e)) return kUsage;
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked vision-language transformer for scene text recognition"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic word-image dataset");
  std::string gen_out, gen_words, gen_strip;
  std::size_t gen_n = 256, gen_offset = 0, gen_h = 32, gen_w = 128, gen_c = 1, gen_classes = 37;
  std::uint64_t gen_seed = 0;
  bool gen_unlabeled = false;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--n", gen_n, "Number of images");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--index-offset", gen_offset, "Global index of the first sample");
  gen->add_option("--words", gen_words, "Word list file, one word per line");
  gen->add_option("--height", gen_h, "Canvas height");
  gen->add_option("--width", gen_w, "Canvas width");
  gen->add_option("--channels", gen_c, "1 (gray) or 3 (RGB)")->check(CLI::IsMember({1, 3}));
  gen->add_option("--num-classes", gen_classes, "Charset size M including EOS");
  gen->add_flag("--unlabeled", gen_unlabeled, "Write images only");
  gen->add_option("--strip-from", gen_strip, "Copy an existing dataset's images without labels");

  // pretrain / finetune
  TrainArgs pre_args, fin_args;
  auto* pre = app.add_subcommand("pretrain", "Masked pretraining on labeled (+ unlabeled) images");
  add_config_options(pre, pre_args.config);
  pre->add_option("--data", pre_args.data, "Labeled dataset directory");
  pre->add_option("--unlabeled", pre_args.unlabeled, "Unlabeled dataset directory");
  pre->add_option("--init", pre_args.init, "Start from this checkpoint's weights");
  pre->add_option("--resume", pre_args.resume, "Continue an interrupted run");
  pre->add_option("--out", pre_args.out, "Checkpoint to write");
  pre->add_option("--log", pre_args.log, "JSON-lines log file");
  pre->add_option("--model-seed", pre_args.model_seed, "Initialization seed of a fresh model");

  auto* fin = app.add_subcommand("finetune", "Fine-tune with iterative correction");
  add_config_options(fin, fin_args.config);
  fin->add_option("--data", fin_args.data, "Labeled dataset directory");
  fin->add_option("--init", fin_args.init, "Pretrained checkpoint");
  fin->add_option("--resume", fin_args.resume, "Continue an interrupted run");
  fin->add_option("--out", fin_args.out, "Checkpoint to write");
  fin->add_option("--log", fin_args.log, "JSON-lines log file");
  fin->add_option("--model-seed", fin_args.model_seed, "Initialization seed of a fresh model");

  // eval
  auto* ev = app.add_subcommand("eval", "Word accuracy of t_0..t_K on a labeled dataset");
  ConfigArgs ev_cfg;
  std::string ev_ckpt, ev_data, ev_csv, ev_json;
  std::optional<std::size_t> ev_k;
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
  ev->add_option("--data", ev_data, "Labeled dataset directory")->required();
  ev->add_option("--iterations,-K", ev_k, "Correction iterations (default: model config)");
  ev->add_option("--csv", ev_csv, "Write the accuracy curve as CSV");
  ev->add_option("--report", ev_json, "Write the report as JSON");
  ev->add_option("--set", ev_cfg.sets, "Model config override");

  // predict
  auto* pr = app.add_subcommand("predict", "Decode one image");
  std::string pr_ckpt, pr_image;
  std::optional<std::size_t> pr_k;
  ConfigArgs pr_cfg;
  pr->add_option("--checkpoint", pr_ckpt, "Model checkpoint")->required();
  pr->add_option("--image", pr_image, "PGM/PPM image")->required();
  pr->add_option("--iterations,-K", pr_k, "Correction iterations (default: model config)");

  // reconstruct
  auto* rc = app.add_subcommand("reconstruct", "Dump masked input, both reconstructions and ground truth");
  std::string rc_ckpt, rc_image, rc_out, rc_label;
  std::uint64_t rc_seed = 0;
  ConfigArgs rc_cfg;
  rc->add_option("--checkpoint", rc_ckpt, "Pretrained checkpoint")->required();
  rc->add_option("--image", rc_image, "PGM/PPM image")->required();
  rc->add_option("--out-dir", rc_out, "Output directory")->required();
  rc->add_option("--label", rc_label, "Word shown to the explicit branch");
  rc->add_option("--seed", rc_seed, "Mask seed");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the pretraining gradients");
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  bool gc_verbose = false;
  gc->add_option("--seed", gc_seed, "Model and batch seed");
  gc->add_option("--tol", gc_tol, "Maximum relative error");
  gc->add_flag("--verbose,-v", gc_verbose, "Print every tensor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) {
      if (!gen_strip.empty()) {
        auto m = mvlt::strip_labels(mvlt::load_manifest(gen_strip), gen_out);
        std::cerr << "wrote " << m.size() << " unlabeled images to " << gen_out << '\n';
        return kOk;
      }
      mvlt::Charset charset(gen_classes);
      mvlt::DatasetOptions o;
      o.n = gen_n;
      o.seed = gen_seed;
      o.out_dir = gen_out;
      o.labeled = !gen_unlabeled;
      o.index_offset = gen_offset;
      o.canvas = {gen_h, gen_w, gen_c};
      if (!gen_words.empty()) o.words = mvlt::WordSource::from_file(gen_words, charset, 10);
      auto m = mvlt::make_dataset(o, charset);
      std::cerr << "wrote " << m.size() << " images to " << gen_out << '\n';
      return kOk;
    }
    if (pre->parsed()) return run_training(pre_args, mvlt::Stage::pretrain);
    if (fin->parsed()) return run_training(fin_args, mvlt::Stage::finetune);
    if (ev->parsed()) {
      auto model = load_model(ev_ckpt, ev_cfg);
      const auto k = ev_k.value_or(model.config().iterations);
      auto samples = load_dir(ev_data);
      auto report = mvlt::evaluate(model, samples, k);
      std::cout << report.to_json().dump(2) << '\n';
      if (!ev_csv.empty()) write_text(ev_csv, report.accuracy_curve_csv());
      if (!ev_json.empty()) write_text(ev_json, report.to_json().dump(2) + "\n");
      return kOk;
    }
    if (pr->parsed()) {
      auto model = load_model(pr_ckpt, pr_cfg);
      const auto k = pr_k.value_or(model.config().iterations);
      const auto words = mvlt::predict(model, mvlt::read_pnm(pr_image), k);
      for (std::size_t i = 0; i < words.size(); ++i) std::cout << "t" << i << '\t' << words[i] << '\n';
      return kOk;
    }
    if (rc->parsed()) {
      auto model = load_model(rc_ckpt, rc_cfg);
      mvlt::ImageSample s{mvlt::read_pnm(rc_image), std::nullopt, rc_image};
      if (!rc_label.empty()) s.label = rc_label;
      const auto r = mvlt::reconstruct(model, s, rc_seed);
      const fs::path dir(rc_out);
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec) throw mvlt::IoError("cannot create " + rc_out + ": " + ec.message());
      const std::string ext = s.image.channels == 3 ? ".ppm" : ".pgm";
      mvlt::write_pnm(dir / ("masked" + ext), r.masked);
      mvlt::write_pnm(dir / ("recon_explicit" + ext), r.recon_explicit);
      mvlt::write_pnm(dir / ("recon_implicit" + ext), r.recon_implicit);
      mvlt::write_pnm(dir / ("ground_truth" + ext), r.ground_truth);
      write_text(dir / "predictions.txt", "explicit\t" + r.text_explicit + "\nimplicit\t" + r.text_implicit +
                                              "\nmasked_patches\t" + std::to_string(r.masked_patches) + "\n");
      std::cout << "explicit\t" << r.text_explicit << "\nimplicit\t" << r.text_implicit << '\n';
      return kOk;
    }
    if (gc->parsed()) {
      mvlt::GradcheckOptions o;
      o.seed = gc_seed;
      const auto r = mvlt::gradcheck_pretrain(o);
      if (gc_verbose) {
        for (const auto& t : r.tensors) {
          std::cout << std::left << std::setw(36) << t.name << " rel " << std::scientific << std::setprecision(3)
                    << t.rel_error << "  strict " << t.strict_rel_error << "  max|g| " << t.max_abs_grad << '\n';
        }
      }
      std::cout << std::scientific << std::setprecision(3) << "tensors " << r.tensors.size() << "  evaluations "
                << r.evaluations << "  max rel err " << r.max_rel_error << " (" << r.worst << ")  with 1e-8 floor "
                << r.strict_rel_error << "  "
                << std::fixed << std::setprecision(1) << r.seconds << " s  "
                << (r.passed(gc_tol) ? "PASS" : "FAIL") << '\n';
      return r.passed(gc_tol) ? kOk : kNumeric;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kUsage;
}
