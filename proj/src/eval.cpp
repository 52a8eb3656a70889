#include "mvlt/eval.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "mvlt/config.hpp"
#include "mvlt/error.hpp"
#include "mvlt/ops.hpp"
#include "mvlt/vision.hpp"

namespace mvlt {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

void check_dims(const ModelConfig& c, const Image& image) {
  if (image.height != c.height || image.width != c.width || image.channels != c.channels) {
    throw DataError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                    std::to_string(image.channels) + ", model expects " + std::to_string(c.height) + "x" +
                    std::to_string(c.width) + "x" + std::to_string(c.channels));
  }
}

std::vector<Tensor> correct(const MvltModel& model, const Image& image, std::size_t iterations) {
  check_dims(model.config(), image);
  const Tensor patches = patchify(image, model.config().patch).patches;
  auto logits = model.iterative_correct(model.encode_full(patches), iterations);
  for (auto& t : logits) t = t.detach();
  return logits;
}

Image compose(const Tensor& original, const Tensor& predicted, const PatchMaskPlan& plan,
              const PatchSequence& layout) {
  PatchSequence seq = layout;
  seq.patches = original.clone();
  auto dst = seq.patches.data();
  const auto src = predicted.data();
  const std::size_t d = original.cols();
  for (auto i : plan.masked) std::copy_n(src.begin() + i * d, d, dst.begin() + i * d);
  return unpatchify(seq);
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  return {{"word_accuracy", word_accuracy},
          {"char_accuracy", char_accuracy},
          {"count", count},
          {"iteration_accuracy", iteration_accuracy},
          {"config_hash", config_hash}};
}

std::string EvalReport::accuracy_curve_csv() const {
  std::ostringstream out;
  out << "iteration_count,accuracy\n";
  out.precision(17);
  for (std::size_t k = 0; k < iteration_accuracy.size(); ++k) out << k << ',' << iteration_accuracy[k] << '\n';
  return out.str();
}

EvalReport evaluate(const MvltModel& model, std::span<const ImageSample> samples, std::size_t iterations) {
  const auto& cfg = model.config();
  const auto& charset = model.charset();
  EvalReport report;
  report.config_hash = config_hash(cfg);
  report.iteration_accuracy.assign(iterations + 1, 0.0);
  std::size_t char_hits = 0;
  for (const auto& s : samples) {
    if (!s.label) throw DataError("evaluation needs labels; sample " + s.sample_id + " has none");
    const auto logits = correct(model, s.image, iterations);
    const std::string label = lower(*s.label);
    for (std::size_t k = 0; k <= iterations; ++k) {
      if (decode_prediction(logits[k], charset) == label) report.iteration_accuracy[k] += 1.0;
    }
    const auto targets = encode_label(label, cfg.max_len, charset);
    const auto& last = logits.back();
    for (std::size_t pos = 0; pos < cfg.max_len; ++pos) {
      auto row = last.data().subspan(pos * last.cols(), last.cols());
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == targets[pos]) ++char_hits;
    }
  }
  report.count = samples.size();
  if (report.count > 0) {
    const double n = static_cast<double>(report.count);
    for (auto& a : report.iteration_accuracy) a /= n;
    report.char_accuracy = static_cast<double>(char_hits) / (n * static_cast<double>(cfg.max_len));
  }
  report.word_accuracy = report.iteration_accuracy.back();
  return report;
}

std::vector<std::string> predict(const MvltModel& model, const Image& image, std::size_t iterations) {
  std::vector<std::string> words;
  for (const auto& t : correct(model, image, iterations)) words.push_back(decode_prediction(t, model.charset()));
  return words;
}

Reconstruction reconstruct(const MvltModel& model, const ImageSample& sample, std::uint64_t seed) {
  const auto& cfg = model.config();
  check_dims(cfg, sample.image);
  Rng rng = Rng::derive(seed, {0x7265636f});
  const PatchSequence seq = patchify(sample.image, cfg.patch);
  const auto plan = sample_patch_mask(cfg.num_patches(), cfg.patch_mask_ratio, rng);

  CharTargets targets(cfg.max_len, model.charset().eos());
  TextMaskPlan explicit_plan = full_text_mask(cfg.max_len);
  if (sample.label) {
    targets = encode_label(*sample.label, cfg.max_len, model.charset());
    explicit_plan = sample_text_mask(sample.label->size(), cfg.text_mask_ratio_explicit, cfg.max_len, rng);
  }
  const Tensor visual = model.encode_masked(seq.patches, plan);
  const auto d1 = model.decode(visual, plan, targets, explicit_plan);
  const auto d2 = model.decode(visual, plan, targets, full_text_mask(cfg.max_len));

  Reconstruction out;
  out.masked_patches = plan.masked.size();
  out.ground_truth = sample.image;
  out.masked = compose(seq.patches, Tensor::zeros(seq.patches.shape()), plan, seq);
  out.recon_explicit = compose(seq.patches, d1.pixels.detach(), plan, seq);
  out.recon_implicit = compose(seq.patches, d2.pixels.detach(), plan, seq);
  out.text_explicit = decode_prediction(d1.text_logits.detach(), model.charset());
  out.text_implicit = decode_prediction(d2.text_logits.detach(), model.charset());
  return out;
}

}  // namespace mvlt
