#include "mvlt/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_set>

#include "mvlt/model.hpp"
#include "mvlt/objectives.hpp"

namespace mvlt {
namespace {

std::string random_word(Rng& rng, const Charset& charset, std::size_t max_len) {
  const std::size_t len = 1 + rng.below(max_len - 1);
  const auto& symbols = charset.symbols();
  std::string w;
  for (std::size_t i = 0; i < len; ++i) w.push_back(symbols[rng.below(symbols.size())]);
  return w;
}

ImageSample random_sample(Rng& rng, const ModelConfig& c, std::optional<std::string> label) {
  Image img(c.height, c.width, c.channels);
  for (auto& px : img.pixels) px = rng.uniform();
  return {std::move(img), std::move(label), ""};
}

}  // namespace

GradcheckResult gradcheck_pretrain(const GradcheckOptions& o) {
  const auto start = std::chrono::steady_clock::now();
  o.model.validate();
  MvltModel model(o.model, o.seed);
  Rng rng = Rng::derive(o.seed, {0x67726164});

  std::vector<ImageSample> labeled, unlabeled;
  for (std::size_t i = 0; i < o.labeled; ++i) {
    labeled.push_back(random_sample(rng, o.model, random_word(rng, model.charset(), o.model.max_len)));
  }
  for (std::size_t i = 0; i < o.unlabeled; ++i) unlabeled.push_back(random_sample(rng, o.model, std::nullopt));
  const MixedBatch batch = build_mixed_batch(labeled, unlabeled, o.model, rng);
  const LossToggles all;

  GradcheckResult result;
  auto& store = model.params();
  store.clear_grad();
  Tensor loss = mixed_batch_loss(batch, model, all).total;
  result.loss = loss.item();
  const auto reached = reachable_leaves(loss);
  const std::unordered_set<const void*> reach(reached.begin(), reached.end());
  loss.backward();
  loss = Tensor();

  for (auto& p : store) {
    if (!reach.contains(p.value.storage_id())) continue;
    const auto grad = p.value.grad();
    const std::vector<double> analytic(grad.begin(), grad.end());
    auto w = p.value.data();
    TensorGradError e{p.name, w.size()};
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      auto at = [&](double offset) {
        w[i] = saved + offset;
        return mixed_batch_loss(batch, model, all).total.item();
      };
      const double numeric = (8.0 * (at(o.h) - at(-o.h)) - (at(2.0 * o.h) - at(-2.0 * o.h))) / (12.0 * o.h);
      w[i] = saved;
      result.evaluations += 4;
      const double err = std::abs(analytic[i] - numeric);
      e.max_abs_grad = std::max(e.max_abs_grad, std::abs(numeric));
      e.max_abs_error = std::max(e.max_abs_error, err);
      e.rel_error = std::max(e.rel_error, err / std::max(o.floor, std::abs(numeric)));
      e.strict_rel_error = std::max(e.strict_rel_error, err / std::max(1e-8, std::abs(numeric)));
    }
    result.strict_rel_error = std::max(result.strict_rel_error, e.strict_rel_error);
    if (e.rel_error >= result.max_rel_error) {
      result.max_rel_error = e.rel_error;
      result.worst = p.name;
    }
    result.tensors.push_back(std::move(e));
  }
  store.clear_grad();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace mvlt
