#include "mvlt/optim.hpp"

#include <cmath>
#include <numbers>

#include "mvlt/error.hpp"

namespace mvlt {

Tensor& ParameterStore::add(std::string name, Tensor value, bool weight_decay,
                            std::optional<int> layer) {
  if (index_.contains(name)) throw ContractError("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(value), weight_decay, layer, false});
  return params_.back().value;
}

Parameter& ParameterStore::entry(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
  return params_[it->second];
}

Tensor& ParameterStore::get(std::string_view name) { return entry(name).value; }

const Tensor& ParameterStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
  return params_[it->second].value;
}

bool ParameterStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::size_t ParameterStore::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

double ParameterStore::lr_multiplier(const Parameter& p,
                                     std::optional<double> layer_decay) const {
  if (!layer_decay || !p.layer) return 1.0;
  return std::pow(*layer_decay, top_layer_ - *p.layer);
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void ParameterStore::clear_grad() {
  for (auto& p : params_) p.value.clear_grad();
}

void ParameterStore::set_frozen(std::string_view prefix, bool frozen) {
  for (auto& p : params_) {
    if (p.name.starts_with(prefix)) p.frozen = frozen;
  }
}

void LrSchedule::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (warmup_steps > total_steps) throw ConfigError("warmup_steps exceeds total_steps");
  if (total_steps == 0) throw ConfigError("total_steps must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("betas must lie in [0, 1)");
  }
  if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
  if (layer_decay && !(*layer_decay > 0.0)) throw ConfigError("layer_decay must be positive");
}

AdamWState AdamWState::for_store(const ParameterStore& store) {
  AdamWState s;
  for (const auto& p : store) {
    s.m.emplace_back(p.value.numel(), 0.0);
    s.v.emplace_back(p.value.numel(), 0.0);
  }
  return s;
}

double lr_at(std::size_t step, const LrSchedule& s) {
  if (step > s.total_steps) step = s.total_steps;
  if (step < s.warmup_steps) {
    return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const std::size_t span = s.total_steps - s.warmup_steps;
  if (span == 0) return s.base_lr;
  const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
  return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(ParameterStore& store, AdamWState& state, double lr, const LrSchedule& schedule) {
  if (state.m.size() != store.size()) {
    throw ContractError("optimizer state has " + std::to_string(state.m.size()) +
                        " slots for " + std::to_string(store.size()) + " parameters");
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(schedule.beta1, t);
  const double bc2 = 1.0 - std::pow(schedule.beta2, t);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    if (p.frozen || !p.value.has_grad()) continue;
    const double plr = lr * store.lr_multiplier(p, schedule.layer_decay);
    auto w = p.value.data();
    auto g = p.value.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const double decay = p.weight_decay ? 1.0 - plr * schedule.weight_decay : 1.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] *= decay;
      m[j] = schedule.beta1 * m[j] + (1.0 - schedule.beta1) * g[j];
      v[j] = schedule.beta2 * v[j] + (1.0 - schedule.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= plr * mhat / (std::sqrt(vhat) + schedule.eps);
    }
  }
  store.clear_grad();
}

double global_grad_norm(const ParameterStore& store) {
  double sq = 0.0;
  for (const auto& p : store) {
    if (p.frozen || !p.value.has_grad()) continue;
    for (double g : p.value.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_global_norm(ParameterStore& store, double max_norm) {
  const double norm = global_grad_norm(store);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (auto& p : store) {
    if (p.frozen || !p.value.has_grad()) continue;
    for (double& g : p.value.grad()) g *= factor;
  }
  return factor;
}

}  // namespace mvlt
