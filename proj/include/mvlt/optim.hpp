#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mvlt/tensor.hpp"

namespace mvlt {

struct Parameter {
  std::string name;
  Tensor value;
  bool weight_decay = true;   // matrices decay; biases, norms and tables do not
  std::optional<int> layer;   // encoder depth index for layer-wise lr decay
  bool frozen = false;        // skipped by the optimizer
};

/// Named trainable tensors in insertion order. Names are unique and the
/// order only depends on the model configuration.
class ParameterStore {
 public:
  Tensor& add(std::string name, Tensor value, bool weight_decay, std::optional<int> layer = {});

  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  Parameter& entry(std::string_view name);
  bool contains(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t numel() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  // Layer ids run 0..top_layer-1 for the encoder stack; everything without a
  // layer id sits at top_layer and keeps the full learning rate.
  int top_layer() const { return top_layer_; }
  void set_top_layer(int top) { top_layer_ = top; }
  double lr_multiplier(const Parameter& p, std::optional<double> layer_decay) const;

  // Allocates zeroed grads on every parameter.
  void zero_grad();
  void clear_grad();
  void set_frozen(std::string_view prefix, bool frozen);

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
  int top_layer_ = 0;
};

struct LrSchedule {
  double base_lr = 1e-3;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::optional<double> grad_clip;
  std::optional<double> layer_decay;

  void validate() const;
};

struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;

  // Zero moments shaped like the store's parameters.
  static AdamWState for_store(const ParameterStore& store);
};

/// Linear warmup from 0 to base_lr, then cosine decay to 0 at total_steps.
double lr_at(std::size_t step, const LrSchedule& schedule);

/// One decoupled-weight-decay Adam update with bias-corrected moments.
/// Frozen parameters and parameters without a gradient are left untouched;
/// grads are cleared after.
void adamw_step(ParameterStore& store, AdamWState& state, double lr, const LrSchedule& schedule);

double global_grad_norm(const ParameterStore& store);

/// Scales all grads by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the factor applied (1.0 when untouched).
double clip_global_norm(ParameterStore& store, double max_norm = 2.0);

}  // namespace mvlt
