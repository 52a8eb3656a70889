#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvlt/config.hpp"

namespace mvlt {

struct TensorGradError {
  std::string name;
  std::size_t numel = 0;
  double max_abs_error = 0.0;
  double max_abs_grad = 0.0;
  double rel_error = 0.0;         // max over scalars of |a - c| / max(floor, |c|)
  double strict_rel_error = 0.0;  // same with a 1e-8 floor
};

struct GradcheckResult {
  std::vector<TensorGradError> tensors;
  double max_rel_error = 0.0;
  double strict_rel_error = 0.0;
  std::string worst;
  std::size_t evaluations = 0;
  double seconds = 0.0;
  double loss = 0.0;

  bool passed(double tol = 1e-4) const { return max_rel_error <= tol; }
};

struct GradcheckOptions {
  ModelConfig model = ModelConfig::micro();
  std::uint64_t seed = 0;
  double h = 1e-5;
  // Central differences at h = 1e-5 carry ~1e-11 of round-off, so scalars
  // with |grad| below ~1e-7 cannot resolve 1e-4 relative error.
  double floor = 1e-6;
  std::size_t labeled = 2;
  std::size_t unlabeled = 1;
};

/// Compares analytic gradients of the full pretraining loss (all four
/// supervised terms plus the unlabeled reconstruction term) with central
/// finite differences on every scalar of every parameter the loss reaches.
/// The stencil is the fourth-order one, (8(f(h) - f(-h)) - (f(2h) - f(-2h))) / 12h.
GradcheckResult gradcheck_pretrain(const GradcheckOptions& options = {});

}  // namespace mvlt
