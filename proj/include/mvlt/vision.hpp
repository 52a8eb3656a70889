#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "mvlt/image.hpp"
#include "mvlt/rng.hpp"
#include "mvlt/tensor.hpp"

namespace mvlt {

/// N x (P*P*C) patch matrix in row-major grid order; each row holds one
/// patch flattened channel-last.
struct PatchSequence {
  Tensor patches;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t patch = 0;
  std::size_t channels = 1;

  std::size_t count() const { return grid_h * grid_w; }
  std::size_t patch_dim() const { return patch * patch * channels; }
};

PatchSequence patchify(const Image& image, std::size_t patch);
Image unpatchify(const PatchSequence& seq);

struct PatchMaskPlan {
  std::vector<std::size_t> masked;    // sorted
  std::vector<std::size_t> unmasked;  // sorted (encoder row order)
  double ratio = 0.0;

  std::size_t count() const { return masked.size() + unmasked.size(); }
};

/// Masks round(ratio * n) patches chosen uniformly without replacement.
PatchMaskPlan sample_patch_mask(std::size_t n, double ratio, Rng& rng);

/// Nothing masked.
PatchMaskPlan empty_patch_mask(std::size_t n);

/// Crop with area fraction in `scale` and log-uniform aspect (w/h) in
/// `aspect`, resized bilinearly back to the input size. Falls back to a
/// center crop after 10 rejected draws.
Image random_resized_crop(const Image& image, Rng& rng, std::pair<double, double> scale = {0.85, 1.0},
                          std::pair<double, double> aspect = {3.5, 5.0});

/// Bilinear resize with half-pixel centers and edge clamping.
Image resize_bilinear(const Image& image, std::size_t out_h, std::size_t out_w);

/// Rotation about the image center by a uniform angle in [-max_degrees,
/// max_degrees], bilinear sampling with edge clamping.
Image random_rotation(const Image& image, Rng& rng, double max_degrees = 10.0);

}  // namespace mvlt
