#include "mvlt/vision.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mvlt/error.hpp"
#include "mvlt/text.hpp"

namespace mvlt {

PatchSequence patchify(const Image& image, std::size_t patch) {
  if (patch == 0 || image.height % patch != 0 || image.width % patch != 0) {
    throw ConfigError("patch size " + std::to_string(patch) + " does not divide image " +
                      std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  PatchSequence seq;
  seq.grid_h = image.height / patch;
  seq.grid_w = image.width / patch;
  seq.patch = patch;
  seq.channels = image.channels;
  const std::size_t dim = seq.patch_dim();
  Buffer data(seq.count() * dim);
  for (std::size_t gy = 0; gy < seq.grid_h; ++gy) {
    for (std::size_t gx = 0; gx < seq.grid_w; ++gx) {
      double* row = data.data() + (gy * seq.grid_w + gx) * dim;
      for (std::size_t py = 0; py < patch; ++py) {
        for (std::size_t px = 0; px < patch; ++px) {
          for (std::size_t c = 0; c < image.channels; ++c) {
            row[(py * patch + px) * image.channels + c] =
                image.at(gy * patch + py, gx * patch + px, c);
          }
        }
      }
    }
  }
  seq.patches = Tensor({seq.count(), dim}, std::move(data));
  return seq;
}

Image unpatchify(const PatchSequence& seq) {
  const std::size_t dim = seq.patch_dim();
  if (!seq.patches.defined() || seq.patches.rows() != seq.count() || seq.patches.cols() != dim) {
    throw DimensionError("patch matrix " +
                         (seq.patches.defined() ? shape_str(seq.patches.shape()) : std::string("<none>")) +
                         " does not match a " + std::to_string(seq.grid_h) + "x" +
                         std::to_string(seq.grid_w) + " grid of " + std::to_string(dim) + "-value patches");
  }
  Image img(seq.grid_h * seq.patch, seq.grid_w * seq.patch, seq.channels);
  auto data = seq.patches.data();
  for (std::size_t gy = 0; gy < seq.grid_h; ++gy) {
    for (std::size_t gx = 0; gx < seq.grid_w; ++gx) {
      const double* row = data.data() + (gy * seq.grid_w + gx) * dim;
      for (std::size_t py = 0; py < seq.patch; ++py) {
        for (std::size_t px = 0; px < seq.patch; ++px) {
          for (std::size_t c = 0; c < seq.channels; ++c) {
            img.at(gy * seq.patch + py, gx * seq.patch + px, c) =
                row[(py * seq.patch + px) * seq.channels + c];
          }
        }
      }
    }
  }
  return img;
}

PatchMaskPlan sample_patch_mask(std::size_t n, double ratio, Rng& rng) {
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("patch mask ratio outside [0, 1]");
  PatchMaskPlan plan;
  plan.ratio = ratio;
  std::vector<bool> masked(n, false);
  for (auto i : rng.choose(n, round_half_up(ratio * static_cast<double>(n)))) masked[i] = true;
  for (std::size_t i = 0; i < n; ++i) (masked[i] ? plan.masked : plan.unmasked).push_back(i);
  return plan;
}

PatchMaskPlan empty_patch_mask(std::size_t n) {
  PatchMaskPlan plan;
  plan.unmasked.resize(n);
  for (std::size_t i = 0; i < n; ++i) plan.unmasked[i] = i;
  return plan;
}

namespace {

// Bilinear sample at continuous source coordinates (pixel centers at +0.5),
// clamped to the image border.
double sample_bilinear(const Image& img, double sy, double sx, std::size_t c) {
  sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(sy));
  const auto x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const double fy = sy - static_cast<double>(y0);
  const double fx = sx - static_cast<double>(x0);
  const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
  const double bot = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
  return top * (1.0 - fy) + bot * fy;
}

Image crop_resize(const Image& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w,
                  std::size_t out_h, std::size_t out_w) {
  Image out(out_h, out_w, img.channels);
  const double ky = static_cast<double>(h) / static_cast<double>(out_h);
  const double kx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = std::clamp((static_cast<double>(y) + 0.5) * ky - 0.5, 0.0,
                                 static_cast<double>(h - 1)) + static_cast<double>(top);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = std::clamp((static_cast<double>(x) + 0.5) * kx - 0.5, 0.0,
                                   static_cast<double>(w - 1)) + static_cast<double>(left);
      for (std::size_t c = 0; c < img.channels; ++c) {
        out.at(y, x, c) = std::clamp(sample_bilinear(img, sy, sx, c), 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace

Image resize_bilinear(const Image& image, std::size_t out_h, std::size_t out_w) {
  return crop_resize(image, 0, 0, image.height, image.width, out_h, out_w);
}

Image random_resized_crop(const Image& image, Rng& rng, std::pair<double, double> scale,
                          std::pair<double, double> aspect) {
  const double H = static_cast<double>(image.height), W = static_cast<double>(image.width);
  const double area = H * W;
  const double log_lo = std::log(aspect.first), log_hi = std::log(aspect.second);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(scale.first, scale.second);
    const double ar = std::exp(rng.uniform(log_lo, log_hi));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ar)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ar)));
    if (w > 0 && h > 0 && w <= image.width && h <= image.height) {
      const std::size_t top = rng.below(image.height - h + 1);
      const std::size_t left = rng.below(image.width - w + 1);
      return crop_resize(image, top, left, h, w, image.height, image.width);
    }
  }
  // Center crop at the nearest admissible aspect ratio.
  const double in_ratio = W / H;
  std::size_t w = image.width, h = image.height;
  if (in_ratio < aspect.first) {
    h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(W / aspect.first)));
  } else if (in_ratio > aspect.second) {
    w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(H * aspect.second)));
  }
  return crop_resize(image, (image.height - h) / 2, (image.width - w) / 2, h, w, image.height,
                     image.width);
}

Image random_rotation(const Image& image, Rng& rng, double max_degrees) {
  const double angle = rng.uniform(-max_degrees, max_degrees) * std::numbers::pi / 180.0;
  const double cs = std::cos(angle), sn = std::sin(angle);
  const double cy = static_cast<double>(image.height) / 2.0;
  const double cx = static_cast<double>(image.width) / 2.0;
  Image out(image.height, image.width, image.channels);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double dx = static_cast<double>(x) + 0.5 - cx;
      // Inverse map: rotate the destination point back into the source.
      const double sx = cs * dx + sn * dy + cx - 0.5;
      const double sy = -sn * dx + cs * dy + cy - 0.5;
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(y, x, c) = std::clamp(sample_bilinear(image, sy, sx, c), 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace mvlt
