// SPDX-License-Identifier: Apache-2.0
//
// Stochastic image augmentation. The student view uses the strong policy and
// the three teacher views use the weak one (crop + flip only).
#pragma once

#include <array>
#include <utility>

#include "msvq/image.hpp"
#include "msvq/rng.hpp"

namespace msvq {

struct JitterStrengths {
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
};

struct AugmentPolicy {
  std::pair<double, double> crop_scale{0.2, 1.0};
  std::pair<double, double> crop_ratio{3.0 / 4.0, 4.0 / 3.0};
  std::size_t out_height = 32;
  std::size_t out_width = 32;
  double p_flip = 0.5;
  double p_jitter = 0.0;
  double p_gray = 0.0;
  double p_blur = 0.0;
  JitterStrengths jitter;
  std::pair<double, double> blur_sigma{0.1, 2.0};

  /// Student recipe: crop (0.2, 1), flip 0.5, jitter 0.8, gray 0.2, blur 0.5.
  static AugmentPolicy strong(std::size_t out_h, std::size_t out_w);
  /// Teacher recipe: crop (0.2, 1), flip 0.9, nothing else.
  static AugmentPolicy weak(std::size_t out_h, std::size_t out_w);

  /// Throws ParameterError on out-of-range fields.
  void validate() const;
};

Image random_resized_crop(const Image& img, std::pair<double, double> scale,
                          std::pair<double, double> ratio, std::size_t out_h, std::size_t out_w,
                          SeededRng& rng);

/// Bilinear resampling with half-pixel centres.
Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w);

Image horizontal_flip(const Image& img, double p, SeededRng& rng);
Image color_jitter(const Image& img, double p, const JitterStrengths& strengths, SeededRng& rng);
Image grayscale(const Image& img, double p, SeededRng& rng);
Image gaussian_blur(const Image& img, double p, std::pair<double, double> sigma_range, SeededRng& rng);

/// Odd blur kernel width used for an image of the given width.
std::size_t blur_kernel_size(std::size_t width);

/// Deterministic blur with a fixed sigma (symmetric edge extension).
Image gaussian_blur_fixed(const Image& img, double sigma);

/// crop → flip → jitter → gray → blur for one image.
Image apply_policy(const Image& img, const AugmentPolicy& policy, SeededRng& rng);

/// Image i draws from rng.derive(i), so results do not depend on batch order
/// or on how the batch is split across workers.
ImageBatch apply_policy(const ImageBatch& batch, const AugmentPolicy& policy, const SeededRng& rng);

}  // namespace msvq
