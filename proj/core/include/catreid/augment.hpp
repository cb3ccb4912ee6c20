// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include "catreid/image.hpp"
#include "catreid/rng.hpp"

namespace catreid {

// Training-time augmentation knobs. Magnitude 0 (or probability 0, or
// count 0) disables the corresponding transform entirely, so the all-zero
// config with identity normalization is a bitwise no-op.
struct AugmentConfig {
  double hflip_p = 0.5;
  double rotation_deg = 15.0;    // max absolute rotation
  double translate_frac = 0.10;  // max shift as a fraction of each dimension
  std::pair<double, double> blur_sigma_range{0.1, 2.0};
  double blur_p = 0.3;
  double noise_sigma = 0.01;  // stddev as a fraction of dynamic range
  double noise_p = 0.3;

  struct Jitter {
    double brightness = 0.2;
    double contrast = 0.2;
    double saturation = 0.2;
    double hue = 0.05;  // fraction of the hue circle, <= 0.5
  } jitter;

  struct Cutout {
    int count = 1;
    double max_side_frac = 0.25;
  } cutout;

  struct Perspective {
    double distortion_scale = 0.3;
    double p = 0.5;
  } perspective;

  std::array<double, 3> norm_mean{0.485, 0.456, 0.406};  // pretrained-source statistics
  std::array<double, 3> norm_std{0.229, 0.224, 0.225};

  void validate() const;  // throws UserError on out-of-range values

  // Everything off, normalization (0,1): apply() becomes to_float().
  static AugmentConfig identity();
};

// Deterministic under (seed, draw_key): the per-image stream is derived
// from both, so parallel loader workers and repeated runs agree bitwise.
class TrainPipeline {
 public:
  TrainPipeline(AugmentConfig cfg, std::uint64_t seed);
  ImageF apply(const ImageU8& input, std::uint64_t draw_key) const;
  const AugmentConfig& config() const { return cfg_; }

 private:
  AugmentConfig cfg_;
  std::uint64_t seed_;
};

// Exactly normalization; no stochastic ops, no resize.
class EvalPipeline {
 public:
  explicit EvalPipeline(AugmentConfig cfg);
  ImageF apply(const ImageU8& input) const;

 private:
  AugmentConfig cfg_;
};

// Individual transforms, exposed for tests. All operate on [0,1] floats.
void flip_horizontal(ImageF& img);
// rotation about the image center followed by translation, zero fill
ImageF affine_warp(const ImageF& img, double angle_deg, double tx_px, double ty_px);
ImageF perspective_warp(const ImageF& img, const std::array<std::array<double, 2>, 4>& src_corners,
                        const std::array<std::array<double, 2>, 4>& dst_corners);
void gaussian_blur(ImageF& img, double sigma);
void add_gaussian_noise(ImageF& img, double sigma, rng::Stream& stream);
void color_jitter(ImageF& img, double brightness_factor, double contrast_factor,
                  double saturation_factor, double hue_shift);
void cutout_rects(ImageF& img, int count, double max_side_frac, rng::Stream& stream);
void normalize(ImageF& img, const std::array<double, 3>& mean, const std::array<double, 3>& std);
void denormalize(ImageF& img, const std::array<double, 3>& mean, const std::array<double, 3>& std);

}  // namespace catreid
