// SPDX-License-Identifier: Apache-2.0
#include "catreid/augment.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "catreid/errors.hpp"

namespace catreid {

void AugmentConfig::validate() const {
  auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in01(hflip_p) || !in01(blur_p) || !in01(noise_p) || !in01(perspective.p))
    throw UserError("augment: probabilities must lie in [0,1]");
  if (rotation_deg < 0) throw UserError("augment: rotation_deg must be >= 0");
  if (translate_frac < 0 || translate_frac > 1)
    throw UserError("augment: translate_frac must lie in [0,1]");
  if (blur_sigma_range.first < 0 || blur_sigma_range.second < blur_sigma_range.first)
    throw UserError("augment: blur_sigma_range must be a non-negative interval");
  if (noise_sigma < 0) throw UserError("augment: noise_sigma must be >= 0");
  if (jitter.brightness < 0 || jitter.contrast < 0 || jitter.saturation < 0)
    throw UserError("augment: jitter magnitudes must be >= 0");
  if (jitter.hue < 0 || jitter.hue > 0.5) throw UserError("augment: jitter.hue must lie in [0,0.5]");
  if (cutout.count < 0) throw UserError("augment: cutout.count must be >= 0");
  if (cutout.count > 0 && (cutout.max_side_frac <= 0 || cutout.max_side_frac > 1))
    throw UserError("augment: cutout.max_side_frac must lie in (0,1]");
  if (perspective.distortion_scale < 0 || perspective.distortion_scale > 1)
    throw UserError("augment: perspective.distortion_scale must lie in [0,1]");
  for (double s : norm_std)
    if (s <= 0) throw UserError("augment: norm_std components must be > 0");
}

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.hflip_p = 0;
  c.rotation_deg = 0;
  c.translate_frac = 0;
  c.blur_sigma_range = {0, 0};
  c.blur_p = 0;
  c.noise_sigma = 0;
  c.noise_p = 0;
  c.jitter = {0, 0, 0, 0};
  c.cutout = {0, 0.25};
  c.perspective = {0, 0};
  c.norm_mean = {0, 0, 0};
  c.norm_std = {1, 1, 1};
  return c;
}

void flip_horizontal(ImageF& img) {
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width / 2; ++x)
        std::swap(img.at(c, y, x), img.at(c, y, img.width - 1 - x));
}

// Inverse-map bilinear sampling; zero outside the source.
static float sample_bilinear(const ImageF& img, int c, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double wx = x - x0, wy = y - y0;
  double v = 0.0;
  auto px = [&](int xi, int yi) -> double {
    if (xi < 0 || xi >= img.width || yi < 0 || yi >= img.height) return 0.0;
    return img.at(c, yi, xi);
  };
  v += (1 - wx) * (1 - wy) * px(x0, y0);
  v += wx * (1 - wy) * px(x0 + 1, y0);
  v += (1 - wx) * wy * px(x0, y0 + 1);
  v += wx * wy * px(x0 + 1, y0 + 1);
  return static_cast<float>(v);
}

ImageF affine_warp(const ImageF& img, double angle_deg, double tx_px, double ty_px) {
  const double rad = angle_deg * M_PI / 180.0;
  const double ca = std::cos(rad), sa = std::sin(rad);
  const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
  ImageF out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      // invert: undo translation, then rotate backwards about the center
      const double dx = x - tx_px - cx;
      const double dy = y - ty_px - cy;
      const double sxp = ca * dx + sa * dy + cx;
      const double syp = -sa * dx + ca * dy + cy;
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = sample_bilinear(img, c, sxp, syp);
    }
  }
  return out;
}

ImageF perspective_warp(const ImageF& img, const std::array<std::array<double, 2>, 4>& src_corners,
                        const std::array<std::array<double, 2>, 4>& dst_corners) {
  // homography H mapping dst -> src (inverse map), from 4 correspondences
  Eigen::Matrix<double, 8, 8> A = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double xd = dst_corners[i][0], yd = dst_corners[i][1];
    const double xs = src_corners[i][0], ys = src_corners[i][1];
    A.row(2 * i) << xd, yd, 1, 0, 0, 0, -xs * xd, -xs * yd;
    A.row(2 * i + 1) << 0, 0, 0, xd, yd, 1, -ys * xd, -ys * yd;
    b(2 * i) = xs;
    b(2 * i + 1) = ys;
  }
  const Eigen::Matrix<double, 8, 1> h = A.colPivHouseholderQr().solve(b);

  ImageF out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double w = h(6) * x + h(7) * y + 1.0;
      const double sx = (h(0) * x + h(1) * y + h(2)) / w;
      const double sy = (h(3) * x + h(4) * y + h(5)) / w;
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = sample_bilinear(img, c, sx, sy);
    }
  }
  return out;
}

void gaussian_blur(ImageF& img, double sigma) {
  if (sigma <= 0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
    return std::clamp(i, 0, n - 1);
  };

  ImageF tmp(img.width, img.height);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double v = 0;
        for (int i = -radius; i <= radius; ++i)
          v += kernel[i + radius] * img.at(c, y, reflect(x + i, img.width));
        tmp.at(c, y, x) = static_cast<float>(v);
      }
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double v = 0;
        for (int i = -radius; i <= radius; ++i)
          v += kernel[i + radius] * tmp.at(c, reflect(y + i, img.height), x);
        img.at(c, y, x) = static_cast<float>(v);
      }
  }
}

void add_gaussian_noise(ImageF& img, double sigma, rng::Stream& stream) {
  if (sigma <= 0) return;
  for (auto& v : img.data)
    v = std::clamp(v + static_cast<float>(stream.normal(0.0, sigma)), 0.f, 1.f);
}

static void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  const float d = mx - mn;
  s = mx == 0 ? 0 : d / mx;
  if (d == 0) {
    h = 0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.f) / 6.f;
  } else if (mx == g) {
    h = ((b - r) / d + 2.f) / 6.f;
  } else {
    h = ((r - g) / d + 4.f) / 6.f;
  }
  if (h < 0) h += 1.f;
}

static void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float hh = h * 6.f;
  const int i = static_cast<int>(std::floor(hh)) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1 - s);
  const float q = v * (1 - s * f);
  const float t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

void color_jitter(ImageF& img, double brightness_factor, double contrast_factor,
                  double saturation_factor, double hue_shift) {
  const std::size_t plane = img.plane();
  auto clamp01 = [](float v) { return std::clamp(v, 0.f, 1.f); };

  if (brightness_factor != 1.0)
    for (auto& v : img.data) v = clamp01(v * static_cast<float>(brightness_factor));

  if (contrast_factor != 1.0) {
    // blend against the mean luma of the whole image
    double mean = 0;
    for (std::size_t i = 0; i < plane; ++i)
      mean += 0.299 * img.data[i] + 0.587 * img.data[plane + i] + 0.114 * img.data[2 * plane + i];
    mean /= static_cast<double>(plane);
    for (auto& v : img.data)
      v = clamp01(static_cast<float>(mean + contrast_factor * (v - mean)));
  }

  if (saturation_factor != 1.0) {
    for (std::size_t i = 0; i < plane; ++i) {
      const float gray = static_cast<float>(0.299 * img.data[i] + 0.587 * img.data[plane + i] +
                                            0.114 * img.data[2 * plane + i]);
      img.data[i] = clamp01(gray + static_cast<float>(saturation_factor) * (img.data[i] - gray));
      img.data[plane + i] =
          clamp01(gray + static_cast<float>(saturation_factor) * (img.data[plane + i] - gray));
      img.data[2 * plane + i] =
          clamp01(gray + static_cast<float>(saturation_factor) * (img.data[2 * plane + i] - gray));
    }
  }

  if (hue_shift != 0.0) {
    for (std::size_t i = 0; i < plane; ++i) {
      float h, s, v;
      rgb_to_hsv(img.data[i], img.data[plane + i], img.data[2 * plane + i], h, s, v);
      h = std::fmod(h + static_cast<float>(hue_shift) + 1.f, 1.f);
      hsv_to_rgb(h, s, v, img.data[i], img.data[plane + i], img.data[2 * plane + i]);
    }
  }
}

void cutout_rects(ImageF& img, int count, double max_side_frac, rng::Stream& stream) {
  for (int k = 0; k < count; ++k) {
    const int max_w = std::max(1, static_cast<int>(max_side_frac * img.width));
    const int max_h = std::max(1, static_cast<int>(max_side_frac * img.height));
    const int w = static_cast<int>(stream.uniform_int(1, max_w));
    const int h = static_cast<int>(stream.uniform_int(1, max_h));
    const int x0 = static_cast<int>(stream.uniform_int(0, img.width - 1));
    const int y0 = static_cast<int>(stream.uniform_int(0, img.height - 1));
    const int x1 = std::min(img.width, x0 + w);
    const int y1 = std::min(img.height, y0 + h);
    for (int c = 0; c < 3; ++c)
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) img.at(c, y, x) = 0.f;
  }
}

void normalize(ImageF& img, const std::array<double, 3>& mean, const std::array<double, 3>& std) {
  const std::size_t plane = img.plane();
  for (int c = 0; c < 3; ++c) {
    const float m = static_cast<float>(mean[c]);
    const float inv = static_cast<float>(1.0 / std[c]);
    for (std::size_t i = 0; i < plane; ++i)
      img.data[c * plane + i] = (img.data[c * plane + i] - m) * inv;
  }
}

void denormalize(ImageF& img, const std::array<double, 3>& mean, const std::array<double, 3>& std) {
  const std::size_t plane = img.plane();
  for (int c = 0; c < 3; ++c) {
    const float m = static_cast<float>(mean[c]);
    const float s = static_cast<float>(std[c]);
    for (std::size_t i = 0; i < plane; ++i)
      img.data[c * plane + i] = img.data[c * plane + i] * s + m;
  }
}

TrainPipeline::TrainPipeline(AugmentConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
}

ImageF TrainPipeline::apply(const ImageU8& input, std::uint64_t draw_key) const {
  auto stream = rng::derive(seed_, "augment", draw_key);
  ImageF img = to_float(input);

  if (cfg_.hflip_p > 0 && stream.bernoulli(cfg_.hflip_p)) flip_horizontal(img);

  if (cfg_.rotation_deg > 0) {
    const double angle = stream.uniform(-cfg_.rotation_deg, cfg_.rotation_deg);
    img = affine_warp(img, angle, 0, 0);
  }

  if (cfg_.translate_frac > 0) {
    const double tx = stream.uniform(-cfg_.translate_frac, cfg_.translate_frac) * img.width;
    const double ty = stream.uniform(-cfg_.translate_frac, cfg_.translate_frac) * img.height;
    img = affine_warp(img, 0, tx, ty);
  }

  if (cfg_.blur_sigma_range.second > 0 && cfg_.blur_p > 0 && stream.bernoulli(cfg_.blur_p)) {
    const double sigma = stream.uniform(cfg_.blur_sigma_range.first, cfg_.blur_sigma_range.second);
    gaussian_blur(img, sigma);
  }

  if (cfg_.noise_sigma > 0 && cfg_.noise_p > 0 && stream.bernoulli(cfg_.noise_p))
    add_gaussian_noise(img, cfg_.noise_sigma, stream);

  const auto& jit = cfg_.jitter;
  if (jit.brightness > 0 || jit.contrast > 0 || jit.saturation > 0 || jit.hue > 0) {
    const double fb =
        jit.brightness > 0 ? stream.uniform(std::max(0.0, 1 - jit.brightness), 1 + jit.brightness) : 1;
    const double fc =
        jit.contrast > 0 ? stream.uniform(std::max(0.0, 1 - jit.contrast), 1 + jit.contrast) : 1;
    const double fs = jit.saturation > 0
                          ? stream.uniform(std::max(0.0, 1 - jit.saturation), 1 + jit.saturation)
                          : 1;
    const double dh = jit.hue > 0 ? stream.uniform(-jit.hue, jit.hue) : 0;
    color_jitter(img, fb, fc, fs, dh);
  }

  if (cfg_.perspective.distortion_scale > 0 && cfg_.perspective.p > 0 &&
      stream.bernoulli(cfg_.perspective.p)) {
    const double dw = cfg_.perspective.distortion_scale * img.width / 2.0;
    const double dh = cfg_.perspective.distortion_scale * img.height / 2.0;
    const double W = img.width - 1, H = img.height - 1;
    // corners pulled inward by up to the distortion budget (TL, TR, BR, BL)
    const std::array<std::array<double, 2>, 4> src = {
        {{0, 0}, {W, 0}, {W, H}, {0, H}}};
    const std::array<std::array<double, 2>, 4> dst = {
        {{stream.uniform(0, dw), stream.uniform(0, dh)},
         {W - stream.uniform(0, dw), stream.uniform(0, dh)},
         {W - stream.uniform(0, dw), H - stream.uniform(0, dh)},
         {stream.uniform(0, dw), H - stream.uniform(0, dh)}}};
    img = perspective_warp(img, src, dst);
  }

  if (cfg_.cutout.count > 0)
    cutout_rects(img, cfg_.cutout.count, cfg_.cutout.max_side_frac, stream);

  normalize(img, cfg_.norm_mean, cfg_.norm_std);
  return img;
}

EvalPipeline::EvalPipeline(AugmentConfig cfg) : cfg_(cfg) { cfg_.validate(); }

ImageF EvalPipeline::apply(const ImageU8& input) const {
  ImageF img = to_float(input);
  normalize(img, cfg_.norm_mean, cfg_.norm_std);
  return img;
}

}  // namespace catreid
