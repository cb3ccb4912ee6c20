// SPDX-License-Identifier: Apache-2.0
#include "catreid/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "catreid/errors.hpp"
#include "catreid/image.hpp"
#include "catreid/imageio.hpp"
#include "catreid/rng.hpp"

namespace catreid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// signed distance-ish membership tests for the three shape families
bool inside_shape(int family, double nx, double ny, double aspect) {
  switch (family) {
    case 0:  // ellipse
      return (nx * nx) / (0.25) + (ny * ny) / (0.25 * aspect * aspect) <= 1.0;
    case 1:  // rectangle
      return std::abs(nx) <= 0.5 && std::abs(ny) <= 0.5 * aspect;
    default:  // triangle pointing up
      return ny >= -0.5 * aspect && std::abs(nx) <= 0.5 * (0.5 * aspect + ny) / aspect + 1e-9 &&
             ny <= 0.5 * aspect;
  }
}

}  // namespace

SynthResult generate_synth_dataset(const fs::path& out_dir, const SynthOptions& opts) {
  if (opts.classes < 2) throw UserError("synth: need at least 2 classes");
  if (opts.per_class < 6) throw UserError("synth: need at least 6 images per class");
  if (opts.min_dim < 32 || opts.max_dim < opts.min_dim) throw UserError("synth: bad dim range");

  fs::create_directories(out_dir);
  json boxes = json::object();
  SynthResult result;
  result.root = out_dir;

  constexpr double kGoldenRatioConjugate = 0.61803398875;

  for (int cls = 0; cls < opts.classes; ++cls) {
    char cls_name[32];
    std::snprintf(cls_name, sizeof(cls_name), "cat_%03d", cls);
    const fs::path cls_dir = out_dir / cls_name;
    fs::create_directories(cls_dir);

    // class signature: well-separated hue, fixed shape family and stripe angle
    const double base_hue = std::fmod(0.11 + cls * kGoldenRatioConjugate, 1.0);
    const int family = cls % 3;
    const double stripe_angle = (cls % 7) * (M_PI / 7.0);
    const double stripe_period = 8.0 + (cls % 5) * 3.0;

    for (int i = 0; i < opts.per_class; ++i) {
      auto stream = rng::derive(opts.seed, "synth", (static_cast<std::uint64_t>(cls) << 20) | i);

      const int W = static_cast<int>(stream.uniform_int(opts.min_dim, opts.max_dim));
      const int H = static_cast<int>(stream.uniform_int(opts.min_dim, opts.max_dim));
      ImageU8 img(W, H);

      // dim noisy background so the subject dominates
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const auto g = static_cast<std::uint8_t>(stream.uniform_int(18, 52));
          img.at(x, y, 0) = g;
          img.at(x, y, 1) = g;
          img.at(x, y, 2) = g;
        }

      // subject placement: scale, center and mild hue/value wobble per image
      const double scale = stream.uniform(0.45, 0.8) * std::min(W, H);
      const double aspect = stream.uniform(0.75, 1.3);
      const double cx = stream.uniform(scale * 0.55, W - scale * 0.55);
      const double cy = stream.uniform(scale * 0.55 * aspect, H - scale * 0.55 * aspect);
      const double hue = std::fmod(base_hue + stream.uniform(-0.02, 0.02) + 1.0, 1.0);
      const double value = stream.uniform(0.75, 1.0);
      const Rgb body = hsv(hue, 0.85, value);
      const Rgb stripe = hsv(std::fmod(hue + 0.08, 1.0), 0.9, value * 0.55);
      const double ca = std::cos(stripe_angle), sa = std::sin(stripe_angle);

      double min_x = W, min_y = H, max_x = 0, max_y = 0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double nx = (x - cx) / scale;
          const double ny = (y - cy) / scale;
          if (!inside_shape(family, nx, ny, aspect)) continue;
          const double band = std::sin((ca * x + sa * y) * 2.0 * M_PI / stripe_period);
          const Rgb& col = band > 0.35 ? stripe : body;
          img.at(x, y, 0) = static_cast<std::uint8_t>(std::lround(col.r * 255));
          img.at(x, y, 1) = static_cast<std::uint8_t>(std::lround(col.g * 255));
          img.at(x, y, 2) = static_cast<std::uint8_t>(std::lround(col.b * 255));
          min_x = std::min(min_x, static_cast<double>(x));
          max_x = std::max(max_x, static_cast<double>(x));
          min_y = std::min(min_y, static_cast<double>(y));
          max_y = std::max(max_y, static_cast<double>(y));
        }

      char img_name[32];
      std::snprintf(img_name, sizeof(img_name), "img_%04d.png", i);
      const fs::path img_path = cls_dir / img_name;
      save_png(img, img_path);
      result.images++;

      const std::string key = std::string(cls_name) + "/" + img_name;
      boxes[key] = json::array(
          {{{"bbox", {min_x, min_y, max_x - min_x + 1, max_y - min_y + 1}},
            {"confidence", 0.95},
            {"class_label", "cat"}}});
    }
  }

  result.boxes_json = out_dir / "boxes.json";
  std::ofstream out(result.boxes_json);
  out << boxes.dump(2) << "\n";
  return result;
}

}  // namespace catreid
