// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "catreid/detector.hpp"
#include "catreid/image.hpp"
#include "catreid/manifest.hpp"

namespace catreid {

// A square crop window over a source image. The window may extend past the
// image borders; everything outside is padded with pad_color at crop time.
struct CropSpec {
  int source_width = 0;
  int source_height = 0;
  double x = 0, y = 0;  // top-left of the square, source pixels, may be negative
  int side = 0;         // exact integer side length
  std::array<std::uint8_t, 3> pad_color{0, 0, 0};

  bool fully_inside() const {
    return x >= 0 && y >= 0 && x + side <= source_width && y + side <= source_height;
  }
  // Fraction of the window area lying outside the source image.
  double outside_fraction() const;
};

// Expands a detection box to a square of side max(ceil(w), ceil(h)),
// centered on the original box center. Never shrinks either dimension.
CropSpec square_bbox(const Detection& d, int source_width, int source_height);

// Bilinear resample of the window to out_size x out_size x 3. Samples that
// fall outside the source image contribute exactly (0,0,0).
ImageU8 crop_and_resize(const ImageU8& img, const CropSpec& spec, int out_size = 224);

struct PreprocessOptions {
  double conf_threshold = 0.5;
  std::string subject_label = "cat";
  int out_size = 224;
  int min_images = 8;  // class-size filter re-applied after detector exclusions
};

struct PreprocessSummary {
  int cropped = 0;
  int skipped = 0;  // already done, matched by content hash
  int multi_subject = 0;
  int no_detection = 0;
  int unreadable = 0;
  int class_too_small = 0;  // records newly excluded by the post-pass filter
};

// Batch driver: detects, squares, crops and writes one PNG per retained
// record under out_dir/<class_id>/<source-stem>.png, updating records in
// place. Resumable: a state file keyed by source content hash makes reruns
// skip finished work. Detector failures abort; single-image problems are
// recorded as exclusions.
PreprocessSummary preprocess_manifest(DatasetManifest& m, Detector& detector,
                                      const std::filesystem::path& out_dir,
                                      const PreprocessOptions& opts = {});

}  // namespace catreid
