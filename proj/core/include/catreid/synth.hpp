// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

namespace catreid {

// Procedural test-data generator. Each class gets a distinct base color and
// shape family; images vary pose, scale and lighting within a class, so the
// classes are linearly separable by construction. A boxes.json with the
// true subject bounding boxes is written alongside for use as a stub
// detector.
struct SynthOptions {
  int classes = 5;
  int per_class = 20;
  std::uint64_t seed = 42;
  int min_dim = 200;  // source images vary in size within [min_dim, max_dim]
  int max_dim = 320;
};

struct SynthResult {
  std::filesystem::path root;        // folder-per-class image tree
  std::filesystem::path boxes_json;  // stub detector input
  int images = 0;
};

SynthResult generate_synth_dataset(const std::filesystem::path& out_dir, const SynthOptions& opts);

}  // namespace catreid
