// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace catreid {

enum class Split { train, val, test, excluded };

enum class ExclusionReason { multi_subject, no_detection, class_too_small, unreadable_file };

const char* to_string(Split s);
const char* to_string(ExclusionReason r);
Split split_from_string(const std::string& s);
ExclusionReason exclusion_from_string(const std::string& s);

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
  bool operator==(const BBox&) const = default;
};

// One source image. Records are never dropped: unusable images are kept
// with split == excluded and a reason, so every filter stage is auditable.
struct ImageRecord {
  std::string path;      // source image
  std::string class_id;  // individual identifier (directory name)
  Split split = Split::train;
  std::optional<ExclusionReason> exclusion_reason;
  std::optional<BBox> bbox;  // detector output in source pixels, pre-clamp
  std::string crop_path;     // set by preprocess

  bool excluded() const { return split == Split::excluded; }
  bool operator==(const ImageRecord&) const = default;
};

struct SplitParams {
  int val_per_class = 3;
  int test_per_class = 2;
  std::uint64_t seed = 0;
  bool operator==(const SplitParams&) const = default;
};

struct SplitCounts {
  int train = 0, val = 0, test = 0, excluded = 0;
  int total() const { return train + val + test + excluded; }
  int retained() const { return train + val + test; }
};

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::uint64_t seed = 0;
  std::optional<SplitParams> split_params;  // present once split() has run
  std::string config_hash;                  // set by the CLI, empty otherwise

  // Contiguous labels 0..C-1 in lexicographic class_id order over classes
  // that still have at least one non-excluded record. Derived, not stored.
  std::map<std::string, int> class_index() const;
  std::map<std::string, SplitCounts> stats() const;
  int num_classes() const;
  int num_retained_images() const;

  bool operator==(const DatasetManifest& o) const {
    return records == o.records && seed == o.seed && split_params == o.split_params;
  }
};

// Scans root for one subdirectory per class. One record per file; files
// without a known image extension become excluded/unreadable_file entries.
// Records are ordered lexicographically by path. Throws UserError on an
// empty root ("no classes found").
DatasetManifest ingest(const std::filesystem::path& root);

// Marks every record of a class with fewer than min_images non-excluded
// images as excluded/class_too_small. Idempotent. min_images must be >= 6.
DatasetManifest filter_small_classes(DatasetManifest m, int min_images = 8);

// Per class: seeded shuffle, first val_per_class records to val, next
// test_per_class to test, remainder to train. Identical seed gives a
// bit-identical manifest. Throws UserError naming the first class with
// fewer than val_per_class + test_per_class + 1 images.
DatasetManifest split_dataset(DatasetManifest m, int val_per_class, int test_per_class,
                              std::uint64_t seed);

// JSON-lines: a header object on line 1, one record object per line after.
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace catreid
