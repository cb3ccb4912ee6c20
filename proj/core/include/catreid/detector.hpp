// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "catreid/manifest.hpp"

namespace catreid {

struct Detection {
  BBox bbox;                // source pixels
  double confidence = 0.0;  // [0,1]
  std::string class_label;  // detector vocabulary, e.g. "cat"
};

// The subject detector is consumed as an opaque service. Implementations
// must throw EnvError when the backing service cannot be reached; that is
// a run-aborting condition, never an exclusion.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Detection> detect(const std::string& image_path) = 0;
  virtual std::string describe() const = 0;
};

// Returns configured boxes from a JSON file:
//   { "<key>": [ {"bbox":[x,y,w,h], "confidence":0.9, "class_label":"cat"}, ... ],
//     "_default": [ ... ] }
// Keys are matched against the full path, then the last two path
// components, then the basename.
class StubDetector : public Detector {
 public:
  explicit StubDetector(const std::filesystem::path& boxes_json);
  std::vector<Detection> detect(const std::string& image_path) override;
  std::string describe() const override { return "stub:" + source_.string(); }

 private:
  std::filesystem::path source_;
  std::map<std::string, std::vector<Detection>> boxes_;
  std::vector<Detection> default_boxes_;
  bool has_default_ = false;
};

// Reports the whole image as a single subject at confidence 1.0. Useful
// when inputs are already tight crops.
class FullFrameDetector : public Detector {
 public:
  explicit FullFrameDetector(std::string label = "cat") : label_(std::move(label)) {}
  std::vector<Detection> detect(const std::string& image_path) override;
  std::string describe() const override { return "full"; }

 private:
  std::string label_;
};

// Spawns a command once per batch. The command reads JSON-lines
// {"image_path": "..."} on stdin and writes one {"detections":[...]} line
// per request on stdout, in order.
class SubprocessDetector : public Detector {
 public:
  explicit SubprocessDetector(std::string command) : command_(std::move(command)) {}
  std::vector<Detection> detect(const std::string& image_path) override;
  std::vector<std::vector<Detection>> detect_batch(const std::vector<std::string>& image_paths);
  std::string describe() const override { return "cmd:" + command_; }

 private:
  std::string command_;
};

// "full" | "stub:<boxes.json>" | "cmd:<command>"
std::unique_ptr<Detector> make_detector(const std::string& spec);

struct SubjectResult {
  std::optional<Detection> detection;
  std::optional<ExclusionReason> exclusion;  // no_detection or multi_subject
};

// Exactly one subject-class detection at or above the threshold is
// accepted. Zero is a no_detection exclusion; two or more is a
// multi_subject exclusion. Other labels are ignored.
SubjectResult select_subject(const std::vector<Detection>& detections, double conf_threshold = 0.5,
                             const std::string& subject_label = "cat");

SubjectResult detect_subject(Detector& detector, const std::string& image_path,
                             double conf_threshold = 0.5, const std::string& subject_label = "cat");

}  // namespace catreid
