// SPDX-License-Identifier: Apache-2.0
#include "catreid/detector.hpp"

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "catreid/errors.hpp"
#include "catreid/imageio.hpp"

namespace catreid {

namespace fs = std::filesystem;
using nlohmann::json;

static Detection detection_from_json(const json& j) {
  Detection d;
  const auto& b = j.at("bbox");
  d.bbox = BBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                b.at(3).get<double>()};
  d.confidence = j.value("confidence", 1.0);
  d.class_label = j.value("class_label", "cat");
  return d;
}

StubDetector::StubDetector(const fs::path& boxes_json) : source_(boxes_json) {
  std::ifstream in(boxes_json);
  if (!in) throw EnvError("stub detector: cannot open " + boxes_json.string());
  json root;
  try {
    in >> root;
  } catch (const json::parse_error& e) {
    throw EnvError("stub detector: bad JSON in " + boxes_json.string() + ": " + e.what());
  }
  for (const auto& [key, arr] : root.items()) {
    std::vector<Detection> dets;
    for (const auto& d : arr) dets.push_back(detection_from_json(d));
    if (key == "_default") {
      default_boxes_ = std::move(dets);
      has_default_ = true;
    } else {
      boxes_[key] = std::move(dets);
    }
  }
}

std::vector<Detection> StubDetector::detect(const std::string& image_path) {
  const fs::path p(image_path);
  auto it = boxes_.find(image_path);
  if (it != boxes_.end()) return it->second;
  if (p.has_parent_path()) {
    const std::string last_two = (p.parent_path().filename() / p.filename()).generic_string();
    it = boxes_.find(last_two);
    if (it != boxes_.end()) return it->second;
  }
  it = boxes_.find(p.filename().string());
  if (it != boxes_.end()) return it->second;
  if (has_default_) return default_boxes_;
  return {};
}

std::vector<Detection> FullFrameDetector::detect(const std::string& image_path) {
  const ImageU8 img = load_image(image_path);
  Detection d;
  d.bbox = BBox{0, 0, static_cast<double>(img.width), static_cast<double>(img.height)};
  d.confidence = 1.0;
  d.class_label = label_;
  return {d};
}

std::vector<std::vector<Detection>> SubprocessDetector::detect_batch(
    const std::vector<std::string>& image_paths) {
  const fs::path tmp = fs::temp_directory_path();
  const fs::path req = tmp / ("catreid_det_req_" + std::to_string(::getpid()) + ".jsonl");
  const fs::path resp = tmp / ("catreid_det_resp_" + std::to_string(::getpid()) + ".jsonl");

  {
    std::ofstream out(req);
    for (const auto& p : image_paths) out << json{{"image_path", p}}.dump() << "\n";
  }

  const std::string cmd = command_ + " < " + req.string() + " > " + resp.string();
  const int rc = std::system(cmd.c_str());
  if (rc != 0)
    throw EnvError("detector command failed (exit " + std::to_string(rc) + "): " + command_);

  std::ifstream in(resp);
  if (!in) throw EnvError("detector produced no output: " + command_);
  std::vector<std::vector<Detection>> results;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw EnvError(std::string("detector emitted bad JSON: ") + e.what());
    }
    std::vector<Detection> dets;
    for (const auto& d : j.at("detections")) dets.push_back(detection_from_json(d));
    results.push_back(std::move(dets));
  }
  fs::remove(req);
  fs::remove(resp);
  if (results.size() != image_paths.size())
    throw EnvError("detector answered " + std::to_string(results.size()) + " of " +
                   std::to_string(image_paths.size()) + " requests");
  return results;
}

std::vector<Detection> SubprocessDetector::detect(const std::string& image_path) {
  return detect_batch({image_path}).front();
}

std::unique_ptr<Detector> make_detector(const std::string& spec) {
  if (spec == "full") return std::make_unique<FullFrameDetector>();
  if (spec.rfind("stub:", 0) == 0) return std::make_unique<StubDetector>(spec.substr(5));
  if (spec.rfind("cmd:", 0) == 0) return std::make_unique<SubprocessDetector>(spec.substr(4));
  throw UserError("unknown detector spec '" + spec + "' (expected full, stub:FILE or cmd:COMMAND)");
}

SubjectResult select_subject(const std::vector<Detection>& detections, double conf_threshold,
                             const std::string& subject_label) {
  std::vector<const Detection*> hits;
  for (const auto& d : detections)
    if (d.class_label == subject_label && d.confidence >= conf_threshold) hits.push_back(&d);

  SubjectResult r;
  if (hits.empty())
    r.exclusion = ExclusionReason::no_detection;
  else if (hits.size() > 1)
    r.exclusion = ExclusionReason::multi_subject;
  else
    r.detection = *hits.front();
  return r;
}

SubjectResult detect_subject(Detector& detector, const std::string& image_path,
                             double conf_threshold, const std::string& subject_label) {
  return select_subject(detector.detect(image_path), conf_threshold, subject_label);
}

}  // namespace catreid
