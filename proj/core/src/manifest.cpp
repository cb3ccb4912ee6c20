// SPDX-License-Identifier: Apache-2.0
#include "catreid/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "catreid/errors.hpp"
#include "catreid/imageio.hpp"
#include "catreid/rng.hpp"

namespace catreid {

namespace fs = std::filesystem;
using nlohmann::json;

static constexpr const char* kManifestSchema = "catreid-manifest/1";

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::excluded: return "excluded";
  }
  return "?";
}

const char* to_string(ExclusionReason r) {
  switch (r) {
    case ExclusionReason::multi_subject: return "multi_subject";
    case ExclusionReason::no_detection: return "no_detection";
    case ExclusionReason::class_too_small: return "class_too_small";
    case ExclusionReason::unreadable_file: return "unreadable_file";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "excluded") return Split::excluded;
  throw UserError("unknown split value: " + s);
}

ExclusionReason exclusion_from_string(const std::string& s) {
  if (s == "multi_subject") return ExclusionReason::multi_subject;
  if (s == "no_detection") return ExclusionReason::no_detection;
  if (s == "class_too_small") return ExclusionReason::class_too_small;
  if (s == "unreadable_file") return ExclusionReason::unreadable_file;
  throw UserError("unknown exclusion reason: " + s);
}

std::map<std::string, int> DatasetManifest::class_index() const {
  std::set<std::string> retained;
  for (const auto& r : records)
    if (!r.excluded()) retained.insert(r.class_id);
  std::map<std::string, int> index;
  int label = 0;
  for (const auto& c : retained) index[c] = label++;  // std::set iterates lexicographically
  return index;
}

std::map<std::string, SplitCounts> DatasetManifest::stats() const {
  std::map<std::string, SplitCounts> s;
  for (const auto& r : records) {
    auto& c = s[r.class_id];
    switch (r.split) {
      case Split::train: c.train++; break;
      case Split::val: c.val++; break;
      case Split::test: c.test++; break;
      case Split::excluded: c.excluded++; break;
    }
  }
  return s;
}

int DatasetManifest::num_classes() const { return static_cast<int>(class_index().size()); }

int DatasetManifest::num_retained_images() const {
  int n = 0;
  for (const auto& r : records)
    if (!r.excluded()) n++;
  return n;
}

DatasetManifest ingest(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec))
    throw UserError("no classes found: " + root.string() + " is not a directory");

  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().front() != '.')
      class_dirs.push_back(entry.path());
  }
  if (class_dirs.empty()) throw UserError("no classes found under " + root.string());
  std::sort(class_dirs.begin(), class_dirs.end());

  DatasetManifest m;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const auto name = entry.path().filename().string();
      if (!name.empty() && name.front() == '.') continue;
      files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ImageRecord rec;
      rec.path = f.string();
      rec.class_id = dir.filename().string();
      if (!has_image_extension(f)) {
        rec.split = Split::excluded;
        rec.exclusion_reason = ExclusionReason::unreadable_file;
      }
      m.records.push_back(std::move(rec));
    }
  }
  return m;
}

DatasetManifest filter_small_classes(DatasetManifest m, int min_images) {
  if (min_images < 6)
    throw UserError("min_images must be >= 6, got " + std::to_string(min_images));

  std::map<std::string, int> counts;
  for (const auto& r : m.records)
    if (!r.excluded()) counts[r.class_id]++;

  bool any_left = false;
  for (auto& r : m.records) {
    if (r.excluded()) continue;
    if (counts[r.class_id] < min_images) {
      r.split = Split::excluded;
      r.exclusion_reason = ExclusionReason::class_too_small;
    } else {
      any_left = true;
    }
  }
  if (!any_left) throw UserError("empty dataset after filtering (min_images=" +
                                 std::to_string(min_images) + ")");
  return m;
}

DatasetManifest split_dataset(DatasetManifest m, int val_per_class, int test_per_class,
                              std::uint64_t seed) {
  if (val_per_class < 0 || test_per_class < 0)
    throw UserError("val_per_class and test_per_class must be non-negative");

  // class -> indices into records, already in lexicographic path order
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (!m.records[i].excluded()) by_class[m.records[i].class_id].push_back(i);

  const int need = val_per_class + test_per_class + 1;
  for (const auto& [cls, idx] : by_class) {
    if (static_cast<int>(idx.size()) < need)
      throw UserError("class '" + cls + "' has " + std::to_string(idx.size()) +
                      " images, need at least " + std::to_string(need) + " to split");
  }

  for (const auto& [cls, idx] : by_class) {
    auto shuffled = idx;
    // one independent stream per class: adding or removing another class
    // does not change this class's assignment
    auto stream = rng::derive(seed, "split", rng::fnv1a64(cls));
    stream.shuffle(shuffled);
    for (std::size_t k = 0; k < shuffled.size(); ++k) {
      auto& rec = m.records[shuffled[k]];
      if (k < static_cast<std::size_t>(val_per_class))
        rec.split = Split::val;
      else if (k < static_cast<std::size_t>(val_per_class + test_per_class))
        rec.split = Split::test;
      else
        rec.split = Split::train;
    }
  }

  m.seed = seed;
  m.split_params = SplitParams{val_per_class, test_per_class, seed};
  return m;
}

static json record_to_json(const ImageRecord& r) {
  json j;
  j["path"] = r.path;
  j["class_id"] = r.class_id;
  j["split"] = to_string(r.split);
  j["bbox"] = r.bbox ? json{r.bbox->x, r.bbox->y, r.bbox->w, r.bbox->h} : json(nullptr);
  j["exclusion_reason"] = r.exclusion_reason ? json(to_string(*r.exclusion_reason)) : json(nullptr);
  if (!r.crop_path.empty()) j["crop_path"] = r.crop_path;
  return j;
}

static ImageRecord record_from_json(const json& j) {
  ImageRecord r;
  r.path = j.at("path").get<std::string>();
  r.class_id = j.at("class_id").get<std::string>();
  r.split = split_from_string(j.at("split").get<std::string>());
  if (j.contains("bbox") && !j["bbox"].is_null()) {
    const auto& b = j["bbox"];
    r.bbox = BBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                  b.at(3).get<double>()};
  }
  if (j.contains("exclusion_reason") && !j["exclusion_reason"].is_null())
    r.exclusion_reason = exclusion_from_string(j["exclusion_reason"].get<std::string>());
  if (j.contains("crop_path")) r.crop_path = j["crop_path"].get<std::string>();
  return r;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw EnvError("cannot write manifest: " + path.string());

  json header;
  header["schema"] = kManifestSchema;
  header["seed"] = m.seed;
  header["classes"] = m.num_classes();
  if (m.split_params) {
    header["split"] = {{"val_per_class", m.split_params->val_per_class},
                       {"test_per_class", m.split_params->test_per_class},
                       {"seed", m.split_params->seed}};
  }
  if (!m.config_hash.empty()) header["config_hash"] = m.config_hash;
  json stats = json::object();
  for (const auto& [cls, c] : m.stats())
    stats[cls] = {{"train", c.train}, {"val", c.val}, {"test", c.test}, {"excluded", c.excluded}};
  header["stats"] = stats;

  out << header.dump() << "\n";
  for (const auto& r : m.records) out << record_to_json(r).dump() << "\n";
  if (!out) throw EnvError("write failed: " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open manifest: " + path.string());

  std::string line;
  int lineno = 0;
  auto parse_line = [&](const std::string& text) {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw UserError("manifest parse error at " + path.string() + ":" +
                      std::to_string(lineno) + ": " + e.what());
    }
  };

  if (!std::getline(in, line)) throw UserError("manifest is empty: " + path.string());
  lineno = 1;
  const json header = parse_line(line);
  const std::string schema = header.value("schema", "");
  if (schema != kManifestSchema)
    throw UserError("unsupported manifest schema '" + schema + "' (expected " +
                    std::string(kManifestSchema) + ")");

  DatasetManifest m;
  m.seed = header.value("seed", std::uint64_t{0});
  if (header.contains("split")) {
    const auto& s = header["split"];
    m.split_params = SplitParams{s.at("val_per_class").get<int>(),
                                 s.at("test_per_class").get<int>(),
                                 s.at("seed").get<std::uint64_t>()};
  }
  m.config_hash = header.value("config_hash", "");

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    m.records.push_back(record_from_json(parse_line(line)));
  }
  return m;
}

}  // namespace catreid
