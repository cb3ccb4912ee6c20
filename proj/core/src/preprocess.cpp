// SPDX-License-Identifier: Apache-2.0
#include "catreid/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "catreid/errors.hpp"
#include "catreid/imageio.hpp"

namespace catreid {

namespace fs = std::filesystem;
using nlohmann::json;

double CropSpec::outside_fraction() const {
  const double s = static_cast<double>(side);
  const double ox = std::max(0.0, std::min(x + s, static_cast<double>(source_width)) - std::max(x, 0.0));
  const double oy = std::max(0.0, std::min(y + s, static_cast<double>(source_height)) - std::max(y, 0.0));
  return 1.0 - (ox * oy) / (s * s);
}

CropSpec square_bbox(const Detection& d, int source_width, int source_height) {
  const int side = std::max<int>(
      1, std::max(static_cast<int>(std::ceil(d.bbox.w)), static_cast<int>(std::ceil(d.bbox.h))));
  const double cx = d.bbox.x + d.bbox.w / 2.0;
  const double cy = d.bbox.y + d.bbox.h / 2.0;
  CropSpec spec;
  spec.source_width = source_width;
  spec.source_height = source_height;
  spec.x = cx - side / 2.0;
  spec.y = cy - side / 2.0;
  spec.side = side;
  return spec;
}

ImageU8 crop_and_resize(const ImageU8& img, const CropSpec& spec, int out_size) {
  if (img.empty()) throw UserError("crop_and_resize: empty source image");
  ImageU8 out(out_size, out_size);
  const double scale = static_cast<double>(spec.side) / out_size;
  const int W = img.width, H = img.height;

  for (int oy = 0; oy < out_size; ++oy) {
    // sample at output pixel centers; -0.5 converts to pixel-index space
    const double sy = spec.y + (oy + 0.5) * scale - 0.5;
    const int y0 = static_cast<int>(std::floor(sy));
    const double wy = sy - y0;
    for (int ox = 0; ox < out_size; ++ox) {
      const double sx = spec.x + (ox + 0.5) * scale - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const double wx = sx - x0;

      const double w00 = (1 - wx) * (1 - wy);
      const double w10 = wx * (1 - wy);
      const double w01 = (1 - wx) * wy;
      const double w11 = wx * wy;

      for (int c = 0; c < 3; ++c) {
        double v = 0.0;
        if (x0 >= 0 && x0 < W && y0 >= 0 && y0 < H) v += w00 * img.at(x0, y0, c);
        if (x0 + 1 >= 0 && x0 + 1 < W && y0 >= 0 && y0 < H) v += w10 * img.at(x0 + 1, y0, c);
        if (x0 >= 0 && x0 < W && y0 + 1 >= 0 && y0 + 1 < H) v += w01 * img.at(x0, y0 + 1, c);
        if (x0 + 1 >= 0 && x0 + 1 < W && y0 + 1 >= 0 && y0 + 1 < H)
          v += w11 * img.at(x0 + 1, y0 + 1, c);
        out.at(ox, oy, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

namespace {

struct StateEntry {
  std::string hash;
  std::string crop_path;
  std::optional<BBox> bbox;
  std::optional<ExclusionReason> exclusion;
};

using StateMap = std::map<std::string, StateEntry>;

StateMap load_state(const fs::path& file) {
  StateMap state;
  std::ifstream in(file);
  if (!in) return state;
  json root;
  try {
    in >> root;
  } catch (const json::parse_error&) {
    return state;  // stale or corrupt state just means no resume
  }
  for (const auto& [path, e] : root.items()) {
    StateEntry entry;
    entry.hash = e.value("hash", "");
    entry.crop_path = e.value("crop_path", "");
    if (e.contains("bbox") && !e["bbox"].is_null()) {
      const auto& b = e["bbox"];
      entry.bbox = BBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                        b.at(3).get<double>()};
    }
    if (e.contains("exclusion") && !e["exclusion"].is_null())
      entry.exclusion = exclusion_from_string(e["exclusion"].get<std::string>());
    state[path] = std::move(entry);
  }
  return state;
}

void save_state(const StateMap& state, const fs::path& file) {
  json root = json::object();
  for (const auto& [path, e] : state) {
    json j;
    j["hash"] = e.hash;
    if (!e.crop_path.empty()) j["crop_path"] = e.crop_path;
    j["bbox"] = e.bbox ? json{e.bbox->x, e.bbox->y, e.bbox->w, e.bbox->h} : json(nullptr);
    j["exclusion"] = e.exclusion ? json(to_string(*e.exclusion)) : json(nullptr);
    root[path] = std::move(j);
  }
  std::ofstream out(file);
  out << root.dump(2) << "\n";
}

}  // namespace

PreprocessSummary preprocess_manifest(DatasetManifest& m, Detector& detector,
                                      const fs::path& out_dir, const PreprocessOptions& opts) {
  fs::create_directories(out_dir);
  const fs::path state_file = out_dir / "preprocess_state.json";
  StateMap state = load_state(state_file);
  PreprocessSummary summary;
  bool new_exclusions = false;

  for (auto& rec : m.records) {
    if (rec.excluded()) continue;

    std::string hash;
    try {
      hash = file_content_hash(rec.path);
    } catch (const UserError&) {
      rec.split = Split::excluded;
      rec.exclusion_reason = ExclusionReason::unreadable_file;
      summary.unreadable++;
      new_exclusions = true;
      continue;
    }

    auto it = state.find(rec.path);
    if (it != state.end() && it->second.hash == hash) {
      const StateEntry& e = it->second;
      const bool crop_ok = !e.crop_path.empty() && fs::exists(e.crop_path);
      if (e.exclusion) {
        rec.split = Split::excluded;
        rec.exclusion_reason = e.exclusion;
        rec.bbox = e.bbox;
        summary.skipped++;
        new_exclusions = true;
        continue;
      }
      if (crop_ok) {
        rec.bbox = e.bbox;
        rec.crop_path = e.crop_path;
        summary.skipped++;
        continue;
      }
      // crop vanished: fall through and redo this record
    }

    const SubjectResult subject =
        detect_subject(detector, rec.path, opts.conf_threshold, opts.subject_label);
    StateEntry entry;
    entry.hash = hash;

    if (subject.exclusion) {
      rec.split = Split::excluded;
      rec.exclusion_reason = subject.exclusion;
      entry.exclusion = subject.exclusion;
      state[rec.path] = std::move(entry);
      if (*subject.exclusion == ExclusionReason::multi_subject)
        summary.multi_subject++;
      else
        summary.no_detection++;
      new_exclusions = true;
      continue;
    }

    ImageU8 img;
    try {
      img = load_image(rec.path);
    } catch (const UserError&) {
      rec.split = Split::excluded;
      rec.exclusion_reason = ExclusionReason::unreadable_file;
      entry.exclusion = ExclusionReason::unreadable_file;
      state[rec.path] = std::move(entry);
      summary.unreadable++;
      new_exclusions = true;
      continue;
    }

    const Detection det = *subject.detection;
    rec.bbox = det.bbox;
    entry.bbox = det.bbox;
    const CropSpec spec = square_bbox(det, img.width, img.height);
    const ImageU8 crop = crop_and_resize(img, spec, opts.out_size);

    const fs::path crop_path =
        out_dir / rec.class_id / (fs::path(rec.path).stem().string() + ".png");
    save_png(crop, crop_path);
    rec.crop_path = crop_path.string();
    entry.crop_path = rec.crop_path;
    state[rec.path] = std::move(entry);
    summary.cropped++;
  }

  save_state(state, state_file);

  // Detector exclusions can push a class back under the minimum; re-apply
  // the size filter so downstream stages see a consistent class set. Its
  // removals are counted separately from the detector's.
  std::map<std::string, int> counts;
  for (const auto& r : m.records)
    if (!r.excluded()) counts[r.class_id]++;
  for (auto& r : m.records) {
    if (r.excluded()) continue;
    if (counts[r.class_id] < opts.min_images) {
      r.split = Split::excluded;
      r.exclusion_reason = ExclusionReason::class_too_small;
      summary.class_too_small++;
      new_exclusions = true;
    }
  }

  // New exclusions invalidate a prior split (per-class val/test counts no
  // longer hold); reset assignments and require a fresh split.
  if (m.split_params && new_exclusions) {
    for (auto& r : m.records)
      if (!r.excluded()) r.split = Split::train;
    m.split_params.reset();
  }
  return summary;
}

}  // namespace catreid
