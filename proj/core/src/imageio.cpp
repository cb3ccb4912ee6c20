// SPDX-License-Identifier: Apache-2.0
#include "catreid/imageio.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include "catreid/errors.hpp"
#include "catreid/rng.hpp"

namespace catreid {

namespace fs = std::filesystem;

ImageU8 load_image(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) throw UserError("image not found: " + path.string());
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw UserError("cannot decode image: " + path.string());
  ImageU8 out(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      out.at(x, y, 0) = row[x * 3 + 2];
      out.at(x, y, 1) = row[x * 3 + 1];
      out.at(x, y, 2) = row[x * 3 + 0];
    }
  }
  return out;
}

void save_png(const ImageU8& img, const fs::path& path) {
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width; ++x) {
      row[x * 3 + 0] = img.at(x, y, 2);
      row[x * 3 + 1] = img.at(x, y, 1);
      row[x * 3 + 2] = img.at(x, y, 0);
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr))
    throw EnvError("failed to write image: " + path.string());
}

bool has_image_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".webp";
}

std::string file_content_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open file for hashing: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const auto n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

}  // namespace catreid
