// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "catreid/image.hpp"

namespace catreid {

// Decodes PNG/JPEG/BMP/WebP into RGB. Throws UserError naming the path on
// missing or undecodable files.
ImageU8 load_image(const std::filesystem::path& path);

void save_png(const ImageU8& img, const std::filesystem::path& path);

bool has_image_extension(const std::filesystem::path& path);

// FNV-1a over the raw file bytes, hex-encoded. Used for resume bookkeeping.
std::string file_content_hash(const std::filesystem::path& path);

}  // namespace catreid
