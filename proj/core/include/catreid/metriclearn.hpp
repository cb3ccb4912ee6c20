// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "catreid/image.hpp"
#include "catreid/manifest.hpp"
#include "catreid/rng.hpp"

namespace catreid {

// Hinged squared-distance triplet loss:
//   max(||a-p||^2 - ||a-n||^2 + margin, 0)
// Zero once the negative is at least `margin` (squared) farther than the
// positive; equal to `margin` when all three coincide.
double triplet_loss(std::span<const float> anchor, std::span<const float> positive,
                    std::span<const float> negative, double margin = 1.0);

struct TripletGrad {
  double loss = 0;
  std::vector<float> d_anchor, d_positive, d_negative;
};
TripletGrad triplet_loss_with_grad(std::span<const float> anchor, std::span<const float> positive,
                                   std::span<const float> negative, double margin = 1.0);

// Unhinged additive form ||a-p|| + ||a-n|| + margin. Kept only so its
// divergence from the hinged objective can be demonstrated; selecting it
// for training is a documented footgun.
double triplet_loss_unhinged(std::span<const float> anchor, std::span<const float> positive,
                             std::span<const float> negative, double margin = 1.0);

struct Triplet {
  int anchor = 0, positive = 0, negative = 0;
};

enum class MiningMode { uniform, semi_hard };

// One triplet per eligible anchor. Uniform mode picks any same-class
// positive and any other-class negative; semi_hard picks negatives with
// d_ap < d_an < d_ap + margin when one exists (falling back to uniform).
// Returns empty when the batch holds a single class or no positive pair.
std::vector<Triplet> sample_triplets(const std::vector<int>& batch_labels, rng::Stream& stream,
                                     MiningMode mode = MiningMode::uniform,
                                     const std::vector<std::vector<float>>* embeddings = nullptr,
                                     double margin = 1.0);

enum class GalleryMode { class_mean, per_image };

// Per-class reference embeddings for nearest-neighbor identification.
// class_mean stores one averaged row per class; per_image keeps each
// support embedding as its own row.
struct EmbeddingGallery {
  std::vector<std::string> class_ids;  // one per row (repeated in per_image mode)
  int embed_dim = 0;
  int support_size = 0;
  std::uint64_t seed = 0;
  std::vector<float> embeddings;  // rows x embed_dim, row-major

  int rows() const { return embed_dim == 0 ? 0 : static_cast<int>(embeddings.size()) / embed_dim; }
  std::span<const float> row(int i) const {
    return {embeddings.data() + static_cast<std::size_t>(i) * embed_dim,
            static_cast<std::size_t>(embed_dim)};
  }
};

// Binary container: one JSON header line, then float32 row-major data.
void save_gallery(const EmbeddingGallery& g, const std::filesystem::path& path);
EmbeddingGallery load_gallery(const std::filesystem::path& path);

using EmbedFn = std::function<std::vector<float>(const ImageU8& crop)>;

// Builds the gallery from the train split only: per class, a seeded sample
// of support_per_class crops is embedded and (in class_mean mode) averaged.
// Deterministic given (embedder weights, manifest, seed).
EmbeddingGallery build_gallery(const EmbedFn& embed, const DatasetManifest& manifest,
                               int support_per_class = 3, std::uint64_t seed = 0,
                               GalleryMode mode = GalleryMode::class_mean);

// k=1: class of the nearest row by Euclidean distance. k>1: majority class
// among the k nearest rows. All ties resolve to the lowest class index.
std::string classify(std::span<const float> query, const EmbeddingGallery& gallery, int k = 1);

// Fraction of query records whose classify() result matches their class.
double evaluate_siamese(const EmbedFn& embed, const EmbeddingGallery& gallery,
                        const std::vector<ImageRecord>& queries, int k = 1);

}  // namespace catreid
