// SPDX-License-Identifier: Apache-2.0
#include "catreid/metriclearn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "catreid/errors.hpp"
#include "catreid/imageio.hpp"

namespace catreid {

namespace fs = std::filesystem;
using nlohmann::json;

static void check_triplet_inputs(std::span<const float> a, std::span<const float> p,
                                 std::span<const float> n, double margin) {
  if (a.size() != p.size() || a.size() != n.size())
    throw UserError("triplet_loss: dimension mismatch (" + std::to_string(a.size()) + ", " +
                    std::to_string(p.size()) + ", " + std::to_string(n.size()) + ")");
  if (margin < 0) throw UserError("triplet_loss: margin must be >= 0");
  auto finite = [](std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
  };
  if (!finite(a) || !finite(p) || !finite(n))
    throw UserError("triplet_loss: non-finite input");
}

static double sq_dist(std::span<const float> u, std::span<const float> v) {
  double d = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double diff = static_cast<double>(u[i]) - v[i];
    d += diff * diff;
  }
  return d;
}

double triplet_loss(std::span<const float> anchor, std::span<const float> positive,
                    std::span<const float> negative, double margin) {
  check_triplet_inputs(anchor, positive, negative, margin);
  return std::max(sq_dist(anchor, positive) - sq_dist(anchor, negative) + margin, 0.0);
}

TripletGrad triplet_loss_with_grad(std::span<const float> anchor, std::span<const float> positive,
                                   std::span<const float> negative, double margin) {
  check_triplet_inputs(anchor, positive, negative, margin);
  TripletGrad g;
  const std::size_t n = anchor.size();
  g.d_anchor.assign(n, 0.f);
  g.d_positive.assign(n, 0.f);
  g.d_negative.assign(n, 0.f);
  const double raw = sq_dist(anchor, positive) - sq_dist(anchor, negative) + margin;
  g.loss = std::max(raw, 0.0);
  if (raw > 0) {
    for (std::size_t i = 0; i < n; ++i) {
      // d/da ||a-p||^2 = 2(a-p); d/da -||a-n||^2 = -2(a-n)
      g.d_anchor[i] = 2.f * (negative[i] - positive[i]);
      g.d_positive[i] = 2.f * (positive[i] - anchor[i]);
      g.d_negative[i] = 2.f * (anchor[i] - negative[i]);
    }
  }
  return g;
}

double triplet_loss_unhinged(std::span<const float> anchor, std::span<const float> positive,
                             std::span<const float> negative, double margin) {
  check_triplet_inputs(anchor, positive, negative, margin);
  return std::sqrt(sq_dist(anchor, positive)) + std::sqrt(sq_dist(anchor, negative)) + margin;
}

std::vector<Triplet> sample_triplets(const std::vector<int>& batch_labels, rng::Stream& stream,
                                     MiningMode mode,
                                     const std::vector<std::vector<float>>* embeddings,
                                     double margin) {
  const int n = static_cast<int>(batch_labels.size());
  std::map<int, std::vector<int>> by_label;
  for (int i = 0; i < n; ++i) by_label[batch_labels[i]].push_back(i);
  if (by_label.size() < 2) return {};

  if (mode == MiningMode::semi_hard && (embeddings == nullptr || embeddings->size() != batch_labels.size()))
    throw UserError("sample_triplets: semi_hard mining needs one embedding per batch element");

  std::vector<Triplet> triplets;
  for (int a = 0; a < n; ++a) {
    const auto& same = by_label[batch_labels[a]];
    if (same.size() < 2) continue;  // no positive available for this anchor

    int positive = a;
    while (positive == a)
      positive = same[static_cast<std::size_t>(stream.uniform_int(0, static_cast<int>(same.size()) - 1))];

    std::vector<int> others;
    others.reserve(n);
    for (int i = 0; i < n; ++i)
      if (batch_labels[i] != batch_labels[a]) others.push_back(i);

    int negative = -1;
    if (mode == MiningMode::semi_hard) {
      const auto& e = *embeddings;
      const double d_ap = sq_dist(e[a], e[positive]);
      std::vector<int> semi;
      for (int cand : others) {
        const double d_an = sq_dist(e[a], e[cand]);
        if (d_ap < d_an && d_an < d_ap + margin) semi.push_back(cand);
      }
      if (!semi.empty())
        negative = semi[static_cast<std::size_t>(stream.uniform_int(0, static_cast<int>(semi.size()) - 1))];
    }
    if (negative < 0)
      negative = others[static_cast<std::size_t>(stream.uniform_int(0, static_cast<int>(others.size()) - 1))];

    triplets.push_back(Triplet{a, positive, negative});
  }
  return triplets;
}

void save_gallery(const EmbeddingGallery& g, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EnvError("cannot write gallery: " + path.string());
  json header;
  header["schema"] = "catreid-gallery/1";
  header["classes"] = g.class_ids;
  header["embed_dim"] = g.embed_dim;
  header["support_size"] = g.support_size;
  header["seed"] = g.seed;
  header["rows"] = g.rows();
  out << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(g.embeddings.data()),
            static_cast<std::streamsize>(g.embeddings.size() * sizeof(float)));
  if (!out) throw EnvError("gallery write failed: " + path.string());
}

EmbeddingGallery load_gallery(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open gallery: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw UserError("gallery is empty: " + path.string());
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw UserError("gallery header parse error in " + path.string() + ": " + e.what());
  }
  if (header.value("schema", "") != "catreid-gallery/1")
    throw UserError("unsupported gallery schema in " + path.string());

  EmbeddingGallery g;
  g.class_ids = header.at("classes").get<std::vector<std::string>>();
  g.embed_dim = header.at("embed_dim").get<int>();
  g.support_size = header.at("support_size").get<int>();
  g.seed = header.at("seed").get<std::uint64_t>();
  const int rows = header.at("rows").get<int>();
  g.embeddings.resize(static_cast<std::size_t>(rows) * g.embed_dim);
  in.read(reinterpret_cast<char*>(g.embeddings.data()),
          static_cast<std::streamsize>(g.embeddings.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(g.embeddings.size() * sizeof(float)))
    throw UserError("gallery data truncated: " + path.string());
  return g;
}

EmbeddingGallery build_gallery(const EmbedFn& embed, const DatasetManifest& manifest,
                               int support_per_class, std::uint64_t seed, GalleryMode mode) {
  if (support_per_class < 1) throw UserError("build_gallery: support_per_class must be >= 1");

  // train split only; val/test must never leak into the gallery
  std::map<std::string, std::vector<const ImageRecord*>> train_by_class;
  for (const auto& r : manifest.records)
    if (r.split == Split::train) train_by_class[r.class_id].push_back(&r);

  const auto index = manifest.class_index();
  EmbeddingGallery g;
  g.support_size = support_per_class;
  g.seed = seed;

  for (const auto& [cls, label] : index) {
    (void)label;
    auto it = train_by_class.find(cls);
    const int avail = it == train_by_class.end() ? 0 : static_cast<int>(it->second.size());
    if (avail < support_per_class)
      throw UserError("build_gallery: class '" + cls + "' has " + std::to_string(avail) +
                      " train images, need " + std::to_string(support_per_class));

    auto picks = it->second;
    auto stream = rng::derive(seed, "gallery", rng::fnv1a64(cls));
    stream.shuffle(picks);
    picks.resize(static_cast<std::size_t>(support_per_class));

    std::vector<std::vector<float>> support;
    for (const auto* rec : picks) {
      const std::string& source = rec->crop_path.empty() ? rec->path : rec->crop_path;
      std::vector<float> e = embed(load_image(source));
      if (g.embed_dim == 0) g.embed_dim = static_cast<int>(e.size());
      if (static_cast<int>(e.size()) != g.embed_dim)
        throw UserError("build_gallery: inconsistent embedding dimension");
      for (float v : e)
        if (!std::isfinite(v)) throw UserError("build_gallery: non-finite embedding for " + source);
      support.push_back(std::move(e));
    }

    if (mode == GalleryMode::class_mean) {
      std::vector<float> mean(static_cast<std::size_t>(g.embed_dim), 0.f);
      for (const auto& e : support)
        for (int i = 0; i < g.embed_dim; ++i) mean[static_cast<std::size_t>(i)] += e[static_cast<std::size_t>(i)];
      for (auto& v : mean) v /= static_cast<float>(support_per_class);
      g.class_ids.push_back(cls);
      g.embeddings.insert(g.embeddings.end(), mean.begin(), mean.end());
    } else {
      for (const auto& e : support) {
        g.class_ids.push_back(cls);
        g.embeddings.insert(g.embeddings.end(), e.begin(), e.end());
      }
    }
  }
  if (g.class_ids.empty()) throw UserError("build_gallery: empty gallery (no train records)");
  return g;
}

std::string classify(std::span<const float> query, const EmbeddingGallery& gallery, int k) {
  const int rows = gallery.rows();
  if (rows == 0) throw UserError("classify: empty gallery");
  if (static_cast<int>(query.size()) != gallery.embed_dim)
    throw UserError("classify: query dimension " + std::to_string(query.size()) +
                    " != gallery dimension " + std::to_string(gallery.embed_dim));
  if (k < 1 || k > rows) throw UserError("classify: k must lie in [1, rows]");

  std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) dist[static_cast<std::size_t>(i)] = {sq_dist(query, gallery.row(i)), i};
  // distance ties resolve to the lower row (and therefore class) index
  std::sort(dist.begin(), dist.end());

  if (k == 1) return gallery.class_ids[static_cast<std::size_t>(dist[0].second)];

  std::map<std::string, int> votes;
  for (int i = 0; i < k; ++i) votes[gallery.class_ids[static_cast<std::size_t>(dist[static_cast<std::size_t>(i)].second)]]++;
  int best_votes = 0;
  for (const auto& [cls, v] : votes) best_votes = std::max(best_votes, v);

  // among vote ties, lowest class index; class_ids rows are index-ordered
  for (int i = 0; i < rows; ++i) {
    auto it = votes.find(gallery.class_ids[static_cast<std::size_t>(i)]);
    if (it != votes.end() && it->second == best_votes) return it->first;
  }
  return gallery.class_ids[static_cast<std::size_t>(dist[0].second)];  // unreachable
}

double evaluate_siamese(const EmbedFn& embed, const EmbeddingGallery& gallery,
                        const std::vector<ImageRecord>& queries, int k) {
  if (queries.empty()) return 0.0;
  int correct = 0;
  for (const auto& rec : queries) {
    const std::string& source = rec.crop_path.empty() ? rec.path : rec.crop_path;
    const std::vector<float> e = embed(load_image(source));
    if (classify(e, gallery, k) == rec.class_id) correct++;
  }
  return static_cast<double>(correct) / static_cast<double>(queries.size());
}

}  // namespace catreid
