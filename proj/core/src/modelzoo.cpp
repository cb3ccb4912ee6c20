// SPDX-License-Identifier: Apache-2.0
#include "catreid/modelzoo.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "catreid/augment.hpp"
#include "catreid/errors.hpp"
#include "models/backbones_detail.hpp"

namespace catreid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve_weights_dir(const ModelOptions& opts) {
  if (!opts.weights_dir.empty()) return opts.weights_dir;
  if (const char* env = std::getenv("CATREID_WEIGHTS_DIR")) return fs::path(env);
  if (const char* home = std::getenv("HOME")) return fs::path(home) / ".cache" / "catreid";
  return fs::path(".") / ".catreid-weights";
}

// Weights container: a magic line, a JSON descriptor line, then raw
// little-endian float32 tensor data in descriptor order. Produced by
// tools/export_weights.py.
void load_pretrained(FeatureBackboneImpl& backbone, const BackboneSpec& spec,
                     const ModelOptions& opts) {
  const fs::path dir = resolve_weights_dir(opts);
  const fs::path file = dir / (std::string(to_string(spec.name)) + ".weights");
  if (!fs::exists(file))
    throw EnvError("pretrained weights cache miss: " + file.string() +
                   " not found; export them with tools/export_weights.py or build with "
                   "pretrained=false");

  std::ifstream in(file, std::ios::binary);
  if (!in) throw EnvError("cannot open weights file: " + file.string());
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != "CATREID-WEIGHTS/1")
    throw EnvError("corrupt weights file (bad magic): " + file.string());
  std::getline(in, header_line);
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::parse_error& e) {
    throw EnvError("corrupt weights file (bad header): " + file.string() + ": " + e.what());
  }
  if (header.value("backbone", "") != to_string(spec.name))
    throw EnvError("weights file is for backbone '" + header.value("backbone", "") +
                   "', expected '" + to_string(spec.name) + "'");

  auto params = backbone.named_parameters();
  auto buffers = backbone.named_buffers();
  torch::NoGradGuard no_grad;
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<std::vector<std::int64_t>>();
    std::int64_t numel = 1;
    for (auto d : shape) numel *= d;
    std::vector<float> data(static_cast<std::size_t>(numel));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(data.size() * sizeof(float)))
      throw EnvError("corrupt weights file (truncated data): " + file.string());

    torch::Tensor* dest = params.find(name);
    if (dest == nullptr) dest = buffers.find(name);
    if (dest == nullptr)
      throw EnvError("weights file names unknown tensor '" + name + "' for " +
                     to_string(spec.name));
    const auto want = dest->sizes().vec();
    if (want != shape)
      throw EnvError("shape mismatch for '" + name + "' in " + file.string());
    dest->copy_(torch::from_blob(data.data(), shape, torch::kFloat32));
  }
}

void freeze(torch::nn::Module& m) {
  for (auto& p : m.parameters()) p.set_requires_grad(false);
}

}  // namespace

std::shared_ptr<FeatureBackboneImpl> build_backbone(const BackboneSpec& spec,
                                                    const ModelOptions& opts) {
  std::shared_ptr<FeatureBackboneImpl> backbone;
  switch (spec.name) {
    case BackboneName::resnet50: backbone = models::make_resnet50(); break;
    case BackboneName::densenet121: backbone = models::make_densenet121(); break;
    case BackboneName::efficientnet_b4: backbone = models::make_efficientnet_b4(); break;
    case BackboneName::convnext_tiny: backbone = models::make_convnext_tiny(); break;
  }
  if (!backbone) throw UserError("unknown backbone");
  if (backbone->feature_dim() != spec.feature_dim())
    throw UserError("backbone feature width disagrees with spec");
  if (spec.pretrained) load_pretrained(*backbone, spec, opts);
  return backbone;
}

ClassifierImpl::ClassifierImpl(const BackboneSpec& spec, int num_classes, TrainMode mode,
                               const ModelOptions& opts)
    : mode_(mode), num_classes_(num_classes), frozen_stats_(opts.frozen_stats) {
  if (num_classes < 2) throw UserError("build_classifier: num_classes must be >= 2");
  backbone_ = build_backbone(spec, opts);
  register_module("backbone", std::static_pointer_cast<torch::nn::Module>(backbone_));
  head_ = register_module("head", torch::nn::Linear(spec.feature_dim(), num_classes));
  if (mode_ == TrainMode::transfer) {
    freeze(*backbone_);
    if (frozen_stats_) backbone_->eval();
  }
}

torch::Tensor ClassifierImpl::forward(torch::Tensor x) {
  torch::Tensor features;
  if (mode_ == TrainMode::transfer) {
    torch::NoGradGuard no_grad;  // frozen feature extractor, skip the graph
    features = backbone_->forward_features(x).detach();
  } else {
    features = backbone_->forward_features(x);
  }
  return head_(features);
}

void ClassifierImpl::train(bool on) {
  torch::nn::Module::train(on);
  // frozen statistics: the backbone's norm layers never leave eval mode
  if (mode_ == TrainMode::transfer && frozen_stats_) backbone_->eval();
}

std::vector<torch::Tensor> ClassifierImpl::trainable_parameters() {
  std::vector<torch::Tensor> out;
  for (auto& p : parameters())
    if (p.requires_grad()) out.push_back(p);
  return out;
}

EmbedderImpl::EmbedderImpl(const BackboneSpec& spec, int embed_dim, bool freeze_backbone,
                           bool l2_normalize, const ModelOptions& opts)
    : embed_dim_(embed_dim),
      freeze_backbone_(freeze_backbone),
      l2_normalize_(l2_normalize),
      frozen_stats_(opts.frozen_stats) {
  if (embed_dim < 2) throw UserError("build_embedder: embed_dim must be >= 2");
  backbone_ = build_backbone(spec, opts);
  register_module("backbone", std::static_pointer_cast<torch::nn::Module>(backbone_));
  projection_ = register_module("projection", torch::nn::Linear(spec.feature_dim(), embed_dim));
  if (freeze_backbone_) {
    freeze(*backbone_);
    if (frozen_stats_) backbone_->eval();
  }
}

torch::Tensor EmbedderImpl::forward(torch::Tensor x) {
  torch::Tensor features;
  if (freeze_backbone_) {
    torch::NoGradGuard no_grad;
    features = backbone_->forward_features(x).detach();
  } else {
    features = backbone_->forward_features(x);
  }
  torch::Tensor e = projection_(features);
  if (l2_normalize_) e = torch::nn::functional::normalize(e, torch::nn::functional::NormalizeFuncOptions().dim(1));
  return e;
}

void EmbedderImpl::train(bool on) {
  torch::nn::Module::train(on);
  if (freeze_backbone_ && frozen_stats_) backbone_->eval();
}

std::vector<torch::Tensor> EmbedderImpl::trainable_parameters() {
  std::vector<torch::Tensor> out;
  for (auto& p : parameters())
    if (p.requires_grad()) out.push_back(p);
  return out;
}

Classifier build_classifier(const BackboneSpec& spec, int num_classes, TrainMode mode,
                            const ModelOptions& opts) {
  return Classifier(spec, num_classes, mode, opts);
}

Embedder build_embedder(const BackboneSpec& spec, int embed_dim, bool freeze_backbone,
                        bool l2_normalize, const ModelOptions& opts) {
  return Embedder(spec, embed_dim, freeze_backbone, l2_normalize, opts);
}

TrainableReport trainable_report(const torch::nn::Module& model) {
  TrainableReport r;
  for (const auto& p : model.parameters()) {
    const auto n = p.numel();
    r.total_params += n;
    if (p.requires_grad())
      r.trainable_params += n;
    else
      r.frozen_params += n;
  }
  return r;
}

std::string format(const TrainableReport& r) {
  std::ostringstream out;
  out << "params total=" << r.total_params << " trainable=" << r.trainable_params
      << " frozen=" << r.frozen_params;
  return out.str();
}

torch::Tensor to_tensor(const ImageF& img) {
  auto t = torch::from_blob(const_cast<float*>(img.data.data()), {1, 3, img.height, img.width},
                            torch::kFloat32);
  return t.clone();
}

EmbedFn make_embed_fn(Embedder embedder, const AugmentConfig& augment) {
  auto pipeline = std::make_shared<EvalPipeline>(augment);
  return [embedder, pipeline](const ImageU8& crop) mutable -> std::vector<float> {
    torch::NoGradGuard no_grad;
    embedder->eval();
    const torch::Tensor out = embedder->forward(to_tensor(pipeline->apply(crop)));
    const torch::Tensor flat = out.flatten().contiguous();
    return std::vector<float>(flat.data_ptr<float>(), flat.data_ptr<float>() + flat.numel());
  };
}

void save_module(torch::nn::Module& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  m.save(archive);
  archive.save_to(path.string());
}

void load_module(torch::nn::Module& m, const fs::path& path) {
  if (!fs::exists(path)) throw UserError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  m.load(archive);
}

}  // namespace catreid
