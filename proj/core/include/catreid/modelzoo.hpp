// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <torch/torch.h>

#include "catreid/metriclearn.hpp"
#include "catreid/runconfig.hpp"

namespace catreid {

struct ModelOptions {
  // Directory searched for <backbone>.weights files when pretrained=true.
  // Empty means $CATREID_WEIGHTS_DIR, falling back to ~/.cache/catreid.
  std::filesystem::path weights_dir;
  bool frozen_stats = true;  // transfer mode: backbone norm layers stay in eval
};

// A backbone exposing pooled features of width feature_dim().
class FeatureBackboneImpl : public torch::nn::Module {
 public:
  virtual ~FeatureBackboneImpl() = default;
  virtual torch::Tensor forward_features(torch::Tensor x) = 0;
  virtual int feature_dim() const = 0;
};

std::shared_ptr<FeatureBackboneImpl> build_backbone(const BackboneSpec& spec,
                                                    const ModelOptions& opts = {});

// Pretrained backbone + fresh linear head. In transfer mode the backbone
// contributes features only: its parameters take no gradient and (with
// frozen_stats) its normalization layers stay in inference mode for the
// whole run.
class ClassifierImpl : public torch::nn::Module {
 public:
  ClassifierImpl(const BackboneSpec& spec, int num_classes, TrainMode mode,
                 const ModelOptions& opts = {});

  torch::Tensor forward(torch::Tensor x);
  void train(bool on = true) override;

  TrainMode mode() const { return mode_; }
  int num_classes() const { return num_classes_; }
  std::shared_ptr<FeatureBackboneImpl> backbone() { return backbone_; }
  torch::nn::Linear head() { return head_; }
  std::vector<torch::Tensor> trainable_parameters();

 private:
  std::shared_ptr<FeatureBackboneImpl> backbone_;
  torch::nn::Linear head_{nullptr};
  TrainMode mode_;
  int num_classes_;
  bool frozen_stats_;
};
TORCH_MODULE(Classifier);

// Backbone + linear projection to embed_dim. The backbone is frozen by
// default (fine-tuning the siamese branch is available behind a flag).
class EmbedderImpl : public torch::nn::Module {
 public:
  EmbedderImpl(const BackboneSpec& spec, int embed_dim = 512, bool freeze_backbone = true,
               bool l2_normalize = false, const ModelOptions& opts = {});

  torch::Tensor forward(torch::Tensor x);
  void train(bool on = true) override;

  int embed_dim() const { return embed_dim_; }
  std::shared_ptr<FeatureBackboneImpl> backbone() { return backbone_; }
  torch::nn::Linear projection() { return projection_; }
  std::vector<torch::Tensor> trainable_parameters();

 private:
  std::shared_ptr<FeatureBackboneImpl> backbone_;
  torch::nn::Linear projection_{nullptr};
  int embed_dim_;
  bool freeze_backbone_;
  bool l2_normalize_;
  bool frozen_stats_;
};
TORCH_MODULE(Embedder);

Classifier build_classifier(const BackboneSpec& spec, int num_classes, TrainMode mode,
                            const ModelOptions& opts = {});
Embedder build_embedder(const BackboneSpec& spec, int embed_dim = 512,
                        bool freeze_backbone = true, bool l2_normalize = false,
                        const ModelOptions& opts = {});

struct TrainableReport {
  std::int64_t total_params = 0;
  std::int64_t trainable_params = 0;
  std::int64_t frozen_params = 0;
};
TrainableReport trainable_report(const torch::nn::Module& model);
std::string format(const TrainableReport& r);

// ImageF (CHW float) -> 1x3xHxW tensor (copies).
torch::Tensor to_tensor(const ImageF& img);

// Wraps a trained embedder + eval normalization as an EmbedFn for the
// gallery/classify machinery.
EmbedFn make_embed_fn(Embedder embedder, const AugmentConfig& augment);

void save_module(torch::nn::Module& m, const std::filesystem::path& path);
void load_module(torch::nn::Module& m, const std::filesystem::path& path);

}  // namespace catreid
