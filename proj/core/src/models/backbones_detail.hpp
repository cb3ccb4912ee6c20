// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include "catreid/modelzoo.hpp"

namespace catreid::models {

// LayerNorm over the channel dimension of NCHW tensors.
class LayerNorm2dImpl : public torch::nn::Module {
 public:
  explicit LayerNorm2dImpl(int64_t channels, double eps = 1e-6);
  torch::Tensor forward(torch::Tensor x);

 private:
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(LayerNorm2d);

// Per-sample residual-branch drop ("row" mode). Identity in eval mode.
torch::Tensor stochastic_depth(torch::Tensor x, double p, bool training);

std::shared_ptr<FeatureBackboneImpl> make_resnet50();
std::shared_ptr<FeatureBackboneImpl> make_densenet121();
std::shared_ptr<FeatureBackboneImpl> make_efficientnet_b4();
std::shared_ptr<FeatureBackboneImpl> make_convnext_tiny();

}  // namespace catreid::models
