// SPDX-License-Identifier: Apache-2.0
//
// The four backbone architectures, built to expose pooled features with
// the standard penultimate widths (2048 / 1024 / 1792 / 768). Submodule
// naming follows the reference implementations so exported pretrained
// checkpoints map onto parameters by name.
#include "backbones_detail.hpp"

#include <cmath>

namespace catreid::models {

using torch::Tensor;
namespace nn = torch::nn;

LayerNorm2dImpl::LayerNorm2dImpl(int64_t channels, double eps) {
  norm_ = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({channels}).eps(eps)));
}

Tensor LayerNorm2dImpl::forward(Tensor x) {
  x = x.permute({0, 2, 3, 1});
  x = norm_(x);
  return x.permute({0, 3, 1, 2});
}

Tensor stochastic_depth(Tensor x, double p, bool training) {
  if (!training || p <= 0.0) return x;
  const double keep = 1.0 - p;
  auto mask = torch::empty({x.size(0), 1, 1, 1}, x.options()).bernoulli_(keep);
  return x * mask / keep;
}

namespace {

nn::Conv2d conv2d(int64_t in, int64_t out, int64_t k, int64_t stride = 1, int64_t pad = 0,
                  int64_t groups = 1, bool bias = false) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).groups(groups).bias(bias));
}

// ---------------------------------------------------------------------------
// ResNet-50
// ---------------------------------------------------------------------------

class BottleneckImpl : public nn::Module {
 public:
  BottleneckImpl(int64_t in_ch, int64_t width, int64_t stride) {
    const int64_t out_ch = width * 4;
    conv1_ = register_module("conv1", conv2d(in_ch, width, 1));
    bn1_ = register_module("bn1", nn::BatchNorm2d(width));
    conv2_ = register_module("conv2", conv2d(width, width, 3, stride, 1));
    bn2_ = register_module("bn2", nn::BatchNorm2d(width));
    conv3_ = register_module("conv3", conv2d(width, out_ch, 1));
    bn3_ = register_module("bn3", nn::BatchNorm2d(out_ch));
    if (stride != 1 || in_ch != out_ch) {
      downsample_ = register_module(
          "downsample", nn::Sequential(conv2d(in_ch, out_ch, 1, stride), nn::BatchNorm2d(out_ch)));
    }
  }

  Tensor forward(Tensor x) {
    Tensor identity = downsample_ ? downsample_->forward(x) : x;
    x = torch::relu(bn1_(conv1_(x)));
    x = torch::relu(bn2_(conv2_(x)));
    x = bn3_(conv3_(x));
    return torch::relu(x + identity);
  }

 private:
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
  nn::Sequential downsample_{nullptr};
};
TORCH_MODULE(Bottleneck);

class ResNet50Impl : public FeatureBackboneImpl {
 public:
  ResNet50Impl() {
    conv1_ = register_module("conv1", conv2d(3, 64, 7, 2, 3));
    bn1_ = register_module("bn1", nn::BatchNorm2d(64));
    layer1_ = register_module("layer1", make_layer(64, 64, 3, 1));
    layer2_ = register_module("layer2", make_layer(256, 128, 4, 2));
    layer3_ = register_module("layer3", make_layer(512, 256, 6, 2));
    layer4_ = register_module("layer4", make_layer(1024, 512, 3, 2));
  }

  Tensor forward_features(Tensor x) override {
    x = torch::relu(bn1_(conv1_(x)));
    x = torch::max_pool2d(x, 3, 2, 1);
    x = layer1_->forward(x);
    x = layer2_->forward(x);
    x = layer3_->forward(x);
    x = layer4_->forward(x);
    x = torch::adaptive_avg_pool2d(x, {1, 1});
    return x.flatten(1);
  }

  int feature_dim() const override { return 2048; }

 private:
  static nn::Sequential make_layer(int64_t in_ch, int64_t width, int blocks, int64_t stride) {
    nn::Sequential layer;
    layer->push_back(Bottleneck(in_ch, width, stride));
    for (int i = 1; i < blocks; ++i) layer->push_back(Bottleneck(width * 4, width, 1));
    return layer;
  }

  nn::Conv2d conv1_{nullptr};
  nn::BatchNorm2d bn1_{nullptr};
  nn::Sequential layer1_{nullptr}, layer2_{nullptr}, layer3_{nullptr}, layer4_{nullptr};
};

// ---------------------------------------------------------------------------
// DenseNet-121
// ---------------------------------------------------------------------------

class DenseLayerImpl : public nn::Module {
 public:
  DenseLayerImpl(int64_t in_ch, int64_t growth, int64_t bn_size) {
    norm1_ = register_module("norm1", nn::BatchNorm2d(in_ch));
    conv1_ = register_module("conv1", conv2d(in_ch, bn_size * growth, 1));
    norm2_ = register_module("norm2", nn::BatchNorm2d(bn_size * growth));
    conv2_ = register_module("conv2", conv2d(bn_size * growth, growth, 3, 1, 1));
  }

  Tensor forward(Tensor x) {
    x = conv1_(torch::relu(norm1_(x)));
    return conv2_(torch::relu(norm2_(x)));
  }

 private:
  nn::BatchNorm2d norm1_{nullptr}, norm2_{nullptr};
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(DenseLayer);

class DenseBlockImpl : public nn::Module {
 public:
  DenseBlockImpl(int num_layers, int64_t in_ch, int64_t growth, int64_t bn_size) {
    for (int i = 0; i < num_layers; ++i) {
      layers_.push_back(register_module("denselayer" + std::to_string(i + 1),
                                        DenseLayer(in_ch + i * growth, growth, bn_size)));
    }
  }

  Tensor forward(Tensor x) {
    std::vector<Tensor> features{x};
    for (auto& layer : layers_) {
      features.push_back(layer->forward(torch::cat(features, 1)));
    }
    return torch::cat(features, 1);
  }

 private:
  std::vector<DenseLayer> layers_;
};
TORCH_MODULE(DenseBlock);

class TransitionImpl : public nn::Module {
 public:
  TransitionImpl(int64_t in_ch, int64_t out_ch) {
    norm_ = register_module("norm", nn::BatchNorm2d(in_ch));
    conv_ = register_module("conv", conv2d(in_ch, out_ch, 1));
  }

  Tensor forward(Tensor x) {
    x = conv_(torch::relu(norm_(x)));
    return torch::avg_pool2d(x, 2, 2);
  }

 private:
  nn::BatchNorm2d norm_{nullptr};
  nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(Transition);

class DenseNet121Impl : public FeatureBackboneImpl {
 public:
  DenseNet121Impl() {
    constexpr int64_t growth = 32, init_ch = 64, bn_size = 4;
    const int block_config[4] = {6, 12, 24, 16};

    conv0_ = register_module("conv0", conv2d(3, init_ch, 7, 2, 3));
    norm0_ = register_module("norm0", nn::BatchNorm2d(init_ch));

    int64_t ch = init_ch;
    for (int b = 0; b < 4; ++b) {
      auto block = register_module("denseblock" + std::to_string(b + 1),
                                   DenseBlock(block_config[b], ch, growth, bn_size));
      blocks_.push_back(block);
      ch += block_config[b] * growth;
      if (b < 3) {
        auto trans =
            register_module("transition" + std::to_string(b + 1), Transition(ch, ch / 2));
        transitions_.push_back(trans);
        ch /= 2;
      }
    }
    norm5_ = register_module("norm5", nn::BatchNorm2d(ch));  // ch == 1024
  }

  Tensor forward_features(Tensor x) override {
    x = torch::relu(norm0_(conv0_(x)));
    x = torch::max_pool2d(x, 3, 2, 1);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      x = blocks_[b]->forward(x);
      if (b < transitions_.size()) x = transitions_[b]->forward(x);
    }
    x = torch::relu(norm5_(x));
    x = torch::adaptive_avg_pool2d(x, {1, 1});
    return x.flatten(1);
  }

  int feature_dim() const override { return 1024; }

 private:
  nn::Conv2d conv0_{nullptr};
  nn::BatchNorm2d norm0_{nullptr}, norm5_{nullptr};
  std::vector<DenseBlock> blocks_;
  std::vector<Transition> transitions_;
};

// ---------------------------------------------------------------------------
// EfficientNet-B4
// ---------------------------------------------------------------------------

class SqueezeExcitationImpl : public nn::Module {
 public:
  SqueezeExcitationImpl(int64_t channels, int64_t squeeze) {
    fc1_ = register_module("fc1", nn::Conv2d(nn::Conv2dOptions(channels, squeeze, 1)));
    fc2_ = register_module("fc2", nn::Conv2d(nn::Conv2dOptions(squeeze, channels, 1)));
  }

  Tensor forward(Tensor x) {
    auto scale = torch::adaptive_avg_pool2d(x, {1, 1});
    scale = torch::silu(fc1_(scale));
    scale = torch::sigmoid(fc2_(scale));
    return x * scale;
  }

 private:
  nn::Conv2d fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(SqueezeExcitation);

class MBConvImpl : public nn::Module {
 public:
  MBConvImpl(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride, int64_t expand_ratio,
             double sd_prob)
      : use_residual_(stride == 1 && in_ch == out_ch), sd_prob_(sd_prob) {
    const int64_t mid = in_ch * expand_ratio;
    if (expand_ratio != 1) {
      expand_conv_ = register_module("expand_conv", conv2d(in_ch, mid, 1));
      expand_bn_ = register_module("expand_bn", nn::BatchNorm2d(mid));
    }
    dw_conv_ = register_module("dw_conv", conv2d(mid, mid, kernel, stride, kernel / 2, mid));
    dw_bn_ = register_module("dw_bn", nn::BatchNorm2d(mid));
    se_ = register_module("se", SqueezeExcitation(mid, std::max<int64_t>(1, in_ch / 4)));
    project_conv_ = register_module("project_conv", conv2d(mid, out_ch, 1));
    project_bn_ = register_module("project_bn", nn::BatchNorm2d(out_ch));
  }

  Tensor forward(Tensor x) {
    Tensor out = x;
    if (expand_conv_) out = torch::silu(expand_bn_(expand_conv_(out)));
    out = torch::silu(dw_bn_(dw_conv_(out)));
    out = se_->forward(out);
    out = project_bn_(project_conv_(out));
    if (use_residual_) out = x + stochastic_depth(out, sd_prob_, is_training());
    return out;
  }

 private:
  nn::Conv2d expand_conv_{nullptr}, dw_conv_{nullptr}, project_conv_{nullptr};
  nn::BatchNorm2d expand_bn_{nullptr}, dw_bn_{nullptr}, project_bn_{nullptr};
  SqueezeExcitation se_{nullptr};
  bool use_residual_;
  double sd_prob_;
};
TORCH_MODULE(MBConv);

class EfficientNetB4Impl : public FeatureBackboneImpl {
 public:
  EfficientNetB4Impl() {
    // B0 base config scaled by width 1.4 / depth 1.8, channels rounded to
    // multiples of 8
    const int64_t channels[7] = {24, 32, 56, 112, 160, 272, 448};
    const int depths[7] = {2, 4, 4, 6, 6, 8, 2};
    const int64_t kernels[7] = {3, 3, 5, 3, 5, 5, 3};
    const int64_t strides[7] = {1, 2, 2, 2, 1, 2, 1};
    const int64_t expands[7] = {1, 6, 6, 6, 6, 6, 6};
    constexpr int64_t stem = 48, head = 1792;
    constexpr double sd_max = 0.2;

    stem_conv_ = register_module("stem_conv", conv2d(3, stem, 3, 2, 1));
    stem_bn_ = register_module("stem_bn", nn::BatchNorm2d(stem));

    int total_blocks = 0;
    for (int d : depths) total_blocks += d;

    int64_t in_ch = stem;
    int block_idx = 0;
    for (int s = 0; s < 7; ++s) {
      for (int b = 0; b < depths[s]; ++b) {
        const double sd = sd_max * block_idx / std::max(1, total_blocks - 1);
        auto conv = MBConv(in_ch, channels[s], kernels[s], b == 0 ? strides[s] : 1, expands[s], sd);
        blocks_.push_back(register_module(
            "stage" + std::to_string(s + 1) + "_block" + std::to_string(b + 1), conv));
        in_ch = channels[s];
        ++block_idx;
      }
    }
    head_conv_ = register_module("head_conv", conv2d(in_ch, head, 1));
    head_bn_ = register_module("head_bn", nn::BatchNorm2d(head));
  }

  Tensor forward_features(Tensor x) override {
    x = torch::silu(stem_bn_(stem_conv_(x)));
    for (auto& block : blocks_) x = block->forward(x);
    x = torch::silu(head_bn_(head_conv_(x)));
    x = torch::adaptive_avg_pool2d(x, {1, 1});
    return x.flatten(1);
  }

  int feature_dim() const override { return 1792; }

 private:
  nn::Conv2d stem_conv_{nullptr}, head_conv_{nullptr};
  nn::BatchNorm2d stem_bn_{nullptr}, head_bn_{nullptr};
  std::vector<MBConv> blocks_;
};

// ---------------------------------------------------------------------------
// ConvNeXt-Tiny
// ---------------------------------------------------------------------------

class CNBlockImpl : public nn::Module {
 public:
  CNBlockImpl(int64_t dim, double sd_prob) : sd_prob_(sd_prob) {
    dwconv_ = register_module("dwconv", conv2d(dim, dim, 7, 1, 3, dim, /*bias=*/true));
    norm_ = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({dim}).eps(1e-6)));
    pwconv1_ = register_module("pwconv1", nn::Linear(dim, 4 * dim));
    pwconv2_ = register_module("pwconv2", nn::Linear(4 * dim, dim));
    gamma_ = register_parameter("gamma", torch::full({dim}, 1e-6));
  }

  Tensor forward(Tensor x) {
    Tensor out = dwconv_(x);
    out = out.permute({0, 2, 3, 1});  // NCHW -> NHWC for the MLP
    out = norm_(out);
    out = pwconv1_(out);
    out = torch::gelu(out);
    out = pwconv2_(out);
    out = gamma_ * out;
    out = out.permute({0, 3, 1, 2});
    return x + stochastic_depth(out, sd_prob_, is_training());
  }

 private:
  nn::Conv2d dwconv_{nullptr};
  nn::LayerNorm norm_{nullptr};
  nn::Linear pwconv1_{nullptr}, pwconv2_{nullptr};
  Tensor gamma_;
  double sd_prob_;
};
TORCH_MODULE(CNBlock);

class ConvNeXtTinyImpl : public FeatureBackboneImpl {
 public:
  ConvNeXtTinyImpl() {
    const int64_t dims[4] = {96, 192, 384, 768};
    const int depths[4] = {3, 3, 9, 3};
    constexpr double sd_max = 0.1;

    stem_conv_ = register_module("stem_conv",
                                 nn::Conv2d(nn::Conv2dOptions(3, dims[0], 4).stride(4).bias(true)));
    stem_norm_ = register_module("stem_norm", LayerNorm2d(dims[0]));

    int total_blocks = 0;
    for (int d : depths) total_blocks += d;

    int block_idx = 0;
    for (int s = 0; s < 4; ++s) {
      if (s > 0) {
        auto norm = register_module("downsample" + std::to_string(s) + "_norm",
                                    LayerNorm2d(dims[s - 1]));
        auto conv = register_module(
            "downsample" + std::to_string(s) + "_conv",
            nn::Conv2d(nn::Conv2dOptions(dims[s - 1], dims[s], 2).stride(2).bias(true)));
        down_norms_.push_back(norm);
        down_convs_.push_back(conv);
      }
      for (int b = 0; b < depths[s]; ++b) {
        const double sd = sd_max * block_idx / std::max(1, total_blocks - 1);
        blocks_.push_back(register_module(
            "stage" + std::to_string(s + 1) + "_block" + std::to_string(b + 1),
            CNBlock(dims[s], sd)));
        stage_of_block_.push_back(s);
        ++block_idx;
      }
    }
    final_norm_ = register_module("final_norm", LayerNorm2d(dims[3]));
  }

  Tensor forward_features(Tensor x) override {
    x = stem_norm_(stem_conv_(x));
    int stage = 0;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      if (stage_of_block_[i] != stage) {
        stage = stage_of_block_[i];
        x = down_convs_[stage - 1](down_norms_[stage - 1](x));
      }
      x = blocks_[i]->forward(x);
    }
    x = torch::adaptive_avg_pool2d(x, {1, 1});
    x = final_norm_(x);
    return x.flatten(1);
  }

  int feature_dim() const override { return 768; }

 private:
  nn::Conv2d stem_conv_{nullptr};
  LayerNorm2d stem_norm_{nullptr}, final_norm_{nullptr};
  std::vector<LayerNorm2d> down_norms_;
  std::vector<nn::Conv2d> down_convs_;
  std::vector<CNBlock> blocks_;
  std::vector<int> stage_of_block_;
};

}  // namespace

std::shared_ptr<FeatureBackboneImpl> make_resnet50() { return std::make_shared<ResNet50Impl>(); }
std::shared_ptr<FeatureBackboneImpl> make_densenet121() { return std::make_shared<DenseNet121Impl>(); }
std::shared_ptr<FeatureBackboneImpl> make_efficientnet_b4() {
  return std::make_shared<EfficientNetB4Impl>();
}
std::shared_ptr<FeatureBackboneImpl> make_convnext_tiny() {
  return std::make_shared<ConvNeXtTinyImpl>();
}

}  // namespace catreid::models
