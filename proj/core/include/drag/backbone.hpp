#pragma once

#include <vector>

#include "drag/rng.hpp"
#include "drag/tensor.hpp"

namespace drag {

// Small convolutional stack producing the feature map used by the rest of the
// pipeline. Stage 0 keeps the input resolution; when downsample_per_stage is set,
// every later stage convolves with stride 2, so the default
// (32x32 input, 3 stages) yields a 32-channel 8x8 feature map.
struct BackboneConfig {
  std::size_t input_channels = 3;
  std::size_t input_size = 32;
  std::vector<std::size_t> stage_channels = {16, 32, 32};
  std::size_t kernel_size = 3;
  bool downsample_per_stage = true;

  std::size_t feature_channels() const { return stage_channels.back(); }
  std::size_t feature_side() const;
  std::size_t stage_stride(std::size_t stage) const {
    return (downsample_per_stage && stage > 0) ? 2 : 1;
  }
  std::size_t stage_padding() const { return (kernel_size - 1) / 2; }
};

struct BackboneParams {
  std::vector<Tensor> kernels;  // per stage, [Cout,Cin,k,k]
  std::vector<Tensor> biases;   // per stage, [Cout]

  static BackboneParams init(const BackboneConfig& config, Rng& rng);
  std::vector<Tensor> parameters() const;
};

// images: [B,3,S,S] with values in [0,1]  ->  feature map [B,C,H,W]
Tensor backbone_forward(const Tensor& images, const BackboneParams& params,
                        const BackboneConfig& config);

// [B,C,H,W] -> per-pixel channel average [B,1,H,W]
Tensor global_channel_mean(const Tensor& fb);

// Plain classifier used only while pretraining the backbone: global average pool,
// one affine map, softmax.
struct HeadParams {
  Tensor weight;  // [C,2]
  Tensor bias;    // [2]

  static HeadParams init(std::size_t channels, Rng& rng);
  std::vector<Tensor> parameters() const;
};

// [B,C,H,W] -> probability pairs [B,2]
Tensor backbone_classifier_head(const Tensor& fb, const HeadParams& params);

// He-style fan-in scaled normal initialization used across the project.
std::vector<double> he_normal(std::size_t count, std::size_t fan_in, Rng& rng);

}  // namespace drag
