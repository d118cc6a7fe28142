#include "drag/backbone.hpp"

#include <cmath>

namespace drag {

std::vector<double> he_normal(std::size_t count, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> out(count);
  for (auto& v : out) v = rng.normal(0.0, stddev);
  return out;
}

std::size_t BackboneConfig::feature_side() const {
  std::size_t side = input_size;
  const std::size_t p = stage_padding();
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    side = (side + 2 * p - kernel_size) / stage_stride(i) + 1;
  }
  return side;
}

BackboneParams BackboneParams::init(const BackboneConfig& config, Rng& rng) {
  BackboneParams params;
  std::size_t in_ch = config.input_channels;
  const std::size_t k = config.kernel_size;
  for (std::size_t out_ch : config.stage_channels) {
    const std::size_t fan_in = in_ch * k * k;
    params.kernels.push_back(
        Tensor::param({out_ch, in_ch, k, k}, he_normal(out_ch * in_ch * k * k, fan_in, rng)));
    params.biases.push_back(Tensor::param({out_ch}, std::vector<double>(out_ch, 0.0)));
    in_ch = out_ch;
  }
  return params;
}

std::vector<Tensor> BackboneParams::parameters() const {
  std::vector<Tensor> all;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    all.push_back(kernels[i]);
    all.push_back(biases[i]);
  }
  return all;
}

Tensor backbone_forward(const Tensor& images, const BackboneParams& params,
                        const BackboneConfig& config) {
  if (images.rank() != 4 || images.extent(1) != config.input_channels ||
      images.extent(2) != config.input_size || images.extent(3) != config.input_size) {
    throw DimensionError("backbone_forward: expected [B," +
                         std::to_string(config.input_channels) + "," +
                         std::to_string(config.input_size) + "," +
                         std::to_string(config.input_size) + "], got " +
                         shape_str(images.shape()));
  }
  Tensor x = images;
  for (std::size_t i = 0; i < config.stage_channels.size(); ++i) {
    x = relu(conv2d(x, params.kernels[i], params.biases[i], config.stage_stride(i),
                    config.stage_padding()));
  }
  return x;
}

Tensor global_channel_mean(const Tensor& fb) {
  if (fb.rank() != 4) {
    throw DimensionError("global_channel_mean: expected [B,C,H,W], got " + shape_str(fb.shape()));
  }
  const std::size_t b = fb.extent(0);
  const std::size_t h = fb.extent(2);
  const std::size_t w = fb.extent(3);
  return reshape(mean(fb, 1), {b, 1, h, w});
}

HeadParams HeadParams::init(std::size_t channels, Rng& rng) {
  HeadParams params;
  params.weight = Tensor::param({channels, 2}, he_normal(channels * 2, channels, rng));
  params.bias = Tensor::param({2}, {0.0, 0.0});
  return params;
}

std::vector<Tensor> HeadParams::parameters() const { return {weight, bias}; }

Tensor backbone_classifier_head(const Tensor& fb, const HeadParams& params) {
  const std::size_t b = fb.extent(0);
  const std::size_t c = fb.extent(1);
  const std::size_t hw = fb.extent(2) * fb.extent(3);
  Tensor pooled = mean(reshape(fb, {b, c, hw}), 2);  // [B,C]
  Tensor logits = add_rowvec(matmul(pooled, params.weight), params.bias);
  return softmax(logits, 1);
}

}  // namespace drag
