#include "drag/pipeline_check.hpp"

#include "drag/training.hpp"

namespace drag {

ModelConfig grad_check_model_config() {
  ModelConfig config;
  config.backbone.input_channels = 3;
  config.backbone.input_size = 16;
  config.backbone.stage_channels = {8, 8, 8};
  config.backbone.kernel_size = 3;
  config.backbone.downsample_per_stage = true;
  config.n_regions = 4;
  config.cgl_hidden = 16;
  config.key_dim = 4;
  return config;
}

GradCheckReport check_pipeline_gradients(const ModelConfig& config, std::size_t batch,
                                         std::uint64_t seed, double eps) {
  DragModel model = DragModel::init(config, seed);
  Rng rng = Rng(seed).child(99);
  const std::size_t s = config.backbone.input_size;
  std::vector<double> pixels(batch * 3 * s * s);
  for (auto& v : pixels) v = rng.next_double();
  const Tensor images = Tensor::from({batch, 3, s, s}, std::move(pixels));
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % 2);

  // Freeze the discrete choices from the unperturbed parameters.
  RegionPeaks peaks;
  DivBranches branches;
  {
    NoGradGuard guard;
    const auto out = model.forward(images);
    peaks = region_peaks(out.fw);
    branches = div_branches(out.fw);
  }

  auto total_loss = [&]() {
    const auto out = model.forward(images);
    return add(cls_loss(out.probs, labels),
               add(dis_loss(out.fw, peaks), div_loss(out.fw, branches)));
  };

  std::vector<Tensor> params;
  for (const auto& group : model.parameter_groups()) {
    if (group.name == "head") continue;  // the pretraining head is not in this path
    params.insert(params.end(), group.params.begin(), group.params.end());
  }
  return grad_check(total_loss, params, eps);
}

}  // namespace drag
