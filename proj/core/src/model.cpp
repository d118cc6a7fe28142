#include "drag/model.hpp"

#include <cmath>

namespace drag {

DragModel DragModel::init(const ModelConfig& config, std::uint64_t seed) {
  Rng root(seed);
  DragModel m;
  m.config = config;
  Rng r_backbone = root.child(1);
  Rng r_head = root.child(2);
  Rng r_cgl = root.child(3);
  Rng r_attn = root.child(4);
  Rng r_gcn = root.child(5);
  Rng r_cls = root.child(6);
  m.backbone = BackboneParams::init(config.backbone, r_backbone);
  m.head = HeadParams::init(config.channels(), r_head);
  m.cgl = CglParams::init(config.channels(), config.n_regions, config.cgl_hidden, r_cgl);
  m.attention =
      AttentionParams::init(config.region_dim(), config.key_dim, config.n_regions, r_attn);
  m.gcn = GcnParams::init(config.region_dim(), r_gcn);
  m.classifier =
      ClassifierParams::init((config.n_regions + 1) * config.region_dim(), r_cls);
  return m;
}

PipelineOutputs DragModel::forward(const Tensor& images, AblationMode mode) const {
  return forward_from_features(backbone_forward(images, backbone, config.backbone), mode);
}

PipelineOutputs DragModel::forward_from_features(const Tensor& fb, AblationMode mode) const {
  PipelineOutputs out;
  out.fb = fb;
  out.fc = global_channel_mean(fb);
  out.cr_soft = cgl_forward(fb, cgl);
  out.fw = region_features(fb, out.cr_soft);

  if (mode == AblationMode::no_gcn) {
    out.probs = classify(out.fc, out.fw, classifier);
    return out;
  }
  if (mode == AblationMode::fixed_correlation) {
    const std::size_t b = fb.extent(0);
    const std::size_t n = config.n_regions;
    out.corr = Tensor::full({b, n, n}, 1.0);
  } else {
    out.corr = attention_correlation(out.fw, attention);
  }
  out.fp = propagate(out.fw, out.corr, gcn);
  out.probs = classify(out.fc, out.fp, classifier);
  return out;
}

Tensor DragModel::pretrain_probs(const Tensor& images) const {
  return backbone_classifier_head(backbone_forward(images, backbone, config.backbone), head);
}

std::vector<std::pair<std::string, Tensor>> DragModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> named;
  for (std::size_t i = 0; i < backbone.kernels.size(); ++i) {
    named.emplace_back("backbone.stage" + std::to_string(i) + ".kernel", backbone.kernels[i]);
    named.emplace_back("backbone.stage" + std::to_string(i) + ".bias", backbone.biases[i]);
  }
  named.emplace_back("head.weight", head.weight);
  named.emplace_back("head.bias", head.bias);
  named.emplace_back("cgl.w1", cgl.w1);
  named.emplace_back("cgl.b1", cgl.b1);
  named.emplace_back("cgl.w2", cgl.w2);
  named.emplace_back("cgl.b2", cgl.b2);
  named.emplace_back("attention.wq", attention.wq);
  named.emplace_back("attention.bq", attention.bq);
  named.emplace_back("attention.wk", attention.wk);
  named.emplace_back("attention.bk", attention.bk);
  named.emplace_back("attention.wv", attention.wv);
  named.emplace_back("attention.bv", attention.bv);
  named.emplace_back("gcn.theta1", gcn.theta1);
  named.emplace_back("gcn.theta2", gcn.theta2);
  named.emplace_back("classifier.weight", classifier.weight);
  named.emplace_back("classifier.bias", classifier.bias);
  return named;
}

std::vector<DragModel::Group> DragModel::parameter_groups() const {
  std::vector<Group> groups;
  {
    Group g{"backbone", {}, {}};
    for (std::size_t i = 0; i < backbone.kernels.size(); ++i) {
      g.params.push_back(backbone.kernels[i]);
      g.is_bias.push_back(false);
      g.params.push_back(backbone.biases[i]);
      g.is_bias.push_back(true);
    }
    groups.push_back(std::move(g));
  }
  groups.push_back({"head", {head.weight, head.bias}, {false, true}});
  groups.push_back({"cgl", {cgl.w1, cgl.b1, cgl.w2, cgl.b2}, {false, true, false, true}});
  groups.push_back({"gcn",
                    {attention.wq, attention.bq, attention.wk, attention.bk, attention.wv,
                     attention.bv, gcn.theta1, gcn.theta2, classifier.weight, classifier.bias},
                    {false, true, false, true, false, true, false, false, false, true}});
  return groups;
}

Checkpoint DragModel::state() const {
  Checkpoint ck;
  for (const auto& [name, tensor] : named_parameters()) ck.tensors.emplace_back(name, tensor);
  if (!cluster.empty()) ck.tensors.emplace_back("cluster.cr", cluster.matrix());
  return ck;
}

void DragModel::load_state(const Checkpoint& checkpoint) {
  auto named = named_parameters();
  for (auto& [name, tensor] : named) {
    const Tensor* stored = checkpoint.find(name);
    if (!stored) {
      throw FormatError("checkpoint is missing tensor '" + name + "'");
    }
    if (stored->shape() != tensor.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " +
                        shape_str(stored->shape()) + ", model expects " +
                        shape_str(tensor.shape()));
    }
    tensor.values_mut() = stored->values();
  }
  if (const Tensor* cr = checkpoint.find("cluster.cr")) {
    if (cr->rank() != 2 || cr->extent(0) != config.n_regions ||
        cr->extent(1) != config.channels()) {
      throw FormatError("checkpoint tensor 'cluster.cr' has shape " + shape_str(cr->shape()) +
                        ", model expects " + shape_str({config.n_regions, config.channels()}));
    }
    cluster.n_regions = config.n_regions;
    cluster.n_channels = config.channels();
    cluster.channel_to_region.assign(cluster.n_channels, 0);
    for (std::size_t c = 0; c < cluster.n_channels; ++c) {
      for (std::size_t r = 0; r < cluster.n_regions; ++r) {
        if (cr->values()[r * cluster.n_channels + c] > 0.5) {
          cluster.channel_to_region[c] = r;
          break;
        }
      }
    }
  } else {
    cluster = {};
  }
}

}  // namespace drag
