#pragma once

#include <string>
#include <vector>

#include "drag/backbone.hpp"
#include "drag/checkpoint.hpp"
#include "drag/correlation_gcn.hpp"
#include "drag/region_discovery.hpp"

namespace drag {

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t n_regions = 8;
  std::size_t cgl_hidden = 64;
  std::size_t key_dim = 16;

  std::size_t channels() const { return backbone.feature_channels(); }
  std::size_t side() const { return backbone.feature_side(); }
  std::size_t region_dim() const { return side() * side(); }
};

struct PipelineOutputs {
  Tensor fb;       // [B,C,H,W]
  Tensor fc;       // [B,1,H,W]
  Tensor cr_soft;  // [B,N,C]
  Tensor fw;       // [B,N,H,W]
  Tensor corr;     // [B,N,N] (undefined in no_gcn mode)
  Tensor fp;       // [B,N,H,W] (undefined in no_gcn mode)
  Tensor probs;    // [B,2]
};

// All trainable state of the pipeline plus the dataset-global hard clustering.
struct DragModel {
  ModelConfig config;
  BackboneParams backbone;
  HeadParams head;
  CglParams cgl;
  AttentionParams attention;
  GcnParams gcn;
  ClassifierParams classifier;
  ClusterAssignment cluster;  // empty until built from the pretrained backbone

  static DragModel init(const ModelConfig& config, std::uint64_t seed);

  PipelineOutputs forward(const Tensor& images, AblationMode mode = AblationMode::full) const;
  // Same tail starting from a precomputed feature map (used when the backbone is
  // frozen and features are cached).
  PipelineOutputs forward_from_features(const Tensor& fb, AblationMode mode) const;
  // Backbone pretraining path: pooled head probabilities.
  Tensor pretrain_probs(const Tensor& images) const;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  // Parameter groups the schedule refers to: "backbone", "head", "cgl", "gcn"
  // (attention + GCN weights + classifier).
  struct Group {
    std::string name;
    std::vector<Tensor> params;
    std::vector<bool> is_bias;
  };
  std::vector<Group> parameter_groups() const;

  Checkpoint state() const;  // parameters plus the cluster matrix
  void load_state(const Checkpoint& checkpoint);
};

}  // namespace drag
