#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "drag/model.hpp"
#include "drag/synth_data.hpp"
#include "drag/training.hpp"

namespace drag {

// Every tunable across the pipeline, flat so it can round-trip through key=value
// text (config files, checkpoint metadata, genconfig.txt). Flags override file
// values; artifacts carry the full config so they are self-describing.
struct RunConfig {
  // model
  std::size_t n_regions = 8;
  std::size_t key_dim = 16;
  std::size_t cgl_hidden = 64;
  std::size_t input_channels = 3;
  std::size_t image_side = 32;
  std::size_t kernel_size = 3;
  std::vector<std::size_t> stage_channels = {16, 32, 32};
  bool downsample_per_stage = true;
  // training
  std::size_t batch_size = 32;
  double lr_cgl = 1e-3;
  double lr_gcn = 1e-3;
  double lr_backbone = 1e-5;
  double lr_pretrain = 1e-3;
  double weight_decay = 1e-7;
  std::size_t epochs_pretrain_backbone = 10;
  std::size_t epochs_pretrain_cgl = 10;
  std::size_t epochs_cgl = 5;
  std::size_t epochs_gcn = 10;
  std::size_t epochs_gcn_backbone = 10;
  std::size_t epochs_cgl_again = 0;
  std::size_t epochs_finetune = 10;
  // data
  std::size_t n_train = 1500;
  std::size_t n_val = 700;
  std::size_t n_test = 1000;
  double class_ratio = 3.0;
  double noise_std = 0.05;
  std::string rule_a = "square:6:0.9";
  std::string rule_b = "cross:7:0.8";
  // run
  std::uint64_t seed = 7;
  std::string mode = "full";

  ModelConfig model_config() const;
  DatasetConfig dataset_config() const;
  TrainOptions train_options() const;

  // key=value lines covering every field, in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  std::string serialize() const;

  void set(const std::string& key, const std::string& value);  // FormatError on unknown key
  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
};

PatternSpec parse_pattern(const std::string& text);  // "kind:size:intensity"

}  // namespace drag
