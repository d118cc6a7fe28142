#include "drag/config.hpp"

#include <fstream>
#include <sstream>

namespace drag {

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  if (out.empty()) throw FormatError("expected a comma-separated list of sizes, got '" + text + "'");
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    return static_cast<std::size_t>(std::stoull(value));
  } catch (const std::exception&) {
    throw FormatError("config key '" + key + "': expected an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    return std::stod(value);
  } catch (const std::exception&) {
    throw FormatError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw FormatError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

PatternSpec parse_pattern(const std::string& text) {
  const auto c1 = text.find(':');
  const auto c2 = text.find(':', c1 == std::string::npos ? c1 : c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos) {
    throw FormatError("pattern spec '" + text + "' is not of the form kind:size:intensity");
  }
  PatternSpec spec;
  spec.kind = pattern_kind_from_string(text.substr(0, c1));
  spec.size = parse_size("pattern size", text.substr(c1 + 1, c2 - c1 - 1));
  spec.intensity = parse_double("pattern intensity", text.substr(c2 + 1));
  if (spec.intensity <= 0.0 || spec.intensity > 1.0) {
    throw FormatError("pattern intensity must be in (0,1], got '" + text + "'");
  }
  return spec;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.backbone.input_channels = input_channels;
  mc.backbone.input_size = image_side;
  mc.backbone.stage_channels = stage_channels;
  mc.backbone.kernel_size = kernel_size;
  mc.backbone.downsample_per_stage = downsample_per_stage;
  mc.n_regions = n_regions;
  mc.cgl_hidden = cgl_hidden;
  mc.key_dim = key_dim;
  return mc;
}

DatasetConfig RunConfig::dataset_config() const {
  DatasetConfig dc;
  dc.image_side = image_side;
  dc.n_train = n_train;
  dc.n_val = n_val;
  dc.n_test = n_test;
  dc.rule_a = parse_pattern(rule_a);
  dc.rule_b = parse_pattern(rule_b);
  dc.class_ratio = class_ratio;
  dc.noise_std = noise_std;
  dc.seed = seed;
  return dc;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions to;
  to.batch_size = batch_size;
  to.lr_cgl = lr_cgl;
  to.lr_gcn = lr_gcn;
  to.lr_backbone = lr_backbone;
  to.lr_pretrain = lr_pretrain;
  to.adam.weight_decay = weight_decay;
  to.seed = seed;
  to.mode = ablation_mode_from_string(mode);
  to.epochs_pretrain_backbone = epochs_pretrain_backbone;
  to.epochs_pretrain_cgl = epochs_pretrain_cgl;
  to.epochs_cgl = epochs_cgl;
  to.epochs_gcn = epochs_gcn;
  to.epochs_gcn_backbone = epochs_gcn_backbone;
  to.epochs_cgl_again = epochs_cgl_again;
  to.epochs_finetune = epochs_finetune;
  return to;
}

std::vector<std::pair<std::string, std::string>> RunConfig::to_pairs() const {
  return {
      {"n_regions", std::to_string(n_regions)},
      {"key_dim", std::to_string(key_dim)},
      {"cgl_hidden", std::to_string(cgl_hidden)},
      {"input_channels", std::to_string(input_channels)},
      {"image_side", std::to_string(image_side)},
      {"kernel_size", std::to_string(kernel_size)},
      {"stage_channels", join_sizes(stage_channels)},
      {"downsample_per_stage", downsample_per_stage ? "true" : "false"},
      {"batch_size", std::to_string(batch_size)},
      {"lr_cgl", fmt(lr_cgl)},
      {"lr_gcn", fmt(lr_gcn)},
      {"lr_backbone", fmt(lr_backbone)},
      {"lr_pretrain", fmt(lr_pretrain)},
      {"weight_decay", fmt(weight_decay)},
      {"epochs_pretrain_backbone", std::to_string(epochs_pretrain_backbone)},
      {"epochs_pretrain_cgl", std::to_string(epochs_pretrain_cgl)},
      {"epochs_cgl", std::to_string(epochs_cgl)},
      {"epochs_gcn", std::to_string(epochs_gcn)},
      {"epochs_gcn_backbone", std::to_string(epochs_gcn_backbone)},
      {"epochs_cgl_again", std::to_string(epochs_cgl_again)},
      {"epochs_finetune", std::to_string(epochs_finetune)},
      {"n_train", std::to_string(n_train)},
      {"n_val", std::to_string(n_val)},
      {"n_test", std::to_string(n_test)},
      {"class_ratio", fmt(class_ratio)},
      {"noise_std", fmt(noise_std)},
      {"rule_a", rule_a},
      {"rule_b", rule_b},
      {"seed", std::to_string(seed)},
      {"mode", mode},
  };
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : to_pairs()) {
    out += k;
    out += "=";
    out += v;
    out += "\n";
  }
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "n_regions") n_regions = parse_size(key, value);
  else if (key == "key_dim") key_dim = parse_size(key, value);
  else if (key == "cgl_hidden") cgl_hidden = parse_size(key, value);
  else if (key == "input_channels") input_channels = parse_size(key, value);
  else if (key == "image_side") image_side = parse_size(key, value);
  else if (key == "kernel_size") kernel_size = parse_size(key, value);
  else if (key == "stage_channels") stage_channels = parse_sizes(value);
  else if (key == "downsample_per_stage") downsample_per_stage = parse_bool(key, value);
  else if (key == "batch_size") batch_size = parse_size(key, value);
  else if (key == "lr_cgl") lr_cgl = parse_double(key, value);
  else if (key == "lr_gcn") lr_gcn = parse_double(key, value);
  else if (key == "lr_backbone") lr_backbone = parse_double(key, value);
  else if (key == "lr_pretrain") lr_pretrain = parse_double(key, value);
  else if (key == "weight_decay") weight_decay = parse_double(key, value);
  else if (key == "epochs_pretrain_backbone") epochs_pretrain_backbone = parse_size(key, value);
  else if (key == "epochs_pretrain_cgl") epochs_pretrain_cgl = parse_size(key, value);
  else if (key == "epochs_cgl") epochs_cgl = parse_size(key, value);
  else if (key == "epochs_gcn") epochs_gcn = parse_size(key, value);
  else if (key == "epochs_gcn_backbone") epochs_gcn_backbone = parse_size(key, value);
  else if (key == "epochs_cgl_again") epochs_cgl_again = parse_size(key, value);
  else if (key == "epochs_finetune") epochs_finetune = parse_size(key, value);
  else if (key == "n_train") n_train = parse_size(key, value);
  else if (key == "n_val") n_val = parse_size(key, value);
  else if (key == "n_test") n_test = parse_size(key, value);
  else if (key == "class_ratio") class_ratio = parse_double(key, value);
  else if (key == "noise_std") noise_std = parse_double(key, value);
  else if (key == "rule_a") { parse_pattern(value); rule_a = value; }
  else if (key == "rule_b") { parse_pattern(value); rule_b = value; }
  else if (key == "seed") seed = parse_size(key, value);
  else if (key == "mode") { ablation_mode_from_string(value); mode = value; }
  else throw FormatError("unknown config key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("config file not found: " + path.string());
  RunConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config file " + path.string() + " line " + std::to_string(line_no) +
                        ": expected key=value");
    }
    config.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return config;
}

RunConfig RunConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  RunConfig config;
  for (const auto& [k, v] : pairs) config.set(k, v);
  return config;
}

}  // namespace drag
