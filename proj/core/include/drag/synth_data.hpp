#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "drag/tensor.hpp"

namespace drag {

enum class PatternKind { square, cross, stripes, disk, checker };

PatternKind pattern_kind_from_string(const std::string& name);
std::string to_string(PatternKind kind);

struct PatternSpec {
  PatternKind kind = PatternKind::square;
  std::size_t size = 6;       // bounding-box side in pixels
  double intensity = 0.9;     // in (0,1]
};

// Benchmark where the label depends on the *joint* presence of two pattern kinds:
// label 1 iff both rule patterns appear. A fixed fraction of label-0 images carry
// exactly one of the pair, so no single pattern separates the classes.
struct DatasetConfig {
  std::size_t image_side = 32;
  std::size_t n_train = 1500;
  std::size_t n_val = 700;
  std::size_t n_test = 1000;
  PatternSpec rule_a{PatternKind::square, 6, 0.9};
  PatternSpec rule_b{PatternKind::cross, 7, 0.8};
  double class_ratio = 3.0;  // public : private
  double noise_std = 0.05;
  std::uint64_t seed = 7;
};

enum class Split { train, val, test };

Split split_from_string(const std::string& name);
std::string to_string(Split split);

struct Dataset {
  std::size_t image_side = 0;
  Tensor images;  // [n,3,S,S], values in [0,1]
  std::vector<int> labels;
  std::vector<Split> splits;

  std::size_t size() const { return labels.size(); }
  std::vector<std::size_t> indices_of(Split split) const;
  Tensor gather_images(const std::vector<std::size_t>& indices) const;
  std::vector<int> gather_labels(const std::vector<std::size_t>& indices) const;
};

// Writes manifest.csv, genconfig.txt and one P6 pixmap per sample into `dir`,
// byte-identical for a given config. Returns the generated data (already 8-bit
// quantized, so a load of the directory reproduces it exactly).
Dataset generate_dataset(const DatasetConfig& config, const std::filesystem::path& dir);

Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace drag
