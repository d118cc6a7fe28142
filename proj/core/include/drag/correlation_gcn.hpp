#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "drag/rng.hpp"
#include "drag/tensor.hpp"

namespace drag {

// Self-attention over flattened region maps. Query/key project the d = H*W
// region vector to key_dim, value projects to n_regions, so the attention output
// is an N x N correlation matrix per image.
struct AttentionParams {
  Tensor wq, bq;  // [d,d_k], [d_k]
  Tensor wk, bk;  // [d,d_k], [d_k]
  Tensor wv, bv;  // [d,N],   [N]
  std::size_t feature_dim = 0;
  std::size_t key_dim = 0;
  std::size_t n_regions = 0;

  static AttentionParams init(std::size_t feature_dim, std::size_t key_dim,
                              std::size_t n_regions, Rng& rng);
  std::vector<Tensor> parameters() const;
};

struct AttentionResult {
  Tensor weights;      // softmax(Q K^T / sqrt(d_k)), rows sum to 1   [B,N,N]
  Tensor correlation;  // weights * V                                  [B,N,N]
};

AttentionResult attention_correlation_detail(const Tensor& fw, const AttentionParams& params);
// [B,N,H,W] -> correlation matrix [B,N,N]
Tensor attention_correlation(const Tensor& fw, const AttentionParams& params);

// Symmetric GCN normalization with self-loops: clamp negatives, symmetrize,
// add I, then D^-1/2 (A_s + I) D^-1/2 with degrees floored at 1e-6.
// Accepts [N,N] or [B,N,N].
Tensor prepare_adjacency(const Tensor& a);

// ReLU(adj_norm * X * theta); X is [B,N,d], theta [d,d].
Tensor gcn_layer(const Tensor& x, const Tensor& adj_norm, const Tensor& theta);

struct GcnParams {
  Tensor theta1, theta2;  // [d,d] each, near-identity at init

  static GcnParams init(std::size_t dim, Rng& rng);
  std::vector<Tensor> parameters() const;
};

// Two GCN layers sharing one normalized adjacency built from `a`.
// [B,N,H,W] -> [B,N,H,W]
Tensor propagate(const Tensor& fw, const Tensor& a, const GcnParams& params);

struct ClassifierParams {
  Tensor weight;  // [(N+1)*H*W, 2]
  Tensor bias;    // [2]

  static ClassifierParams init(std::size_t input_dim, Rng& rng);
  std::vector<Tensor> parameters() const;
};

// Concatenates the global map [B,1,H,W] with the region stack [B,N,H,W], flattens,
// applies one affine map and softmax. Column 1 is the private-class probability.
Tensor classify(const Tensor& fc, const Tensor& fp, const ClassifierParams& params);

enum class AblationMode { full, fixed_correlation, no_gcn, frozen_cgl };

AblationMode ablation_mode_from_string(const std::string& name);
std::string to_string(AblationMode mode);
const std::vector<AblationMode>& all_ablation_modes();

// N lines of N floats at 9 significant digits.
void write_correlation(const std::filesystem::path& path, const Tensor& a_single);

}  // namespace drag
