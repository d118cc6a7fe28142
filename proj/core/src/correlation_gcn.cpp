#include "drag/correlation_gcn.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "drag/backbone.hpp"

namespace drag {

AttentionParams AttentionParams::init(std::size_t feature_dim, std::size_t key_dim,
                                      std::size_t n_regions, Rng& rng) {
  AttentionParams p;
  p.feature_dim = feature_dim;
  p.key_dim = key_dim;
  p.n_regions = n_regions;
  p.wq = Tensor::param({feature_dim, key_dim}, he_normal(feature_dim * key_dim, feature_dim, rng));
  p.bq = Tensor::param({key_dim}, std::vector<double>(key_dim, 0.0));
  p.wk = Tensor::param({feature_dim, key_dim}, he_normal(feature_dim * key_dim, feature_dim, rng));
  p.bk = Tensor::param({key_dim}, std::vector<double>(key_dim, 0.0));
  p.wv =
      Tensor::param({feature_dim, n_regions}, he_normal(feature_dim * n_regions, feature_dim, rng));
  p.bv = Tensor::param({n_regions}, std::vector<double>(n_regions, 0.0));
  return p;
}

std::vector<Tensor> AttentionParams::parameters() const { return {wq, bq, wk, bk, wv, bv}; }

AttentionResult attention_correlation_detail(const Tensor& fw, const AttentionParams& params) {
  if (fw.rank() != 4) {
    throw DimensionError("attention_correlation: expected [B,N,H,W], got " +
                         shape_str(fw.shape()));
  }
  const std::size_t b = fw.extent(0);
  const std::size_t n = fw.extent(1);
  const std::size_t d = fw.extent(2) * fw.extent(3);
  if (n != params.n_regions || d != params.feature_dim) {
    throw DimensionError("attention_correlation: " + shape_str(fw.shape()) +
                         " does not match params (N=" + std::to_string(params.n_regions) +
                         ", d=" + std::to_string(params.feature_dim) + ")");
  }
  Tensor x = reshape(fw, {b, n, d});
  Tensor q = add_rowvec(matmul(x, params.wq), params.bq);  // [B,N,d_k]
  Tensor k = add_rowvec(matmul(x, params.wk), params.bk);  // [B,N,d_k]
  Tensor v = add_rowvec(matmul(x, params.wv), params.bv);  // [B,N,N]
  Tensor scores = scale(matmul(q, transpose_last2(k)),
                        1.0 / std::sqrt(static_cast<double>(params.key_dim)));
  AttentionResult out;
  out.weights = softmax(scores, 2);
  out.correlation = matmul(out.weights, v);
  return out;
}

Tensor attention_correlation(const Tensor& fw, const AttentionParams& params) {
  return attention_correlation_detail(fw, params).correlation;
}

Tensor prepare_adjacency(const Tensor& a) {
  const bool batched = a.rank() == 3;
  if (a.rank() != 2 && a.rank() != 3) {
    throw DimensionError("prepare_adjacency: expected [N,N] or [B,N,N], got " +
                         shape_str(a.shape()));
  }
  const std::size_t b = batched ? a.extent(0) : 1;
  const std::size_t n = a.extent(batched ? 1 : 0);
  if (a.extent(batched ? 2 : 1) != n) {
    throw DimensionError("prepare_adjacency: matrix must be square, got " + shape_str(a.shape()));
  }
  Tensor x = batched ? a : reshape(a, {1, n, n});

  Tensor clamped = relu(x);
  Tensor sym = scale(add(clamped, transpose_last2(clamped)), 0.5);
  std::vector<double> eye(b * n * n, 0.0);
  for (std::size_t bb = 0; bb < b; ++bb)
    for (std::size_t i = 0; i < n; ++i) eye[(bb * n + i) * n + i] = 1.0;
  Tensor with_loops = add(sym, Tensor::from({b, n, n}, std::move(eye)));

  Tensor degrees = sum(with_loops, 2);                      // [B,N]
  Tensor floored = add(relu(sub(degrees, 1e-6)), 1e-6);     // max(deg, 1e-6)
  Tensor inv_root = rsqrt(floored);                         // [B,N]
  Tensor outer = matmul(reshape(inv_root, {b, n, 1}), reshape(inv_root, {b, 1, n}));
  Tensor norm = mul(with_loops, outer);
  return batched ? norm : reshape(norm, {n, n});
}

Tensor gcn_layer(const Tensor& x, const Tensor& adj_norm, const Tensor& theta) {
  return relu(matmul(matmul(adj_norm, x), theta));
}

GcnParams GcnParams::init(std::size_t dim, Rng& rng) {
  auto near_identity = [&] {
    const double stddev = 0.1 / std::sqrt(static_cast<double>(dim));
    std::vector<double> m(dim * dim);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) {
        m[i * dim + j] = (i == j ? 1.0 : 0.0) + rng.normal(0.0, stddev);
      }
    return Tensor::param({dim, dim}, std::move(m));
  };
  GcnParams p;
  p.theta1 = near_identity();
  p.theta2 = near_identity();
  return p;
}

std::vector<Tensor> GcnParams::parameters() const { return {theta1, theta2}; }

Tensor propagate(const Tensor& fw, const Tensor& a, const GcnParams& params) {
  if (fw.rank() != 4) {
    throw DimensionError("propagate: expected [B,N,H,W], got " + shape_str(fw.shape()));
  }
  const std::size_t b = fw.extent(0);
  const std::size_t n = fw.extent(1);
  const std::size_t h = fw.extent(2);
  const std::size_t w = fw.extent(3);
  Tensor adj = prepare_adjacency(a);
  Tensor x = reshape(fw, {b, n, h * w});
  x = gcn_layer(x, adj, params.theta1);
  x = gcn_layer(x, adj, params.theta2);
  return reshape(x, {b, n, h, w});
}

ClassifierParams ClassifierParams::init(std::size_t input_dim, Rng& rng) {
  ClassifierParams p;
  p.weight = Tensor::param({input_dim, 2}, he_normal(input_dim * 2, input_dim, rng));
  p.bias = Tensor::param({2}, {0.0, 0.0});
  return p;
}

std::vector<Tensor> ClassifierParams::parameters() const { return {weight, bias}; }

Tensor classify(const Tensor& fc, const Tensor& fp, const ClassifierParams& params) {
  if (fc.rank() != 4 || fp.rank() != 4 || fc.extent(0) != fp.extent(0) ||
      fc.extent(2) != fp.extent(2) || fc.extent(3) != fp.extent(3)) {
    throw DimensionError("classify: incompatible inputs " + shape_str(fc.shape()) + " and " +
                         shape_str(fp.shape()));
  }
  const std::size_t b = fc.extent(0);
  Tensor stacked = concat({fc, fp}, 1);  // [B,N+1,H,W]
  const std::size_t flat = stacked.numel() / b;
  if (params.weight.extent(0) != flat) {
    throw DimensionError("classify: classifier expects input width " +
                         std::to_string(params.weight.extent(0)) + ", got " +
                         std::to_string(flat));
  }
  Tensor logits = add_rowvec(matmul(reshape(stacked, {b, flat}), params.weight), params.bias);
  return softmax(logits, 1);
}

AblationMode ablation_mode_from_string(const std::string& name) {
  if (name == "full") return AblationMode::full;
  if (name == "fixed_correlation") return AblationMode::fixed_correlation;
  if (name == "no_gcn") return AblationMode::no_gcn;
  if (name == "frozen_cgl") return AblationMode::frozen_cgl;
  throw ContractError("unknown ablation mode '" + name +
                      "' (expected full|fixed_correlation|no_gcn|frozen_cgl)");
}

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::full: return "full";
    case AblationMode::fixed_correlation: return "fixed_correlation";
    case AblationMode::no_gcn: return "no_gcn";
    case AblationMode::frozen_cgl: return "frozen_cgl";
  }
  throw ContractError("unknown ablation mode value");
}

const std::vector<AblationMode>& all_ablation_modes() {
  static const std::vector<AblationMode> modes = {
      AblationMode::full, AblationMode::fixed_correlation, AblationMode::no_gcn,
      AblationMode::frozen_cgl};
  return modes;
}

void write_correlation(const std::filesystem::path& path, const Tensor& a_single) {
  if (a_single.rank() != 2 || a_single.extent(0) != a_single.extent(1)) {
    throw DimensionError("write_correlation: expected [N,N], got " + shape_str(a_single.shape()));
  }
  std::ofstream out(path);
  if (!out) throw FormatError("write_correlation: cannot open " + path.string());
  const std::size_t n = a_single.extent(0);
  const double* v = a_single.values().data();
  char buf[64];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", v[i * n + j]);
      out << (j ? " " : "") << buf;
    }
    out << "\n";
  }
}

}  // namespace drag
