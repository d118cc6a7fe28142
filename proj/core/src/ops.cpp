#include <algorithm>
#include <cmath>
#include <cstring>

#include "drag/tensor.hpp"

namespace drag {

namespace {

using detail::Node;
using detail::make_op;

void accumulate(Node& parent, const std::vector<double>& contrib) {
  parent.ensure_grad();
  double* g = parent.grad.data();
  for (std::size_t i = 0; i < contrib.size(); ++i) g[i] += contrib[i];
}

// outer * n * inner decomposition around `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

Tensor unary_map(const Tensor& x, const char* name, double (*fwd)(double),
                 double (*dydx)(double x, double y)) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  auto xn = x.node_ptr();
  return make_op(
      x.shape(), std::move(out), {x},
      [xn, dydx](Node& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double* xv = xn->values.data();
        const double* yv = n.values.data();
        const double* g = n.grad.data();
        double* gx = xn->grad.data();
        for (std::size_t i = 0; i < n.values.size(); ++i) gx[i] += g[i] * dydx(xv[i], yv[i]);
      },
      name);
}

enum class BinOp { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  const auto& av = a.values();
  const auto& bv = b.values();
  const bool a_scalar = av.size() == 1;
  const bool b_scalar = bv.size() == 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw DimensionError(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) +
                         " (only scalar broadcasting is supported)");
  }
  const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  const std::size_t n = std::max(av.size(), bv.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_scalar ? 0 : i];
    const double y = bv[b_scalar ? 0 : i];
    out[i] = op == BinOp::Add ? x + y : op == BinOp::Sub ? x - y : x * y;
  }
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op(
      out_shape, std::move(out), {a, b},
      [an, bn, op, a_scalar, b_scalar](Node& n) {
        const double* g = n.grad.data();
        const std::size_t count = n.values.size();
        if (an->requires_grad) {
          an->ensure_grad();
          double* ga = an->grad.data();
          for (std::size_t i = 0; i < count; ++i) {
            double d = g[i];
            if (op == BinOp::Mul) d *= bn->values[b_scalar ? 0 : i];
            ga[a_scalar ? 0 : i] += d;
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          double* gb = bn->grad.data();
          for (std::size_t i = 0; i < count; ++i) {
            double d = g[i];
            if (op == BinOp::Mul) d *= an->values[a_scalar ? 0 : i];
            if (op == BinOp::Sub) d = -d;
            gb[b_scalar ? 0 : i] += d;
          }
        }
      },
      name);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// --- elementwise -------------------------------------------------------------

Tensor relu(const Tensor& x) {
  return unary_map(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_map(
      x, "sigmoid", [](double v) { return stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor square(const Tensor& x) {
  return unary_map(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor log(const Tensor& x) {
  return unary_map(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor rsqrt(const Tensor& x) {
  return unary_map(
      x, "rsqrt", [](double v) { return 1.0 / std::sqrt(v); },
      [](double, double y) { return -0.5 * y * y * y; });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul, "mul"); }
Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor sub(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor sub(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
Tensor mul(const Tensor& a, double b) { return scale(a, b); }

Tensor scale(const Tensor& x, double c) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c;
  auto xn = x.node_ptr();
  return make_op(
      x.shape(), std::move(out), {x},
      [xn, c](Node& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < n.values.size(); ++i) xn->grad[i] += c * n.grad[i];
      },
      "scale");
}

Tensor add_rowvec(const Tensor& x, const Tensor& rowvec) {
  if (rowvec.rank() != 1) {
    throw DimensionError("add_rowvec: bias must be rank 1, got " + shape_str(rowvec.shape()));
  }
  const std::size_t cols = x.shape().back();
  if (rowvec.numel() != cols) {
    throw DimensionError("add_rowvec: bias length " + std::to_string(rowvec.numel()) +
                         " does not match last extent of " + shape_str(x.shape()));
  }
  const auto& xv = x.values();
  const auto& bv = rowvec.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + bv[i % cols];
  auto xn = x.node_ptr();
  auto bn = rowvec.node_ptr();
  return make_op(
      x.shape(), std::move(out), {x, rowvec},
      [xn, bn, cols](Node& n) {
        const double* g = n.grad.data();
        if (xn->requires_grad) accumulate(*xn, n.grad);
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < n.values.size(); ++i) bn->grad[i % cols] += g[i];
        }
      },
      "add_rowvec");
}

// --- matmul ------------------------------------------------------------------

namespace {

// c[m,n] += a[m,k] * b[k,n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[k,m]^T * b[k,n]
void gemm_at_b(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
               std::size_t n) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* arow = a + kk * m;
    const double* brow = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,k] += a[m,n] * b[k,n]^T
void gemm_a_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[kk] += acc;
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t ra = a.rank();
  const std::size_t rb = b.rank();
  const bool batched_a = ra == 3;
  const bool batched_b = rb == 3;
  if (!((ra == 2 && rb == 2) || (ra == 3 && rb == 2) || (ra == 3 && rb == 3))) {
    throw DimensionError("matmul: unsupported ranks " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t B = batched_a ? a.extent(0) : 1;
  const std::size_t m = a.extent(ra - 2);
  const std::size_t k = a.extent(ra - 1);
  const std::size_t kb = b.extent(rb - 2);
  const std::size_t n = b.extent(rb - 1);
  if (k != kb || (batched_b && b.extent(0) != B)) {
    throw DimensionError("matmul: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not compose");
  }
  Shape out_shape = batched_a ? Shape{B, m, n} : Shape{m, n};
  std::vector<double> out(B * m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t bb = 0; bb < B; ++bb) {
    gemm_acc(av + bb * m * k, bv + (batched_b ? bb * k * n : 0), out.data() + bb * m * n, m, k, n);
  }
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op(
      std::move(out_shape), std::move(out), {a, b},
      [an, bn, B, m, k, n, batched_b](Node& node) {
        const double* g = node.grad.data();
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t bb = 0; bb < B; ++bb) {
            // dA = G * B^T
            gemm_a_bt(g + bb * m * n, bn->values.data() + (batched_b ? bb * k * n : 0),
                      an->grad.data() + bb * m * k, m, n, k);
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t bb = 0; bb < B; ++bb) {
            // dB = A^T * G (accumulated over the batch when B is shared)
            gemm_at_b(an->values.data() + bb * m * k, g + bb * m * n,
                      bn->grad.data() + (batched_b ? bb * k * n : 0), m, k, n);
          }
        }
      },
      "matmul");
}

// --- conv2d ------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding) {
  return conv2d(input, kernels, std::nullopt, stride, padding);
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const std::optional<Tensor>& bias,
              std::size_t stride, std::size_t padding) {
  const bool batched = input.rank() == 4;
  if (input.rank() != 3 && input.rank() != 4) {
    throw DimensionError("conv2d: input must be [Cin,H,W] or [B,Cin,H,W], got " +
                         shape_str(input.shape()));
  }
  if (kernels.rank() != 4) {
    throw DimensionError("conv2d: kernels must be [Cout,Cin,k,k], got " +
                         shape_str(kernels.shape()));
  }
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t B = batched ? input.extent(0) : 1;
  const std::size_t Cin = input.extent(batched ? 1 : 0);
  const std::size_t H = input.extent(batched ? 2 : 1);
  const std::size_t W = input.extent(batched ? 3 : 2);
  const std::size_t Cout = kernels.extent(0);
  const std::size_t kh = kernels.extent(2);
  const std::size_t kw = kernels.extent(3);
  if (kernels.extent(1) != Cin) {
    throw DimensionError("conv2d: kernel input channels " + shape_str(kernels.shape()) +
                         " do not match input " + shape_str(input.shape()));
  }
  if (kh > H + 2 * padding || kw > W + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(kernels.shape()) +
                         " larger than padded input " + shape_str(input.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->numel() != Cout)) {
    throw DimensionError("conv2d: bias must be [Cout], got " + shape_str(bias->shape()));
  }
  const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;

  const double* in = input.values().data();
  const double* kv = kernels.values().data();
  std::vector<double> out(B * Cout * Ho * Wo, 0.0);
  if (bias) {
    const double* bvals = bias->values().data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t co = 0; co < Cout; ++co) {
        double* dst = out.data() + (b * Cout + co) * Ho * Wo;
        std::fill(dst, dst + Ho * Wo, bvals[co]);
      }
  }

  const auto p = static_cast<std::ptrdiff_t>(padding);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  // Valid output range for a kernel offset t: 0 <= o*s + t - p < extent.
  auto out_range = [p, s](std::ptrdiff_t t, std::ptrdiff_t extent,
                          std::ptrdiff_t limit) -> std::pair<std::ptrdiff_t, std::ptrdiff_t> {
    std::ptrdiff_t lo = p - t <= 0 ? 0 : (p - t + s - 1) / s;
    std::ptrdiff_t hi = (extent - 1 + p - t) / s;
    if (hi > limit - 1) hi = limit - 1;
    return {lo, hi};
  };

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Cout; ++co) {
      double* dst = out.data() + (b * Cout + co) * Ho * Wo;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const double* src = in + (b * Cin + ci) * H * W;
        const double* w = kv + (co * Cin + ci) * kh * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          auto [oy_lo, oy_hi] = out_range(static_cast<std::ptrdiff_t>(ky),
                                          static_cast<std::ptrdiff_t>(H),
                                          static_cast<std::ptrdiff_t>(Ho));
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double wv = w[ky * kw + kx];
            if (wv == 0.0) continue;
            auto [ox_lo, ox_hi] = out_range(static_cast<std::ptrdiff_t>(kx),
                                            static_cast<std::ptrdiff_t>(W),
                                            static_cast<std::ptrdiff_t>(Wo));
            for (std::ptrdiff_t oy = oy_lo; oy <= oy_hi; ++oy) {
              const std::ptrdiff_t iy = oy * s + static_cast<std::ptrdiff_t>(ky) - p;
              const double* srow = src + iy * static_cast<std::ptrdiff_t>(W);
              double* drow = dst + oy * static_cast<std::ptrdiff_t>(Wo);
              for (std::ptrdiff_t ox = ox_lo; ox <= ox_hi; ++ox) {
                drow[ox] += wv * srow[ox * s + static_cast<std::ptrdiff_t>(kx) - p];
              }
            }
          }
        }
      }
    }
  }

  Shape out_shape = batched ? Shape{B, Cout, Ho, Wo} : Shape{Cout, Ho, Wo};
  std::vector<Tensor> parents = {input, kernels};
  if (bias) parents.push_back(*bias);
  auto in_node = input.node_ptr();
  auto k_node = kernels.node_ptr();
  detail::NodePtr b_node = bias ? bias->node_ptr() : nullptr;

  return make_op(
      std::move(out_shape), std::move(out), std::move(parents),
      [=](Node& node) {
        const double* g = node.grad.data();
        const bool need_in = in_node->requires_grad;
        const bool need_k = k_node->requires_grad;
        if (need_in) in_node->ensure_grad();
        if (need_k) k_node->ensure_grad();
        if (b_node && b_node->requires_grad) {
          b_node->ensure_grad();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Cout; ++co) {
              const double* grow = g + (b * Cout + co) * Ho * Wo;
              double acc = 0.0;
              for (std::size_t i = 0; i < Ho * Wo; ++i) acc += grow[i];
              b_node->grad[co] += acc;
            }
        }
        if (!need_in && !need_k) return;
        const double* in_v = in_node->values.data();
        const double* k_v = k_node->values.data();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t co = 0; co < Cout; ++co) {
            const double* grow = g + (b * Cout + co) * Ho * Wo;
            for (std::size_t ci = 0; ci < Cin; ++ci) {
              const double* src = in_v + (b * Cin + ci) * H * W;
              double* gin = need_in ? in_node->grad.data() + (b * Cin + ci) * H * W : nullptr;
              const double* w = k_v + (co * Cin + ci) * kh * kw;
              double* gw = need_k ? k_node->grad.data() + (co * Cin + ci) * kh * kw : nullptr;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                auto [oy_lo, oy_hi] = out_range(static_cast<std::ptrdiff_t>(ky),
                                                static_cast<std::ptrdiff_t>(H),
                                                static_cast<std::ptrdiff_t>(Ho));
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  auto [ox_lo, ox_hi] = out_range(static_cast<std::ptrdiff_t>(kx),
                                                  static_cast<std::ptrdiff_t>(W),
                                                  static_cast<std::ptrdiff_t>(Wo));
                  const double wv = w[ky * kw + kx];
                  double wacc = 0.0;
                  for (std::ptrdiff_t oy = oy_lo; oy <= oy_hi; ++oy) {
                    const std::ptrdiff_t iy = oy * s + static_cast<std::ptrdiff_t>(ky) - p;
                    const double* srow = src + iy * static_cast<std::ptrdiff_t>(W);
                    double* girow = need_in ? gin + iy * static_cast<std::ptrdiff_t>(W) : nullptr;
                    const double* grow2 = grow + oy * static_cast<std::ptrdiff_t>(Wo);
                    for (std::ptrdiff_t ox = ox_lo; ox <= ox_hi; ++ox) {
                      const std::ptrdiff_t ix = ox * s + static_cast<std::ptrdiff_t>(kx) - p;
                      const double gv = grow2[ox];
                      wacc += gv * srow[ix];
                      if (need_in) girow[ix] += wv * gv;
                    }
                  }
                  if (need_k) gw[ky * kw + kx] += wacc;
                }
              }
            }
          }
        }
      },
      "conv2d");
}

// --- softmax -----------------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double mx = xv[base];
      for (std::size_t i = 1; i < sp.n; ++i) mx = std::max(mx, xv[base + i * sp.inner]);
      double denom = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) {
        const double e = std::exp(xv[base + i * sp.inner] - mx);
        out[base + i * sp.inner] = e;
        denom += e;
      }
      for (std::size_t i = 0; i < sp.n; ++i) out[base + i * sp.inner] /= denom;
    }
  }
  auto xn = x.node_ptr();
  return make_op(
      x.shape(), std::move(out), {x},
      [xn, sp](Node& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double* y = n.values.data();
        const double* g = n.grad.data();
        double* gx = xn->grad.data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.n * sp.inner + in;
            double dot = 0.0;
            for (std::size_t i = 0; i < sp.n; ++i) {
              const std::size_t idx = base + i * sp.inner;
              dot += g[idx] * y[idx];
            }
            for (std::size_t i = 0; i < sp.n; ++i) {
              const std::size_t idx = base + i * sp.inner;
              gx[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      },
      "softmax");
}

// --- reductions ----------------------------------------------------------------

namespace {

Tensor reduce_sum_impl(const Tensor& x, std::size_t axis, bool take_mean) {
  const auto sp = split_axis(x.shape(), axis);
  const auto& xv = x.values();
  const double denom = take_mean ? static_cast<double>(sp.n) : 1.0;
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.n; ++i) {
      const double* row = xv.data() + (o * sp.n + i) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t in = 0; in < sp.inner; ++in) dst[in] += row[in];
    }
  if (take_mean)
    for (auto& v : out) v /= denom;
  auto xn = x.node_ptr();
  return make_op(
      drop_axis(x.shape(), axis), std::move(out), {x},
      [xn, sp, denom](Node& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double* g = n.grad.data();
        double* gx = xn->grad.data();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.n; ++i) {
            double* row = gx + (o * sp.n + i) * sp.inner;
            const double* grow = g + o * sp.inner;
            for (std::size_t in = 0; in < sp.inner; ++in) row[in] += grow[in] / denom;
          }
      },
      take_mean ? "mean" : "sum");
}

}  // namespace

Tensor sum(const Tensor& x, std::size_t axis) { return reduce_sum_impl(x, axis, false); }
Tensor mean(const Tensor& x, std::size_t axis) { return reduce_sum_impl(x, axis, true); }

Tensor sum_all(const Tensor& x) {
  const auto& xv = x.values();
  double acc = 0.0;
  for (double v : xv) acc += v;
  auto xn = x.node_ptr();
  return make_op(
      {1}, {acc}, {x},
      [xn](Node& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double g = n.grad[0];
        for (auto& gv : xn->grad) gv += g;
      },
      "sum_all");
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

MaxResult max_with_argmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<double> out(sp.outer * sp.inner);
  auto indices = std::make_shared<std::vector<std::size_t>>(sp.outer * sp.inner, 0);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double best = xv[base];
      std::size_t best_i = 0;
      for (std::size_t i = 1; i < sp.n; ++i) {
        const double v = xv[base + i * sp.inner];
        if (v > best) {
          best = v;
          best_i = i;
        }
      }
      out[o * sp.inner + in] = best;
      (*indices)[o * sp.inner + in] = best_i;
    }
  }
  auto xn = x.node_ptr();
  Tensor values = make_op(
      drop_axis(x.shape(), axis), std::move(out), {x},
      [xn, sp, indices](Node& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double* g = n.grad.data();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t flat = o * sp.inner + in;
            xn->grad[(o * sp.n + (*indices)[flat]) * sp.inner + in] += g[flat];
          }
      },
      "max");
  return {values, *indices};
}

MaxResult max_all_with_argmax(const Tensor& x) {
  const auto& xv = x.values();
  double best = xv[0];
  std::size_t best_i = 0;
  for (std::size_t i = 1; i < xv.size(); ++i) {
    if (xv[i] > best) {
      best = xv[i];
      best_i = i;
    }
  }
  auto xn = x.node_ptr();
  Tensor values = make_op(
      {1}, {best}, {x},
      [xn, best_i](Node& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        xn->grad[best_i] += n.grad[0];
      },
      "max_all");
  return {values, {best_i}};
}

// --- shape ops -----------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
  }
  auto xn = x.node_ptr();
  return make_op(
      new_shape, x.values(), {x},
      [xn](Node& n) {
        if (!xn->requires_grad) return;
        accumulate(*xn, n.grad);
      },
      "reshape");
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("transpose_last2: rank 2 or 3 required, got " + shape_str(x.shape()));
  }
  const std::size_t B = x.rank() == 3 ? x.extent(0) : 1;
  const std::size_t m = x.extent(x.rank() - 2);
  const std::size_t n = x.extent(x.rank() - 1);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < B; ++b) {
    const double* src = xv.data() + b * m * n;
    double* dst = out.data() + b * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  Shape out_shape = x.shape();
  std::swap(out_shape[x.rank() - 2], out_shape[x.rank() - 1]);
  auto xn = x.node_ptr();
  return make_op(
      std::move(out_shape), std::move(out), {x},
      [xn, B, m, n](Node& node) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double* g = node.grad.data();
        for (std::size_t b = 0; b < B; ++b) {
          const double* gsrc = g + b * m * n;
          double* gdst = xn->grad.data() + b * m * n;
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < m; ++i) gdst[i * n + j] += gsrc[j * m + i];
        }
      },
      "transpose");
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) throw ContractError("concat: no inputs");
  const Shape& first = xs[0].shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
  }
  std::size_t axis_total = 0;
  for (const auto& t : xs) {
    if (t.rank() != first.size()) {
      throw DimensionError("concat: rank mismatch between " + shape_str(first) + " and " +
                           shape_str(t.shape()));
    }
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && t.shape()[i] != first[i]) {
        throw DimensionError("concat: shapes " + shape_str(first) + " and " +
                             shape_str(t.shape()) + " differ off-axis");
      }
    }
    axis_total += t.shape()[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = axis_total;

  const auto sp_out = split_axis(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& t : xs) {
    offsets.push_back(offset);
    const std::size_t tn = t.shape()[axis];
    const double* src = t.values().data();
    for (std::size_t o = 0; o < sp_out.outer; ++o) {
      std::memcpy(out.data() + (o * sp_out.n + offset) * sp_out.inner,
                  src + o * tn * sp_out.inner, tn * sp_out.inner * sizeof(double));
    }
    offset += tn;
  }
  std::vector<detail::NodePtr> pn;
  std::vector<std::size_t> pext;
  for (const auto& t : xs) {
    pn.push_back(t.node_ptr());
    pext.push_back(t.shape()[axis]);
  }
  return make_op(
      std::move(out_shape), std::move(out), xs,
      [pn, pext, offsets, sp_out](Node& node) {
        const double* g = node.grad.data();
        for (std::size_t pi = 0; pi < pn.size(); ++pi) {
          if (!pn[pi]->requires_grad) continue;
          pn[pi]->ensure_grad();
          double* gp = pn[pi]->grad.data();
          const std::size_t tn = pext[pi];
          for (std::size_t o = 0; o < sp_out.outer; ++o) {
            const double* gsrc = g + (o * sp_out.n + offsets[pi]) * sp_out.inner;
            double* gdst = gp + o * tn * sp_out.inner;
            for (std::size_t i = 0; i < tn * sp_out.inner; ++i) gdst[i] += gsrc[i];
          }
        }
      },
      "concat");
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto sp = split_axis(x.shape(), axis);
  if (length == 0 || start + length > sp.n) {
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of bounds for axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(shape_numel(out_shape));
  const double* src = x.values().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::memcpy(out.data() + o * length * sp.inner, src + (o * sp.n + start) * sp.inner,
                length * sp.inner * sizeof(double));
  }
  auto xn = x.node_ptr();
  return make_op(
      std::move(out_shape), std::move(out), {x},
      [xn, sp, start, length](Node& node) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double* g = node.grad.data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          double* gdst = xn->grad.data() + (o * sp.n + start) * sp.inner;
          const double* gsrc = g + o * length * sp.inner;
          for (std::size_t i = 0; i < length * sp.inner; ++i) gdst[i] += gsrc[i];
        }
      },
      "narrow");
}

}  // namespace drag
