#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "drag/errors.hpp"

namespace drag {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t epoch = 0;  // tape epoch the node was recorded under (0 = leaf)
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  std::size_t numel() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

// N-dimensional array of 64-bit reals with optional reverse-mode gradient tracking.
// Value-semantic handle: copies share the underlying node. The computation graph is
// a thread-local tape rebuilt on every forward pass; backward() sweeps and clears it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor from(const Shape& shape, std::vector<double> values);
  static Tensor scalar(double value);
  // Trainable leaf: requires_grad = true.
  static Tensor param(const Shape& shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node()->shape; }
  std::size_t rank() const { return node()->shape.size(); }
  std::size_t numel() const { return node()->values.size(); }
  std::size_t extent(std::size_t axis) const;

  const std::vector<double>& values() const { return node()->values; }
  // In-place mutation is for leaves only (optimizer updates between graphs).
  std::vector<double>& values_mut();

  bool requires_grad() const { return node()->requires_grad; }
  void set_requires_grad(bool v);

  bool has_grad() const { return node()->grad.size() == node()->values.size(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Scalar extraction; ContractError unless numel() == 1.
  double item() const;

  // Value copy detached from the graph (requires_grad = false).
  Tensor detached() const;

  // Exact check that every entry is finite; throws ContractError naming `context`.
  void validate_finite(const std::string& context) const;

  detail::NodePtr node_ptr() const { return node_; }
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

 private:
  detail::Node* node() const {
    if (!node_) throw ContractError("operation on an undefined Tensor");
    return node_.get();
  }
  detail::NodePtr node_;
};

// --- graph control ------------------------------------------------------------

// Reverse topological sweep from a scalar loss. Gradients accumulate across all uses
// of a tensor within the sweep and into leaf .grad buffers across sweeps (call
// zero_grad between optimizer steps). The tape is consumed: a second backward on the
// same forward pass throws StaleGraphError.
void backward(const Tensor& loss);

// Drops all recorded operations without sweeping (forward-only evaluation).
void clear_graph();

// While alive, newly created ops are not recorded and outputs do not require grad.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

void zero_grad(const std::vector<Tensor>& params);

namespace detail {
// Registers a custom operation node. `backward` receives the output node with its
// grad populated and must accumulate into parents' grads (after ensure_grad()).
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               std::function<void(Node&)> backward, const char* op_name);
bool grad_enabled();
}  // namespace detail

// --- differentiable operations --------------------------------------------------

// Matrix product. Accepts [m,k]x[k,n], batched [B,m,k]x[B,k,n], and a batched
// left with shared right [B,m,k]x[k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Cross-correlation with zero padding. input is [Cin,H,W] or [B,Cin,H,W], kernels
// [Cout,Cin,k,k], optional bias [Cout]. Output spatial side ⌊(S+2p-k)/stride⌋+1.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const std::optional<Tensor>& bias,
              std::size_t stride = 1, std::size_t padding = 0);
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride = 1,
              std::size_t padding = 0);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);
Tensor log(const Tensor& x);
Tensor rsqrt(const Tensor& x);

// Binary elementwise ops; equal shapes, or one operand a 1-element scalar tensor.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, double b);
Tensor sub(double a, const Tensor& b);
Tensor mul(const Tensor& a, double b);
Tensor scale(const Tensor& x, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }

// Adds a rank-1 vector across the last axis (affine-layer bias).
Tensor add_rowvec(const Tensor& x, const Tensor& rowvec);

// Numerically stable (max-subtracted) softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Max reduction; ties resolve to the first index in row-major order. The gradient
// routes to the argmax positions.
struct MaxResult {
  Tensor values;
  std::vector<std::size_t> indices;  // position along the reduced axis (flat for _all)
};
MaxResult max_with_argmax(const Tensor& x, std::size_t axis);
MaxResult max_all_with_argmax(const Tensor& x);

Tensor reshape(const Tensor& x, const Shape& new_shape);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose_last2(const Tensor& x);
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

}  // namespace drag
