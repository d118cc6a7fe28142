#include "drag/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace drag {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

namespace detail {

namespace {

struct Tape {
  std::vector<NodePtr> nodes;
  std::uint64_t epoch = 1;
  bool swept = false;
};

Tape& tape() {
  thread_local Tape t;
  return t;
}

thread_local int no_grad_depth = 0;

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match value count " +
                         std::to_string(values.size()));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  return n;
}

void clear_tape_nodes(Tape& t) {
  // Sever edges so that user-held handles keep their values but drop the subgraph.
  for (auto& n : t.nodes) {
    n->backward_fn = nullptr;
    n->parents.clear();
    n->is_leaf = true;
  }
  t.nodes.clear();
  t.epoch++;
  t.swept = false;
}

}  // namespace

bool grad_enabled() { return no_grad_depth == 0; }

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               std::function<void(Node&)> backward, const char* op_name) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError(std::string(op_name) + ": output shape " + shape_str(shape) +
                         " does not match value count " + std::to_string(values.size()));
  }
  bool track = false;
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p.defined() && p.requires_grad()) {
        track = true;
        break;
      }
    }
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->op = op_name;
  if (track) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->epoch = tape().epoch;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward_fn = std::move(backward);
    tape().nodes.push_back(n);
  }
  return Tensor(n);
}

}  // namespace detail

// --- Tensor -----------------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape) {
  return Tensor(detail::make_leaf(shape, std::vector<double>(shape_numel(shape), 0.0), false));
}

Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(detail::make_leaf(shape, std::vector<double>(shape_numel(shape), value), false));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
  return Tensor(detail::make_leaf(shape, std::move(values), false));
}

Tensor Tensor::scalar(double value) {
  return Tensor(detail::make_leaf({1}, {value}, false));
}

Tensor Tensor::param(const Shape& shape, std::vector<double> values) {
  return Tensor(detail::make_leaf(shape, std::move(values), true));
}

std::size_t Tensor::extent(std::size_t axis) const {
  const auto& s = node()->shape;
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::vector<double>& Tensor::values_mut() {
  auto* n = node();
  if (!n->is_leaf) {
    throw ContractError("values_mut: only leaf tensors may be mutated in place");
  }
  return n->values;
}

void Tensor::set_requires_grad(bool v) {
  auto* n = node();
  if (!n->is_leaf) throw ContractError("set_requires_grad: not a leaf tensor");
  n->requires_grad = v;
}

const std::vector<double>& Tensor::grad() const {
  auto* n = node();
  if (n->grad.size() != n->values.size()) {
    throw ContractError("grad requested but no gradient has been accumulated");
  }
  return n->grad;
}

void Tensor::zero_grad() {
  auto* n = node();
  n->grad.assign(n->values.size(), 0.0);
}

double Tensor::item() const {
  auto* n = node();
  if (n->values.size() != 1) {
    throw ContractError("item() requires a 1-element tensor, got " + shape_str(n->shape));
  }
  return n->values[0];
}

Tensor Tensor::detached() const {
  auto* n = node();
  return Tensor(detail::make_leaf(n->shape, n->values, false));
}

void Tensor::validate_finite(const std::string& context) const {
  for (double v : node()->values) {
    if (!std::isfinite(v)) {
      throw ContractError("non-finite value in " + context);
    }
  }
}

// --- graph control ------------------------------------------------------------

void backward(const Tensor& loss) {
  auto ln = loss.node_ptr();
  if (!ln) throw ContractError("backward: undefined loss tensor");
  if (ln->values.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_str(ln->shape));
  }
  if (!ln->requires_grad) {
    throw ContractError("backward: loss was not produced by tracked operations");
  }
  auto& t = detail::tape();
  if (ln->is_leaf || ln->epoch != t.epoch || t.swept) {
    throw StaleGraphError("backward: graph already consumed or cleared; run a new forward pass");
  }

  ln->ensure_grad();
  ln->grad[0] += 1.0;

  // Nodes were recorded in topological order; sweep newest to oldest from the loss.
  std::size_t loss_pos = t.nodes.size();
  for (std::size_t i = t.nodes.size(); i-- > 0;) {
    if (t.nodes[i].get() == ln.get()) {
      loss_pos = i;
      break;
    }
  }
  for (std::size_t i = loss_pos + 1; i-- > 0;) {
    auto& n = t.nodes[i];
    if (n->grad.size() != n->values.size()) continue;  // not on a path to the loss
    if (n->backward_fn) n->backward_fn(*n);
  }
  // Consume the tape: a new forward pass is required before the next backward.
  detail::clear_tape_nodes(t);
}

void clear_graph() { detail::clear_tape_nodes(detail::tape()); }

NoGradGuard::NoGradGuard() { ++detail::no_grad_depth; }
NoGradGuard::~NoGradGuard() { --detail::no_grad_depth; }

void zero_grad(const std::vector<Tensor>& params) {
  for (const auto& p : params) {
    if (p.defined()) const_cast<Tensor&>(p).zero_grad();
  }
}

}  // namespace drag
