#include "ibakit/tensor.hpp"

#include <cmath>
#include <sstream>

#include "ibakit/error.hpp"

namespace ibakit {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<detail::TensorNode> make_node(Shape shape, std::vector<double> values) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::make_shared<std::vector<double>>(std::move(values));
  return node;
}

thread_local Tape* tl_current_tape = nullptr;

}  // namespace

Tensor::Tensor() : node_(make_node({}, {0.0})) {}

Tensor::Tensor(Shape shape, double fill) {
  const std::size_t n = shape_numel(shape);
  node_ = make_node(std::move(shape), std::vector<double>(n, fill));
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_ = make_node(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw RangeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return shape()[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return (*node_->data)[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw RangeError("flat index " + std::to_string(i) + " out of range");
  return (*node_->data)[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2 || i >= shape()[0] || j >= shape()[1]) {
    throw RangeError("index (" + std::to_string(i) + "," + std::to_string(j) +
                     ") invalid for shape " + shape_str(shape()));
  }
  return (*node_->data)[i * shape()[1] + j];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

Tensor Tensor::grad_tensor() const {
  const auto g = grad();
  return Tensor(shape(), std::vector<double>(g.begin(), g.end()));
}

Tensor Tensor::clone() const { return Tensor(make_node(shape(), *node_->data)); }

Tensor Tensor::alias(bool requires_grad) const {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = node_->shape;
  node->data = node_->data;
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

bool Tensor::is_finite() const {
  for (double v : *node_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::check_finite(std::string_view context) const {
  const auto& d = *node_->data;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) {
      std::ostringstream os;
      os << "non-finite value " << d[i] << " at flat index " << i << " in " << context;
      throw InvalidValueError(os.str());
    }
  }
}

namespace detail {

std::vector<double>& grad_buffer(const Tensor& t) {
  auto& node = *t.node();
  if (node.grad.empty()) node.grad.assign(node.data->size(), 0.0);
  return node.grad;
}

}  // namespace detail

void Tape::record(std::span<const Tensor> inputs, const Tensor& output, BackwardFn fn) {
  if (consumed_) throw ContractError("recording on a tape that already ran backward; reset() first");
  Entry e;
  e.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) e.inputs.push_back(t.node());
  e.output = output.node();
  e.backward = std::move(fn);
  entries_.push_back(std::move(e));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward called twice on one tape without reset()");
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("loss was not produced through recorded operations");
  }
  for (Entry& e : entries_) {
    for (auto& in : e.inputs) {
      if (in->requires_grad) in->grad.assign(in->data->size(), 0.0);
    }
    e.output->grad.assign(e.output->data->size(), 0.0);
  }
  auto& root = detail::grad_buffer(loss);
  root.assign(1, 1.0);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  consumed_ = true;
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

TapeScope::TapeScope(Tape& tape) : previous_(tl_current_tape) { tl_current_tape = &tape; }

TapeScope::~TapeScope() { tl_current_tape = previous_; }

Tape* current_tape() { return tl_current_tape; }

}  // namespace ibakit
