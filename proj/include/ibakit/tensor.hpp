#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ibakit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  // Shared so that alias() can hand out fresh gradient slots over one buffer.
  std::shared_ptr<std::vector<double>> data;
  std::vector<double> grad;  // empty until a backward pass touches the node
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major float64 tensor. Copies are handles to the same storage;
// use clone() for a deep copy.
class Tensor {
 public:
  Tensor();  // rank-0 zero
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data->size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const { return *node_->data; }
  // Writes are visible through every alias of this buffer.
  std::span<double> mutable_data() { return *node_->data; }

  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  // Throws ContractError when no gradient has been written.
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  void clear_grad() { node_->grad.clear(); }

  Tensor clone() const;
  // New tensor over the same data buffer with its own gradient slot.
  Tensor alias(bool requires_grad) const;
  // Same data buffer, never tracked.
  Tensor detach() const { return alias(false); }

  bool is_finite() const;
  // Throws InvalidValueError naming `context` when any value is NaN/Inf.
  void check_finite(std::string_view context) const;

  bool same_storage(const Tensor& other) const { return node_->data == other.node_->data; }

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::TensorNode> node_;
};

// Ordered record of differentiable operations. Entries are appended after
// their inputs exist, so the sequence is topologically sorted by construction.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::span<const Tensor> inputs, const Tensor& output, BackwardFn fn);

  // Writes d(loss)/d(t) into every tracked tensor recorded on this tape.
  // Gradients are overwritten, not accumulated across calls. A second call
  // before reset() is a ContractError.
  void backward(const Tensor& loss);

  void reset();
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Entry {
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    BackwardFn backward;
  };

  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// Makes `tape` the recording target for the current thread until destroyed.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Tape active on this thread, or nullptr.
Tape* current_tape();

namespace detail {

// Gradient buffer of `t`, zero-filled on first use.
std::vector<double>& grad_buffer(const Tensor& t);

}  // namespace detail

}  // namespace ibakit
