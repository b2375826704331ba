#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include "ffield/tensor.hpp"

namespace ffield {

// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::uint32_t kInvalid =
      std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kInvalid;

  bool valid() const { return id != kInvalid; }
};

// Reverse-mode gradient tape. Every op appends one node holding its output
// value and, when any input needs a gradient, a closure that pushes the
// output gradient back to the inputs. backward() runs those closures in
// exact reverse recording order. A tape is owned by a single thread.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self)>;

  explicit Tape(bool record_gradients = true)
      : record_gradients_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool record_gradients() const { return record_gradients_; }

  // Validates every recorded value for NaN/Inf. On by default.
  void set_check_finite(bool enabled) { check_finite_ = enabled; }

  Var constant(Tensor<T> value) {
    Node& n = push();
    n.owned = std::move(value);
    check(n.owned, "constant");
    return last();
  }

  // Borrowed, non-differentiable view of an external tensor. The tensor must
  // outlive the tape.
  Var frozen(const Tensor<T>& value) {
    Node& n = push();
    n.borrowed = &value;
    return last();
  }

  // Registers a learnable parameter. Its gradient accumulates directly into
  // param.grad, which is resized (and zeroed) only if its shape is stale.
  Var parameter(Parameter<T>& param) {
    if (param.grad.shape() != param.value.shape()) param.zero_grad();
    Node& n = push();
    n.borrowed = &param.value;
    n.param_grad = &param.grad;
    n.requires_grad = record_gradients_;
    bool known = false;
    for (const Parameter<T>* p : params_) known = known || p == &param;
    if (!known) params_.push_back(&param);
    return last();
  }

  // Appends an op result. `backward` is kept only when gradients are being
  // recorded and at least one input requires one.
  Var record(const char* op, Tensor<T> value, std::initializer_list<Var> inputs,
             Backward backward) {
    return record(op, std::move(value), std::vector<Var>(inputs),
                  std::move(backward));
  }

  Var record(const char* op, Tensor<T> value, const std::vector<Var>& inputs,
             Backward backward) {
    check(value, op);
    bool needs = false;
    if (record_gradients_) {
      for (Var v : inputs) needs = needs || node(v).requires_grad;
    }
    Node& n = push();
    n.owned = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    return last();
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = node(v);
    return n.borrowed ? *n.borrowed : n.owned;
  }

  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Gradient buffer of `v`, zero-allocated on first use; nullptr when `v`
  // does not require a gradient.
  Tensor<T>* grad_if_needed(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    if (n.param_grad) return n.param_grad;
    if (n.grad.shape() != value(v).shape()) n.grad = Tensor<T>(value(v).shape());
    return &n.grad;
  }

  // Gradient flowing into `v` (empty tensor if nothing reached it).
  const Tensor<T>& grad(Var v) const {
    const Node& n = node(v);
    return n.param_grad ? *n.param_grad : n.grad;
  }

  void backward(Var loss) {
    if (nodes_.empty()) Fail(ErrorCode::kState, "backward: tape is empty");
    const Tensor<T>& l = value(loss);
    if (l.size() != 1) {
      Fail(ErrorCode::kShape,
           "backward: loss must be a scalar, got shape " + l.shape_string());
    }
    Tensor<T>* seed = grad_if_needed(loss);
    if (!seed) return;  // constant loss: all gradients stay zero
    (*seed)[0] += T(1);
    for (std::uint32_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, Var{i});
    }
  }

  const std::vector<Parameter<T>*>& parameters() const { return params_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    Tensor<T>* param_grad = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  Node& push() { return nodes_.emplace_back(); }
  Var last() const { return Var{static_cast<std::uint32_t>(nodes_.size() - 1)}; }

  Node& node(Var v) {
    if (v.id >= nodes_.size()) Fail(ErrorCode::kInternal, "tape: invalid var");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) Fail(ErrorCode::kInternal, "tape: invalid var");
    return nodes_[v.id];
  }

  void check(const Tensor<T>& t, const char* op) const {
    if (check_finite_ && !t.all_finite()) {
      Fail(ErrorCode::kNumeric,
           std::string(op) + ": produced non-finite values, shape " +
               t.shape_string());
    }
  }

  bool record_gradients_;
  bool check_finite_ = true;
  std::deque<Node> nodes_;
  std::vector<Parameter<T>*> params_;
};

}  // namespace ffield
