#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mtlforge/autodiff/tensor.hpp"
#include "mtlforge/error.hpp"

namespace mtl {

/// A trainable tensor. The gradient buffer is owned here so that several
/// tapes (one per optimisation step) can accumulate into the same slot.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0) {}

  void zero_grad() { grad = Tensor(value.shape(), 0.0); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Linear record of a forward computation.
///
/// Nodes are appended in evaluation order, so insertion order is already a
/// topological order and backward() is a single reverse sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    return push({"constant", {}, std::move(value), {}, {}, nullptr, false});
  }

  Var parameter(Parameter& p) {
    return push({"parameter", {}, p.value, {}, {}, &p, true});
  }

  /// Append an operation node. `fn` receives the tape and the node's own id
  /// and must route grad(self) into its inputs with accumulate().
  Var record(std::string_view op, std::vector<std::size_t> inputs, Tensor value,
             BackwardFn fn) {
    for (auto in : inputs)
      if (in >= nodes_.size()) throw UsageError("tape: input id out of range");
    bool req = false;
    for (auto in : inputs) req = req || nodes_[in].requires_grad;
    if (!value.all_finite())
      throw NumericError("non-finite value produced by '" + std::string(op) + "'");
    return push({op, std::move(inputs), std::move(value), {},
                 req ? std::move(fn) : BackwardFn{}, nullptr, req});
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of node `id`; a zero tensor is materialised on first access.
  const Tensor& grad(std::size_t id) {
    auto& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  void accumulate(std::size_t id, const Tensor& g) {
    auto& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (n.grad.empty())
      n.grad = g;
    else
      n.grad += g;
  }

  /// Reverse sweep from a scalar node. Parameter leaves add their gradient
  /// into Parameter::grad. Returns the number of nodes visited.
  std::size_t backward(Var loss) {
    if (loss.tape != this) throw UsageError("backward: loss belongs to another tape");
    if (value(loss.id).size() != 1)
      throw UsageError("backward: loss must be scalar, got shape " +
                       shape_str(value(loss.id).shape()));
    nodes_[loss.id].grad = Tensor(value(loss.id).shape(), 1.0);
    std::size_t visited = 0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      ++visited;
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.param != nullptr) {
        if (n.param->grad.empty()) n.param->zero_grad();
        n.param->grad += n.grad;
        if (!n.param->grad.all_finite())
          throw NumericError("non-finite gradient for parameter '" + n.param->name + "'");
      } else if (n.backward) {
        n.backward(*this, i);
      }
    }
    return visited;
  }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace mtl
