#pragma once

#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "alike/tensor.hpp"

namespace alike {

template <typename T>
class Graph;

/// Trainable tensor living outside any graph. Gradients from every graph the
/// parameter is attached to accumulate into `grad`.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

/// Handle to a node of a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  bool valid() const noexcept { return graph != nullptr && id >= 0; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(int axis) const { return value().dim(axis); }
  bool requires_grad() const;
};

/// Tape of tensor operations with reverse-mode gradient accumulation.
///
/// Nodes are appended in evaluation order, so the node index is a topological
/// order. A graph is single-writer; distinct graphs are independent.
template <typename T>
class Graph {
 public:
  /// Backward rule: receives the gradient of the node's output and adds the
  /// contributions into the parents' gradient buffers.
  using BackwardFn = std::function<void(Graph&, const Tensor<T>&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Value without gradient tracking.
  Var<T> constant(Tensor<T> value);
  /// Leaf whose gradient is held by the graph and accumulates across backward calls.
  Var<T> variable(Tensor<T> value);
  /// Leaf that references an external parameter; gradients accumulate into `p.grad`.
  /// The parameter must outlive the graph.
  Var<T> parameter(Parameter<T>& p);

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn backward);

  const Tensor<T>& value(Var<T> v) const;
  bool requires_grad(Var<T> v) const;

  /// Gradient of a leaf after backward; zeros when it was never reached.
  Tensor<T> grad(Var<T> v) const;

  /// Mutable gradient buffer of `v`, zero-initialised on first access.
  /// Only meaningful for nodes that require gradients.
  Tensor<T>& grad_buffer(Var<T> v);

  /// Reverse sweep from a scalar root. Leaf gradients accumulate additively.
  void backward(Var<T> root);

  /// Reset the gradients held by variable leaves (parameters are untouched).
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Parameter<T>* param = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  const Node& node(Var<T> v) const;
  Node& node(Var<T> v);
  Var<T> push(Node n);

  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(*this);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return graph->requires_grad(*this);
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace alike
