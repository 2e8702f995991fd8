#include "alike/graph.hpp"

namespace alike {

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var<T> v) const {
  if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw UsageError("variable does not belong to this graph");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var<T> v) {
  return const_cast<Node&>(static_cast<const Graph&>(*this).node(v));
}

template <typename T>
Var<T> Graph<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::variable(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::parameter(Parameter<T>& p) {
  Node n;
  n.param = &p;
  n.leaf = true;
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::initializer_list<Var<T>> parents,
                        BackwardFn backward) {
  return record(std::move(value), std::vector<Var<T>>(parents), std::move(backward));
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, const std::vector<Var<T>>& parents,
                        BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& p : parents) {
    if (node(p).requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var<T> v) const {
  const Node& n = node(v);
  return n.param ? n.param->value : n.value;
}

template <typename T>
bool Graph<T>::requires_grad(Var<T> v) const {
  return node(v).requires_grad;
}

template <typename T>
Tensor<T> Graph<T>::grad(Var<T> v) const {
  const Node& n = node(v);
  const Tensor<T>& g = n.param ? n.param->grad : n.grad;
  if (g.size() == value(v).size() && !g.empty()) return g;
  return Tensor<T>(value(v).shape());
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(Var<T> v) {
  Node& n = node(v);
  Tensor<T>& g = n.param ? n.param->grad : n.grad;
  const Tensor<T>& val = n.param ? n.param->value : n.value;
  if (g.size() != val.size()) g = Tensor<T>(val.shape());
  return g;
}

template <typename T>
void Graph<T>::backward(Var<T> root) {
  const Tensor<T>& rv = value(root);
  if (rv.size() != 1) {
    throw UsageError("backward requires a scalar root, got shape " + shape_string(rv.shape()));
  }
  for (auto& n : nodes_) {
    if (!n.leaf) n.grad = Tensor<T>();
  }
  Node& r = node(root);
  if (!r.requires_grad) return;
  grad_buffer(root)[0] += T(1);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.leaf || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

template <typename T>
void Graph<T>::zero_grad() {
  for (auto& n : nodes_) {
    if (n.leaf && !n.param) n.grad = Tensor<T>();
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace alike
