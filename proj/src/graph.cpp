#include "reslab/graph.hpp"

#include <atomic>
#include <cmath>
#include <unordered_set>

namespace reslab {

namespace {
std::atomic<std::uint64_t> next_graph_id{1};
}

template <typename T>
Graph<T>::Graph() : id_(next_graph_id.fetch_add(1)) {}

template <typename T>
Tensor<T> Graph<T>::record(std::string_view op, Tensor<T> out,
                           std::initializer_list<Tensor<T>> inputs, BackwardFn backward) {
  return record(op, std::move(out), std::vector<Tensor<T>>(inputs), std::move(backward));
}

template <typename T>
Tensor<T> Graph<T>::record(std::string_view op, Tensor<T> out,
                           const std::vector<Tensor<T>>& inputs, BackwardFn backward) {
  if (check_finite_) {
    for (const auto& in : inputs) {
      for (auto v : in.data()) {
        if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + " (input)", nodes_.size());
      }
    }
    for (auto v : out.data()) {
      if (!std::isfinite(v)) throw NonFiniteError(std::string(op), nodes_.size());
    }
  }
  bool tracked = false;
  for (const auto& in : inputs) {
    if (in.graph_id() != 0 && in.graph_id() != id_) {
      throw GraphError("op '" + std::string(op) + "' mixes tensors from different graphs");
    }
    tracked = tracked || in.requires_grad();
  }
  if (!tracked || !grad_enabled_) return out;

  auto& st = *out.impl_;
  st.requires_grad = true;
  st.graph_id = id_;
  st.node = nodes_.size();
  nodes_.push_back(Node{std::string(op), out, inputs, std::move(backward)});
  return out;
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss, const BackwardOptions& options) {
  if (backward_done_) {
    throw GraphError("backward called twice on the same graph without reset_backward()");
  }
  if (loss.rank() != 1 || loss.dim(0) != 1) {
    throw GraphError("backward needs a scalar loss of shape [1], got " + to_string(loss.shape()));
  }
  if (loss.graph_id() != id_ || !loss.node_id()) {
    throw GraphError("loss is not connected to this graph");
  }
  const std::size_t last = *loss.node_id();

  std::vector<bool> detached(nodes_.size(), false);
  for (auto n : options.detached_nodes) {
    if (n >= nodes_.size()) {
      throw GraphError("detached node " + std::to_string(n) + " does not exist");
    }
    detached[n] = true;
  }

  // Allocate every gradient up front so no tracked tensor is left partially
  // written. Intermediates start at zero; leaves keep accumulating.
  touched_.clear();
  std::unordered_set<const void*> seen;
  for (std::size_t i = 0; i <= last; ++i) {
    auto& node = nodes_[i];
    node.output.ensure_grad();
    node.output.zero_grad();
    if (seen.insert(node.output.id()).second) touched_.push_back(node.output);
    for (auto& in : node.inputs) {
      if (!in.requires_grad() || in.graph_id() == id_) continue;
      in.ensure_grad();
      if (seen.insert(in.id()).second) touched_.push_back(in);
    }
  }

  nodes_[last].output.mutable_grad()[0] = T(1);
  for (std::size_t i = last + 1; i-- > 0;) {
    if (detached[i]) continue;
    auto& node = nodes_[i];
    node.backward(node.output.grad());
  }
  backward_done_ = true;
}

template <typename T>
void Graph<T>::reset_backward() {
  for (auto& t : touched_) t.zero_grad();
  backward_done_ = false;
}

template <typename T>
std::size_t Graph<T>::mark(std::string label) {
  checkpoints_.push_back(Checkpoint{std::move(label), nodes_.size()});
  return nodes_.size();
}

template class Graph<float>;
template class Graph<double>;
template class Graph<long double>;

}  // namespace reslab
