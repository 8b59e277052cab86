#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "reslab/tensor.hpp"

namespace reslab {

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct BackwardOptions {
  /// Nodes whose backward rule is skipped: their inputs receive no gradient
  /// through them, as if the node's output were a constant.
  std::vector<std::size_t> detached_nodes;
};

struct Checkpoint {
  std::string label;
  std::size_t node_count;  // nodes recorded before the mark
};

/// Define-by-run tape. Ops append nodes as they execute; `backward` walks the
/// tape in reverse append order, which is a valid reverse topological order
/// because a node's inputs always exist before it is recorded.
///
/// One graph per forward pass. After `backward` the graph refuses a second
/// pass until `reset_backward` zeroes every gradient it wrote.
template <typename T>
class Graph {
 public:
  /// Receives d(loss)/d(output) and accumulates into the captured inputs.
  using BackwardFn = std::function<void(std::span<const T> grad_out)>;

  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Registers `out` as produced by `op` from `inputs`. When no input
  /// requires grad the output stays an untracked constant and nothing is
  /// recorded. Returns `out`.
  Tensor<T> record(std::string_view op, Tensor<T> out, std::initializer_list<Tensor<T>> inputs,
                   BackwardFn backward);
  Tensor<T> record(std::string_view op, Tensor<T> out, const std::vector<Tensor<T>>& inputs,
                   BackwardFn backward);

  /// Every op output is scanned for NaN/Inf and a NonFiniteError naming the
  /// op is thrown on the first hit.
  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

  /// With recording off every op output is an untracked constant (inference).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  void backward(const Tensor<T>& loss, const BackwardOptions& options = {});
  /// Zeroes all gradients written by the last backward and re-arms the graph.
  void reset_backward();
  bool backward_done() const { return backward_done_; }

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }
  const std::string& op_name(std::size_t node) const { return nodes_.at(node).op; }

  std::size_t mark(std::string label);
  const std::vector<Checkpoint>& checkpoints() const { return checkpoints_; }

 private:
  struct Node {
    std::string op;
    Tensor<T> output;
    std::vector<Tensor<T>> inputs;
    BackwardFn backward;
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<Checkpoint> checkpoints_;
  std::vector<Tensor<T>> touched_;  // tensors whose grads the last backward wrote
  bool check_finite_ = false;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;
extern template class Graph<long double>;

}  // namespace reslab
