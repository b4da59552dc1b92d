#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "b3s/parameter.hpp"
#include "b3s/tensor.hpp"

namespace b3s {

enum class Kernel : std::uint8_t {
  Input,
  Param,
  MatMul,
  Add,
  Sub,
  Mul,
  Concat,
  ConcatRows,
  SliceCols,
  Tanh,
  Sigmoid,
  Softmax,
  Log,
  NegLogPick,
  ReduceSum,
  ReduceMean,
  Min,
  Scale,
  GatherRows,
  ScatterAdd,
};

std::string_view kernel_name(Kernel k);

/// Index of a node on a Tape. Only meaningful for the tape that issued it.
struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

/// Extra operands for kernels that need more than node inputs.
struct KernelArgs {
  bool transpose_a = false;  // MatMul
  bool transpose_b = false;  // MatMul
  double factor = 1.0;       // Scale
  std::size_t begin = 0;     // SliceCols
  std::size_t count = 0;     // SliceCols; ScatterAdd output width
  std::vector<std::size_t> indices;  // NegLogPick (one entry), GatherRows, ScatterAdd
};

struct TapeNode {
  Kernel kernel = Kernel::Input;
  std::vector<std::uint32_t> inputs;
  KernelArgs args;
  Tensor64 value;
  Tensor64 grad;
  Parameter* param = nullptr;
  bool has_grad = false;
};

/// Additive guard inside the log of NegLogPick.
inline constexpr double kLogGuard = 1e-12;

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so
/// inputs always precede their consumers. Values are held in double
/// precision; Parameters keep float storage and receive float gradients.
///
/// Broadcasting for Add/Sub/Mul: the second operand may match the first,
/// be a single row (1 x cols) repeated over rows, or be a 1 x 1 scalar.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  NodeId input(const Tensor& t);
  NodeId input(Tensor64 t);
  NodeId scalar(double v);
  NodeId zeros(std::size_t rows, std::size_t cols);
  /// Registers a Parameter once per tape; repeated calls return the same node.
  NodeId param(Parameter& p);

  NodeId eval(Kernel k, std::span<const NodeId> inputs, KernelArgs args = {});

  NodeId matmul(NodeId a, NodeId b, bool transpose_a = false, bool transpose_b = false);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId concat(std::span<const NodeId> parts);
  NodeId concat(std::initializer_list<NodeId> parts) {
    return concat(std::span<const NodeId>(parts.begin(), parts.size()));
  }
  NodeId concat_rows(std::span<const NodeId> parts);
  NodeId slice_cols(NodeId a, std::size_t begin, std::size_t count);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId softmax(NodeId a);
  NodeId log(NodeId a);
  NodeId neg_log_pick(NodeId a, std::size_t index);
  NodeId reduce_sum(NodeId a);
  NodeId reduce_mean(NodeId a);
  NodeId minimum(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId gather_rows(NodeId table, std::span<const std::size_t> ids);
  NodeId scatter_add(NodeId a, std::span<const std::size_t> ids, std::size_t width);

  /// Accumulates d(loss)/d(node) for every node reachable from `loss` and
  /// adds parameter gradients into Parameter::grad.
  void backward(NodeId loss);

  const Tensor64& value(NodeId id) const { return nodes_[id.index].value; }
  double scalar_value(NodeId id) const;
  /// Zero tensor of matching dims when the node was not reached by backward.
  Tensor64 grad(NodeId id) const;
  const TapeNode& node(NodeId id) const { return nodes_[id.index]; }
  std::size_t size() const noexcept { return nodes_.size(); }
  void clear();

 private:
  NodeId push(TapeNode node);
  const Tensor64& val(std::uint32_t i) const { return nodes_[i].value; }
  void backward_node(TapeNode& node);

  std::deque<TapeNode> nodes_;  // stable references to node values
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

}  // namespace b3s
