#include "b3s/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace b3s {

std::string_view kernel_name(Kernel k) {
  switch (k) {
    case Kernel::Input: return "input";
    case Kernel::Param: return "param";
    case Kernel::MatMul: return "matmul";
    case Kernel::Add: return "add";
    case Kernel::Sub: return "sub";
    case Kernel::Mul: return "mul";
    case Kernel::Concat: return "concat";
    case Kernel::ConcatRows: return "concat-rows";
    case Kernel::SliceCols: return "slice-cols";
    case Kernel::Tanh: return "tanh";
    case Kernel::Sigmoid: return "sigmoid";
    case Kernel::Softmax: return "softmax";
    case Kernel::Log: return "log";
    case Kernel::NegLogPick: return "neg-log-pick";
    case Kernel::ReduceSum: return "reduce-sum";
    case Kernel::ReduceMean: return "reduce-mean";
    case Kernel::Min: return "elementwise-min";
    case Kernel::Scale: return "scale";
    case Kernel::GatherRows: return "gather-rows";
    case Kernel::ScatterAdd: return "scatter-add";
  }
  return "unknown";
}

namespace {

[[noreturn]] void mismatch(Kernel k, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(kernel_name(k)) + ": incompatible dims " + shape_to_string(a) +
                       " and " + shape_to_string(b));
}

[[noreturn]] void bad_arity(Kernel k, std::size_t got) {
  throw std::invalid_argument(std::string(kernel_name(k)) + ": wrong number of inputs (" +
                              std::to_string(got) + ")");
}

double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// C (m x n, row stride n) += op(A) * op(B), op(A) is m x k, op(B) is k x n.
// Stored A is m x k, or k x m when ta; stored B is k x n, or n x k when tb.
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c) {
  if (!ta && !tb) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = a[i * k + p];
        if (aip != 0.0) axpy(aip, b + p * n, c + i * n, n);
      }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) {
        const double api = a[p * m + i];
        if (api != 0.0) axpy(api, b + p * n, c + i * n, n);
      }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
        c[i * n + j] += s;
      }
  }
}

enum class Broadcast { Same, Row, Scalar };

Broadcast broadcast_kind(Kernel k, const Tensor64& a, const Tensor64& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::Same;
  if (b.size() == 1) return Broadcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  mismatch(k, a.dims(), b.dims());
}

inline std::size_t bidx(Broadcast bc, std::size_t i, std::size_t cols) {
  switch (bc) {
    case Broadcast::Same: return i;
    case Broadcast::Row: return i % cols;
    case Broadcast::Scalar: return 0;
  }
  return i;
}

Tensor64 like(const Tensor64& t) { return Tensor64({t.rows(), t.cols()}); }

}  // namespace

NodeId Tape::push(TapeNode node) {
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Tape::input(const Tensor& t) { return input(t.cast<double>()); }

NodeId Tape::input(Tensor64 t) {
  if (t.dims().size() != 2) t = Tensor64({t.rows(), t.cols()}, std::vector<double>(t.data().begin(), t.data().end()));
  TapeNode n;
  n.kernel = Kernel::Input;
  n.value = std::move(t);
  return push(std::move(n));
}

NodeId Tape::scalar(double v) { return input(Tensor64({1, 1}, {v})); }

NodeId Tape::zeros(std::size_t rows, std::size_t cols) { return input(Tensor64({rows, cols})); }

NodeId Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return NodeId{it->second};
  TapeNode n;
  n.kernel = Kernel::Param;
  const Tensor& v = p.value;
  n.value = Tensor64({v.rows(), v.cols()});
  for (std::size_t i = 0; i < v.size(); ++i) n.value[i] = v[i];
  n.param = &p;
  NodeId id = push(std::move(n));
  param_nodes_[&p] = id.index;
  return id;
}

double Tape::scalar_value(NodeId id) const {
  const auto& v = value(id);
  if (v.size() != 1) throw DimensionError("scalar_value: node is not scalar " + shape_to_string(v.dims()));
  return v[0];
}

Tensor64 Tape::grad(NodeId id) const {
  const auto& n = nodes_[id.index];
  if (n.has_grad) return n.grad;
  return like(n.value);
}

void Tape::clear() {
  nodes_.clear();
  param_nodes_.clear();
}

NodeId Tape::eval(Kernel k, std::span<const NodeId> inputs, KernelArgs args) {
  for (auto id : inputs)
    if (id.index >= nodes_.size())
      throw std::invalid_argument(std::string(kernel_name(k)) + ": input node out of range");

  TapeNode node;
  node.kernel = k;
  node.inputs.reserve(inputs.size());
  for (auto id : inputs) node.inputs.push_back(id.index);

  auto need = [&](std::size_t n) {
    if (inputs.size() != n) bad_arity(k, inputs.size());
  };

  switch (k) {
    case Kernel::Input:
    case Kernel::Param:
      throw std::invalid_argument("eval: use input()/param() to create leaf nodes");

    case Kernel::MatMul: {
      need(2);
      const auto& a = val(node.inputs[0]);
      const auto& b = val(node.inputs[1]);
      const std::size_t m = args.transpose_a ? a.cols() : a.rows();
      const std::size_t ka = args.transpose_a ? a.rows() : a.cols();
      const std::size_t kb = args.transpose_b ? b.cols() : b.rows();
      const std::size_t n = args.transpose_b ? b.rows() : b.cols();
      if (ka != kb) mismatch(k, a.dims(), b.dims());
      node.value = Tensor64({m, n});
      gemm(args.transpose_a, args.transpose_b, m, n, ka, a.raw(), b.raw(), node.value.raw());
      break;
    }

    case Kernel::Add:
    case Kernel::Sub:
    case Kernel::Mul:
    case Kernel::Min: {
      need(2);
      const auto& a = val(node.inputs[0]);
      const auto& b = val(node.inputs[1]);
      Broadcast bc = Broadcast::Same;
      if (k == Kernel::Min) {
        if (a.rows() != b.rows() || a.cols() != b.cols()) mismatch(k, a.dims(), b.dims());
      } else {
        bc = broadcast_kind(k, a, b);
      }
      node.value = like(a);
      const std::size_t cols = a.cols();
      double* out = node.value.raw();
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        const double y = b[bidx(bc, i, cols)];
        switch (k) {
          case Kernel::Add: out[i] = x + y; break;
          case Kernel::Sub: out[i] = x - y; break;
          case Kernel::Mul: out[i] = x * y; break;
          default: out[i] = std::min(x, y); break;
        }
      }
      break;
    }

    case Kernel::Concat: {
      if (inputs.empty()) bad_arity(k, 0);
      const std::size_t rows = val(node.inputs[0]).rows();
      std::size_t total = 0;
      for (auto i : node.inputs) {
        if (val(i).rows() != rows) mismatch(k, val(node.inputs[0]).dims(), val(i).dims());
        total += val(i).cols();
      }
      node.value = Tensor64({rows, total});
      for (std::size_t r = 0; r < rows; ++r) {
        std::size_t off = 0;
        for (auto i : node.inputs) {
          const auto& part = val(i);
          std::copy_n(part.raw() + r * part.cols(), part.cols(), node.value.raw() + r * total + off);
          off += part.cols();
        }
      }
      break;
    }

    case Kernel::ConcatRows: {
      if (inputs.empty()) bad_arity(k, 0);
      const std::size_t cols = val(node.inputs[0]).cols();
      std::size_t rows = 0;
      for (auto i : node.inputs) {
        if (val(i).cols() != cols) mismatch(k, val(node.inputs[0]).dims(), val(i).dims());
        rows += val(i).rows();
      }
      node.value = Tensor64({rows, cols});
      double* out = node.value.raw();
      for (auto i : node.inputs) out = std::copy_n(val(i).raw(), val(i).size(), out);
      break;
    }

    case Kernel::SliceCols: {
      need(1);
      const auto& a = val(node.inputs[0]);
      if (args.begin + args.count > a.cols() || args.count == 0)
        throw DimensionError("slice-cols: range [" + std::to_string(args.begin) + ", " +
                             std::to_string(args.begin + args.count) + ") outside " +
                             shape_to_string(a.dims()));
      node.value = Tensor64({a.rows(), args.count});
      for (std::size_t r = 0; r < a.rows(); ++r)
        std::copy_n(a.raw() + r * a.cols() + args.begin, args.count, node.value.raw() + r * args.count);
      break;
    }

    case Kernel::Tanh:
    case Kernel::Sigmoid:
    case Kernel::Log: {
      need(1);
      const auto& a = val(node.inputs[0]);
      node.value = like(a);
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        if (k == Kernel::Tanh) node.value[i] = std::tanh(x);
        else if (k == Kernel::Sigmoid) node.value[i] = 1.0 / (1.0 + std::exp(-x));
        else node.value[i] = std::log(x);
      }
      break;
    }

    case Kernel::Softmax: {
      need(1);
      const auto& a = val(node.inputs[0]);
      node.value = like(a);
      const std::size_t cols = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* x = a.raw() + r * cols;
        double* y = node.value.raw() + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double sum = 0;
        for (std::size_t j = 0; j < cols; ++j) {
          y[j] = std::exp(x[j] - mx);
          sum += y[j];
        }
        for (std::size_t j = 0; j < cols; ++j) y[j] /= sum;
      }
      break;
    }

    case Kernel::NegLogPick: {
      need(1);
      const auto& a = val(node.inputs[0]);
      if (args.indices.size() != 1 || a.rows() != 1 || args.indices[0] >= a.cols())
        throw DimensionError("neg-log-pick: index out of range for " + shape_to_string(a.dims()));
      node.value = Tensor64({1, 1}, {-std::log(a[args.indices[0]] + kLogGuard)});
      break;
    }

    case Kernel::ReduceSum:
    case Kernel::ReduceMean: {
      need(1);
      const auto& a = val(node.inputs[0]);
      double s = 0;
      for (double x : a.data()) s += x;
      if (k == Kernel::ReduceMean) s /= static_cast<double>(a.size());
      node.value = Tensor64({1, 1}, {s});
      break;
    }

    case Kernel::Scale: {
      need(1);
      const auto& a = val(node.inputs[0]);
      node.value = like(a);
      for (std::size_t i = 0; i < a.size(); ++i) node.value[i] = args.factor * a[i];
      break;
    }

    case Kernel::GatherRows: {
      need(1);
      const auto& table = val(node.inputs[0]);
      const std::size_t cols = table.cols();
      node.value = Tensor64({args.indices.size(), cols});
      for (std::size_t r = 0; r < args.indices.size(); ++r) {
        const std::size_t id = args.indices[r];
        if (id >= table.rows())
          throw std::out_of_range("gather-rows: id " + std::to_string(id) + " at position " +
                                  std::to_string(r) + " exceeds table rows " + std::to_string(table.rows()));
        std::copy_n(table.raw() + id * cols, cols, node.value.raw() + r * cols);
      }
      break;
    }

    case Kernel::ScatterAdd: {
      need(1);
      const auto& a = val(node.inputs[0]);
      if (a.rows() != 1 || a.cols() != args.indices.size())
        throw DimensionError("scatter-add: source " + shape_to_string(a.dims()) + " vs " +
                             std::to_string(args.indices.size()) + " indices");
      node.value = Tensor64({1, args.count});
      for (std::size_t i = 0; i < args.indices.size(); ++i) {
        if (args.indices[i] >= args.count)
          throw std::out_of_range("scatter-add: index " + std::to_string(args.indices[i]) +
                                  " exceeds width " + std::to_string(args.count));
        node.value[args.indices[i]] += a[i];
      }
      break;
    }
  }
  node.args = std::move(args);
  return push(std::move(node));
}

NodeId Tape::matmul(NodeId a, NodeId b, bool ta, bool tb) {
  KernelArgs args;
  args.transpose_a = ta;
  args.transpose_b = tb;
  const NodeId in[] = {a, b};
  return eval(Kernel::MatMul, in, std::move(args));
}

#define B3S_BINARY(fn, K)                 \
  NodeId Tape::fn(NodeId a, NodeId b) {   \
    const NodeId in[] = {a, b};           \
    return eval(Kernel::K, in);           \
  }
B3S_BINARY(add, Add)
B3S_BINARY(sub, Sub)
B3S_BINARY(mul, Mul)
B3S_BINARY(minimum, Min)
#undef B3S_BINARY

#define B3S_UNARY(fn, K)                     \
  NodeId Tape::fn(NodeId a) {                \
    const NodeId in[] = {a};                 \
    return eval(Kernel::K, in);              \
  }
B3S_UNARY(tanh, Tanh)
B3S_UNARY(sigmoid, Sigmoid)
B3S_UNARY(softmax, Softmax)
B3S_UNARY(log, Log)
B3S_UNARY(reduce_sum, ReduceSum)
B3S_UNARY(reduce_mean, ReduceMean)
#undef B3S_UNARY

NodeId Tape::concat(std::span<const NodeId> parts) { return eval(Kernel::Concat, parts); }
NodeId Tape::concat_rows(std::span<const NodeId> parts) { return eval(Kernel::ConcatRows, parts); }

NodeId Tape::slice_cols(NodeId a, std::size_t begin, std::size_t count) {
  KernelArgs args;
  args.begin = begin;
  args.count = count;
  const NodeId in[] = {a};
  return eval(Kernel::SliceCols, in, std::move(args));
}

NodeId Tape::neg_log_pick(NodeId a, std::size_t index) {
  KernelArgs args;
  args.indices = {index};
  const NodeId in[] = {a};
  return eval(Kernel::NegLogPick, in, std::move(args));
}

NodeId Tape::scale(NodeId a, double factor) {
  KernelArgs args;
  args.factor = factor;
  const NodeId in[] = {a};
  return eval(Kernel::Scale, in, std::move(args));
}

NodeId Tape::gather_rows(NodeId table, std::span<const std::size_t> ids) {
  KernelArgs args;
  args.indices.assign(ids.begin(), ids.end());
  const NodeId in[] = {table};
  return eval(Kernel::GatherRows, in, std::move(args));
}

NodeId Tape::scatter_add(NodeId a, std::span<const std::size_t> ids, std::size_t width) {
  KernelArgs args;
  args.indices.assign(ids.begin(), ids.end());
  args.count = width;
  const NodeId in[] = {a};
  return eval(Kernel::ScatterAdd, in, std::move(args));
}

void Tape::backward(NodeId loss) {
  if (loss.index >= nodes_.size()) throw std::invalid_argument("backward: loss node out of range");
  auto& root = nodes_[loss.index];
  if (root.value.size() != 1)
    throw DimensionError("backward: loss must be scalar, got " + shape_to_string(root.value.dims()));

  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor64();
  }
  root.grad = Tensor64({1, 1}, {1.0});
  root.has_grad = true;

  for (std::int64_t i = loss.index; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad) continue;
    backward_node(n);
  }

  for (auto& n : nodes_) {
    if (n.kernel != Kernel::Param || !n.has_grad) continue;
    auto g = n.param->grad.data();
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += static_cast<float>(n.grad[j]);
  }
}

void Tape::backward_node(TapeNode& node) {
  auto grad_of = [this](std::uint32_t i) -> Tensor64& {
    auto& n = nodes_[i];
    if (!n.has_grad) {
      n.grad = like(n.value);
      n.has_grad = true;
    }
    return n.grad;
  };
  const Tensor64& g = node.grad;
  const auto& args = node.args;

  switch (node.kernel) {
    case Kernel::Input:
    case Kernel::Param:
      break;

    case Kernel::MatMul: {
      const auto& a = val(node.inputs[0]);
      const auto& b = val(node.inputs[1]);
      const bool ta = args.transpose_a, tb = args.transpose_b;
      const std::size_t m = g.rows(), n = g.cols();
      const std::size_t k = ta ? a.rows() : a.cols();
      if (node.inputs[0] != node.inputs[1]) {
        auto& ga = grad_of(node.inputs[0]);
        if (!ta) gemm(false, !tb, m, k, n, g.raw(), b.raw(), ga.raw());
        else gemm(tb, true, k, m, n, b.raw(), g.raw(), ga.raw());
        auto& gb = grad_of(node.inputs[1]);
        if (!tb) gemm(!ta, false, k, n, m, a.raw(), g.raw(), gb.raw());
        else gemm(true, ta, n, k, m, g.raw(), a.raw(), gb.raw());
      } else {
        Tensor64 ga = like(a), gb = like(b);
        if (!ta) gemm(false, !tb, m, k, n, g.raw(), b.raw(), ga.raw());
        else gemm(tb, true, k, m, n, b.raw(), g.raw(), ga.raw());
        if (!tb) gemm(!ta, false, k, n, m, a.raw(), g.raw(), gb.raw());
        else gemm(true, ta, n, k, m, g.raw(), a.raw(), gb.raw());
        auto& gs = grad_of(node.inputs[0]);
        for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += ga[i] + gb[i];
      }
      break;
    }

    case Kernel::Add:
    case Kernel::Sub:
    case Kernel::Mul:
    case Kernel::Min: {
      const auto& a = val(node.inputs[0]);
      const auto& b = val(node.inputs[1]);
      const Broadcast bc = node.kernel == Kernel::Min ? Broadcast::Same : broadcast_kind(node.kernel, a, b);
      const std::size_t cols = a.cols();
      // Local copies: the two inputs may be the same node.
      Tensor64 da = like(a), db = like(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t j = bidx(bc, i, cols);
        switch (node.kernel) {
          case Kernel::Add: da[i] += g[i]; db[j] += g[i]; break;
          case Kernel::Sub: da[i] += g[i]; db[j] -= g[i]; break;
          case Kernel::Mul: da[i] += g[i] * b[j]; db[j] += g[i] * a[i]; break;
          default:
            if (a[i] <= b[j]) da[i] += g[i];
            else db[j] += g[i];
            break;
        }
      }
      auto& ga = grad_of(node.inputs[0]);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += da[i];
      auto& gb = grad_of(node.inputs[1]);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += db[i];
      break;
    }

    case Kernel::Concat: {
      const std::size_t rows = g.rows(), total = g.cols();
      std::size_t off = 0;
      for (auto in : node.inputs) {
        auto& gi = grad_of(in);
        const std::size_t c = gi.cols();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) gi[r * c + j] += g[r * total + off + j];
        off += c;
      }
      break;
    }

    case Kernel::ConcatRows: {
      std::size_t off = 0;
      for (auto in : node.inputs) {
        auto& gi = grad_of(in);
        for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += g[off + j];
        off += gi.size();
      }
      break;
    }

    case Kernel::SliceCols: {
      auto& gi = grad_of(node.inputs[0]);
      const std::size_t c = gi.cols();
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < args.count; ++j) gi[r * c + args.begin + j] += g[r * args.count + j];
      break;
    }

    case Kernel::Tanh: {
      auto& gi = grad_of(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = node.value[i];
        gi[i] += g[i] * (1.0 - y * y);
      }
      break;
    }

    case Kernel::Sigmoid: {
      auto& gi = grad_of(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = node.value[i];
        gi[i] += g[i] * y * (1.0 - y);
      }
      break;
    }

    case Kernel::Log: {
      const auto& a = val(node.inputs[0]);
      auto& gi = grad_of(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] / a[i];
      break;
    }

    case Kernel::Softmax: {
      auto& gi = grad_of(node.inputs[0]);
      const std::size_t cols = g.cols();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const double* y = node.value.raw() + r * cols;
        const double* dy = g.raw() + r * cols;
        const double s = dot(y, dy, cols);
        double* dx = gi.raw() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - s);
      }
      break;
    }

    case Kernel::NegLogPick: {
      const auto& a = val(node.inputs[0]);
      auto& gi = grad_of(node.inputs[0]);
      const std::size_t idx = args.indices[0];
      gi[idx] += -g[0] / (a[idx] + kLogGuard);
      break;
    }

    case Kernel::ReduceSum:
    case Kernel::ReduceMean: {
      auto& gi = grad_of(node.inputs[0]);
      const double d = node.kernel == Kernel::ReduceMean ? g[0] / static_cast<double>(gi.size()) : g[0];
      for (auto& x : gi.data()) x += d;
      break;
    }

    case Kernel::Scale: {
      auto& gi = grad_of(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += args.factor * g[i];
      break;
    }

    case Kernel::GatherRows: {
      auto& gi = grad_of(node.inputs[0]);
      const std::size_t cols = gi.cols();
      for (std::size_t r = 0; r < args.indices.size(); ++r)
        axpy(1.0, g.raw() + r * cols, gi.raw() + args.indices[r] * cols, cols);
      break;
    }

    case Kernel::ScatterAdd: {
      auto& gi = grad_of(node.inputs[0]);
      for (std::size_t i = 0; i < args.indices.size(); ++i) gi[i] += g[args.indices[i]];
      break;
    }
  }
}

}  // namespace b3s
