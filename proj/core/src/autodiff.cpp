#include "ctrlsynth/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Core>

#include "ctrlsynth/error.hpp"

namespace ctrlsynth::ad {

namespace {

// Applies `f` to `src` in fixed four-lane chunks, padding the tail.
// Fixed-size maps use unaligned loads without a peeled
// prologue, so every element takes the same vectorised path whatever its
// address or position, which keeps results bit-reproducible.
template <class F>
void map_lanes(const Tensor& src, double* out, std::size_t size, F f) {
  using Lanes = Eigen::Array<double, 4, 1>;
  const double* in = src.storage().data();
  std::size_t i = 0;
  for (; i + 4 <= size; i += 4) Eigen::Map<Lanes>(out + i) = f(Eigen::Map<const Lanes>(in + i));
  if (i < size) {
    Lanes x = Lanes::Zero();
    for (std::size_t j = i; j < size; ++j) x[j - i] = in[j];
    const Lanes y = f(x);
    for (std::size_t j = i; j < size; ++j) out[j] = y[j - i];
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// c += a * b for row-major (m x k) * (k x n).
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  MutMap(c, M, N).noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
}

// c += a * b^T for a (m x n), b (k x n), c (m x k).
void gemm_abt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                  std::size_t k) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  MutMap(c, M, K).noalias() += ConstMap(a, M, N) * ConstMap(b, K, N).transpose();
}

// c += a^T * b for a (m x k), b (m x n), c (k x n).
void gemm_atb_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  MutMap(c, K, N).noalias() += ConstMap(a, M, K).transpose() * ConstMap(b, M, N);
}

Node make_node(OpKind kind, std::vector<NodeId> parents) {
  Node n;
  n.kind = kind;
  n.parents = std::move(parents);
  return n;
}

std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kExp: return "exp";
    case OpKind::kSquare: return "square";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kRow: return "row";
    case OpKind::kStackRows: return "stack_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kTileRows: return "tile_rows";
    case OpKind::kGatherRow: return "gather_row";
    case OpKind::kStopGradient: return "stop_gradient";
    case OpKind::kStraightThrough: return "straight_through";
    case OpKind::kGaussianKL: return "gaussian_kl";
  }
  return "?";
}

NodeId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

const Node& Graph::checked(NodeId id, const char* op) const {
  if (id >= nodes_.size()) {
    throw ShapeError(std::string(op) + ": unknown node id " + std::to_string(id));
  }
  return nodes_[id];
}

void Graph::shape_fail(const char* op, const std::string& detail) const {
  throw ShapeError("node " + std::to_string(nodes_.size()) + " (" + op + "): " + detail);
}

NodeId Graph::input(std::string name, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) shape_fail("input", "empty shape for '" + name + "'");
  Node n = make_node(OpKind::kInput, {});
  n.rows = rows;
  n.cols = cols;
  n.label = std::move(name);
  return push(std::move(n));
}

NodeId Graph::parameter(Parameter& p) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.kind != OpKind::kParameter) continue;
    if (n.param == &p) return i;
    if (n.label == p.name) {
      shape_fail("parameter", "two distinct parameters named '" + p.name + "'");
    }
  }
  if (p.value.empty()) shape_fail("parameter", "parameter '" + p.name + "' has no value");
  Node n = make_node(OpKind::kParameter, {});
  n.rows = p.value.rows();
  n.cols = p.value.cols();
  n.label = p.name;
  n.param = &p;
  return push(std::move(n));
}

NodeId Graph::constant(Tensor value) {
  if (value.empty()) shape_fail("constant", "empty tensor");
  Node n = make_node(OpKind::kConstant, {});
  n.rows = value.rows();
  n.cols = value.cols();
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const auto& na = checked(a, "matmul");
  const auto& nb = checked(b, "matmul");
  if (na.cols != nb.rows) {
    shape_fail("matmul", dims(na.rows, na.cols) + " times " + dims(nb.rows, nb.cols));
  }
  Node n = make_node(OpKind::kMatMul, {a, b});
  n.rows = na.rows;
  n.cols = nb.cols;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const auto& na = checked(a, "add");
  const auto& nb = checked(b, "add");
  const bool same = na.rows == nb.rows && na.cols == nb.cols;
  const bool row_bcast = nb.rows == 1 && nb.cols == na.cols;
  if (!same && !row_bcast) {
    shape_fail("add", dims(na.rows, na.cols) + " plus " + dims(nb.rows, nb.cols));
  }
  Node n = make_node(OpKind::kAdd, {a, b});
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  const auto& na = checked(a, "sub");
  const auto& nb = checked(b, "sub");
  if (na.rows != nb.rows || na.cols != nb.cols) {
    shape_fail("sub", dims(na.rows, na.cols) + " minus " + dims(nb.rows, nb.cols));
  }
  Node n = make_node(OpKind::kSub, {a, b});
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const auto& na = checked(a, "mul");
  const auto& nb = checked(b, "mul");
  const bool same = na.rows == nb.rows && na.cols == nb.cols;
  const bool scalar = nb.rows == 1 && nb.cols == 1;
  if (!same && !scalar) {
    shape_fail("mul", dims(na.rows, na.cols) + " times " + dims(nb.rows, nb.cols));
  }
  Node n = make_node(OpKind::kMul, {a, b});
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double factor) {
  const auto& na = checked(a, "scale");
  Node n = make_node(OpKind::kScale, {a});
  n.rows = na.rows;
  n.cols = na.cols;
  n.constant = factor;
  return push(std::move(n));
}

#define CTRLSYNTH_UNARY(fn, kind_)                   \
  NodeId Graph::fn(NodeId a) {                       \
    const auto& na = checked(a, #fn);                \
    Node n = make_node(OpKind::kind_, {a});   \
    n.rows = na.rows;                                \
    n.cols = na.cols;                                \
    return push(std::move(n));                       \
  }

CTRLSYNTH_UNARY(sigmoid, kSigmoid)
CTRLSYNTH_UNARY(tanh, kTanh)
CTRLSYNTH_UNARY(exp, kExp)
CTRLSYNTH_UNARY(square, kSquare)
CTRLSYNTH_UNARY(stop_gradient, kStopGradient)
#undef CTRLSYNTH_UNARY

NodeId Graph::sum(NodeId a) {
  checked(a, "sum");
  Node n = make_node(OpKind::kSum, {a});
  n.rows = n.cols = 1;
  return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
  checked(a, "mean");
  Node n = make_node(OpKind::kMean, {a});
  n.rows = n.cols = 1;
  return push(std::move(n));
}

NodeId Graph::mean_rows(NodeId a) {
  const auto& na = checked(a, "mean_rows");
  Node n = make_node(OpKind::kMeanRows, {a});
  n.rows = 1;
  n.cols = na.cols;
  return push(std::move(n));
}

NodeId Graph::row(NodeId a, std::size_t r) {
  const auto& na = checked(a, "row");
  if (r >= na.rows) shape_fail("row", "row " + std::to_string(r) + " of " + dims(na.rows, na.cols));
  Node n = make_node(OpKind::kRow, {a});
  n.rows = 1;
  n.cols = na.cols;
  n.index = r;
  return push(std::move(n));
}

NodeId Graph::stack_rows(std::span<const NodeId> rows) {
  if (rows.empty()) shape_fail("stack_rows", "no rows");
  const std::size_t cols = checked(rows[0], "stack_rows").cols;
  for (auto id : rows) {
    const auto& nr = checked(id, "stack_rows");
    if (nr.rows != 1 || nr.cols != cols) {
      shape_fail("stack_rows", "expected 1x" + std::to_string(cols) + " rows, got " +
                                   dims(nr.rows, nr.cols));
    }
  }
  Node n = make_node(OpKind::kStackRows, std::vector<NodeId>(rows.begin(), rows.end()));
  n.rows = rows.size();
  n.cols = cols;
  return push(std::move(n));
}

NodeId Graph::concat_cols(NodeId a, NodeId b) {
  const auto& na = checked(a, "concat_cols");
  const auto& nb = checked(b, "concat_cols");
  if (na.rows != nb.rows) {
    shape_fail("concat_cols", dims(na.rows, na.cols) + " beside " + dims(nb.rows, nb.cols));
  }
  Node n = make_node(OpKind::kConcatCols, {a, b});
  n.rows = na.rows;
  n.cols = na.cols + nb.cols;
  return push(std::move(n));
}

NodeId Graph::tile_rows(NodeId a, std::size_t count) {
  const auto& na = checked(a, "tile_rows");
  if (na.rows != 1 || count == 0) {
    shape_fail("tile_rows", "tiling " + dims(na.rows, na.cols) + " " + std::to_string(count) +
                                " times");
  }
  Node n = make_node(OpKind::kTileRows, {a});
  n.rows = count;
  n.cols = na.cols;
  return push(std::move(n));
}

NodeId Graph::gather_row(NodeId a, std::size_t r) {
  const auto& na = checked(a, "gather_row");
  if (r >= na.rows) {
    shape_fail("gather_row", "row " + std::to_string(r) + " of " + dims(na.rows, na.cols));
  }
  Node n = make_node(OpKind::kGatherRow, {a});
  n.rows = 1;
  n.cols = na.cols;
  n.index = r;
  return push(std::move(n));
}

NodeId Graph::straight_through(NodeId a, NodeId b) {
  const auto& na = checked(a, "straight_through");
  const auto& nb = checked(b, "straight_through");
  if (na.rows != nb.rows || na.cols != nb.cols) {
    shape_fail("straight_through", dims(na.rows, na.cols) + " vs " + dims(nb.rows, nb.cols));
  }
  Node n = make_node(OpKind::kStraightThrough, {a, b});
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

NodeId Graph::gaussian_kl(NodeId mu, NodeId logvar) {
  const auto& nm = checked(mu, "gaussian_kl");
  const auto& nv = checked(logvar, "gaussian_kl");
  if (nm.rows != nv.rows || nm.cols != nv.cols) {
    shape_fail("gaussian_kl", dims(nm.rows, nm.cols) + " vs " + dims(nv.rows, nv.cols));
  }
  Node n = make_node(OpKind::kGaussianKL, {mu, logvar});
  n.rows = n.cols = 1;
  return push(std::move(n));
}

NodeId Graph::squared_distance(NodeId a, NodeId b) { return sum(square(sub(a, b))); }

void Graph::evaluate(Node& n, Semantics semantics) {
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.parents[k]].value; };
  if (n.kind == OpKind::kInput || n.kind == OpKind::kConstant) return;
  if (n.kind == OpKind::kParameter) {
    n.value = n.param->value;
    return;
  }
  if (n.value.rows() != n.rows || n.value.cols() != n.cols) {
    n.value = Tensor(n.rows, n.cols);
  }
  double* out = n.value.storage().data();
  const std::size_t size = n.rows * n.cols;
  switch (n.kind) {
    case OpKind::kMatMul: {
      std::fill(out, out + size, 0.0);
      const auto& a = in(0);
      gemm_acc(a.storage().data(), in(1).storage().data(), out, a.rows(), a.cols(), n.cols);
      break;
    }
    case OpKind::kAdd: {
      const auto& a = in(0);
      const auto& b = in(1);
      if (b.size() == size) {
        for (std::size_t i = 0; i < size; ++i) out[i] = a[i] + b[i];
      } else {
        for (std::size_t r = 0; r < n.rows; ++r)
          for (std::size_t c = 0; c < n.cols; ++c) out[r * n.cols + c] = a[r * n.cols + c] + b[c];
      }
      break;
    }
    case OpKind::kSub: {
      const auto& a = in(0);
      const auto& b = in(1);
      for (std::size_t i = 0; i < size; ++i) out[i] = a[i] - b[i];
      break;
    }
    case OpKind::kMul: {
      const auto& a = in(0);
      const auto& b = in(1);
      if (b.size() == size) {
        for (std::size_t i = 0; i < size; ++i) out[i] = a[i] * b[i];
      } else {
        for (std::size_t i = 0; i < size; ++i) out[i] = a[i] * b[0];
      }
      break;
    }
    case OpKind::kScale: {
      const auto& a = in(0);
      for (std::size_t i = 0; i < size; ++i) out[i] = a[i] * n.constant;
      break;
    }
    // Vectorised exp; both formulas saturate cleanly when exp overflows.
    case OpKind::kSigmoid:
      map_lanes(in(0), out, size, [](const auto& x) { return 1.0 / (1.0 + (-x).exp()); });
      break;
    case OpKind::kTanh:
      map_lanes(in(0), out, size,
                [](const auto& x) { return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0); });
      break;
    case OpKind::kExp:
      map_lanes(in(0), out, size, [](const auto& x) { return x.exp(); });
      break;
    case OpKind::kSquare: {
      const auto& a = in(0);
      for (std::size_t i = 0; i < size; ++i) out[i] = a[i] * a[i];
      break;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
      const auto& a = in(0);
      double s = 0.0;
      for (double v : a.values()) s += v;
      out[0] = n.kind == OpKind::kSum ? s : s / static_cast<double>(a.size());
      break;
    }
    case OpKind::kMeanRows: {
      const auto& a = in(0);
      std::fill(out, out + size, 0.0);
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < n.cols; ++c) out[c] += a.at(r, c);
      const double inv = 1.0 / static_cast<double>(a.rows());
      for (std::size_t c = 0; c < n.cols; ++c) out[c] *= inv;
      break;
    }
    case OpKind::kRow:
    case OpKind::kGatherRow: {
      const auto src = in(0).row_span(n.index);
      std::copy(src.begin(), src.end(), out);
      break;
    }
    case OpKind::kStackRows: {
      for (std::size_t r = 0; r < n.rows; ++r) {
        const auto& src = in(r);
        std::copy(src.storage().begin(), src.storage().end(), out + r * n.cols);
      }
      break;
    }
    case OpKind::kConcatCols: {
      const auto& a = in(0);
      const auto& b = in(1);
      for (std::size_t r = 0; r < n.rows; ++r) {
        auto ra = a.row_span(r);
        auto rb = b.row_span(r);
        std::copy(ra.begin(), ra.end(), out + r * n.cols);
        std::copy(rb.begin(), rb.end(), out + r * n.cols + a.cols());
      }
      break;
    }
    case OpKind::kTileRows: {
      const auto& a = in(0);
      for (std::size_t r = 0; r < n.rows; ++r)
        std::copy(a.storage().begin(), a.storage().end(), out + r * n.cols);
      break;
    }
    case OpKind::kStopGradient: {
      const auto& src = semantics == Semantics::kFrozen ? n.frozen_a : in(0);
      std::copy(src.storage().begin(), src.storage().end(), out);
      break;
    }
    case OpKind::kStraightThrough: {
      if (semantics == Semantics::kFrozen) {
        const auto& a = in(0);
        for (std::size_t i = 0; i < size; ++i) out[i] = n.frozen_b[i] + (a[i] - n.frozen_a[i]);
      } else {
        const auto& b = in(1);
        std::copy(b.storage().begin(), b.storage().end(), out);
      }
      break;
    }
    case OpKind::kGaussianKL: {
      const auto& mu = in(0);
      const auto& lv = in(1);
      double kl = 0.0;
      for (std::size_t i = 0; i < mu.size(); ++i) {
        kl += 0.5 * (mu[i] * mu[i] + std::exp(lv[i]) - 1.0 - lv[i]);
      }
      out[0] = kl;
      break;
    }
    default:
      break;
  }
}

void Graph::bind_inputs(const Bindings& bindings, NodeId first) {
  for (NodeId id = first; id < nodes_.size(); ++id) {
    auto& n = nodes_[id];
    if (n.kind != OpKind::kInput) continue;
    auto it = bindings.find(n.label);
    if (it != bindings.end()) {
      if (it->second.rows() != n.rows || it->second.cols() != n.cols) {
        throw ShapeError("node " + std::to_string(id) + " (input '" + n.label + "'): bound " +
                         dims(it->second.rows(), it->second.cols()) + ", declared " +
                         dims(n.rows, n.cols));
      }
      n.value = it->second;
    } else if (n.value.empty()) {
      throw BindingError("node " + std::to_string(id) + " (input '" + n.label + "') is unbound");
    }
  }
}

void Graph::forward(const Bindings& bindings, Semantics semantics) {
  if (semantics == Semantics::kFrozen && !frozen_) {
    throw BindingError("forward with frozen semantics requires freeze() first");
  }
  bind_inputs(bindings, 0);
  for (auto& n : nodes_) evaluate(n, semantics);
  evaluated_count_ = nodes_.size();
}

void Graph::forward_pending() {
  bind_inputs({}, evaluated_count_);
  for (NodeId id = evaluated_count_; id < nodes_.size(); ++id) {
    evaluate(nodes_[id], Semantics::kStandard);
  }
  evaluated_count_ = nodes_.size();
}

void Graph::freeze() {
  if (!has_run()) throw BindingError("freeze() before forward()");
  for (auto& n : nodes_) {
    if (n.kind == OpKind::kStopGradient) {
      n.frozen_a = nodes_[n.parents[0]].value;
    } else if (n.kind == OpKind::kStraightThrough) {
      n.frozen_a = nodes_[n.parents[0]].value;
      n.frozen_b = nodes_[n.parents[1]].value;
    }
  }
  frozen_ = true;
}

Tensor& Graph::grad_of(NodeId id) {
  auto& n = nodes_[id];
  if (!has_adjoint_[id]) {
    if (n.adjoint.rows() != n.rows || n.adjoint.cols() != n.cols) {
      n.adjoint = Tensor(n.rows, n.cols);
    } else {
      n.adjoint.fill(0.0);
    }
    has_adjoint_[id] = 1;
  }
  return n.adjoint;
}

void Graph::propagate(const Node& n) {
  const Tensor& g = n.adjoint;
  const std::size_t size = n.rows * n.cols;
  auto val = [&](std::size_t k) -> const Tensor& { return nodes_[n.parents[k]].value; };
  switch (n.kind) {
    case OpKind::kInput:
    case OpKind::kParameter:
    case OpKind::kConstant:
    case OpKind::kStopGradient:
      break;
    case OpKind::kMatMul: {
      const auto& a = val(0);
      const auto& b = val(1);
      if (needs_grad_[n.parents[0]]) {
        Tensor& ga = grad_of(n.parents[0]);
        gemm_abt_acc(g.storage().data(), b.storage().data(), ga.storage().data(), a.rows(),
                     n.cols, a.cols());
      }
      if (needs_grad_[n.parents[1]]) {
        Tensor& gb = grad_of(n.parents[1]);
        gemm_atb_acc(a.storage().data(), g.storage().data(), gb.storage().data(), a.rows(),
                     a.cols(), n.cols);
      }
      break;
    }
    case OpKind::kAdd: {
      Tensor& ga = grad_of(n.parents[0]);
      for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
      Tensor& gb = grad_of(n.parents[1]);
      if (gb.size() == size) {
        for (std::size_t i = 0; i < size; ++i) gb[i] += g[i];
      } else {
        for (std::size_t r = 0; r < n.rows; ++r)
          for (std::size_t c = 0; c < n.cols; ++c) gb[c] += g[r * n.cols + c];
      }
      break;
    }
    case OpKind::kSub: {
      Tensor& ga = grad_of(n.parents[0]);
      for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
      Tensor& gb = grad_of(n.parents[1]);
      for (std::size_t i = 0; i < size; ++i) gb[i] -= g[i];
      break;
    }
    case OpKind::kMul: {
      const auto& a = val(0);
      const auto& b = val(1);
      if (b.size() == size) {
        Tensor& ga = grad_of(n.parents[0]);
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * b[i];
        Tensor& gb = grad_of(n.parents[1]);
        for (std::size_t i = 0; i < size; ++i) gb[i] += g[i] * a[i];
      } else {
        Tensor& ga = grad_of(n.parents[0]);
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * b[0];
        double s = 0.0;
        for (std::size_t i = 0; i < size; ++i) s += g[i] * a[i];
        grad_of(n.parents[1])[0] += s;
      }
      break;
    }
    case OpKind::kScale: {
      Tensor& ga = grad_of(n.parents[0]);
      for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * n.constant;
      break;
    }
    case OpKind::kSigmoid: {
      Tensor& ga = grad_of(n.parents[0]);
      for (std::size_t i = 0; i < size; ++i) {
        const double y = n.value[i];
        ga[i] += g[i] * y * (1.0 - y);
      }
      break;
    }
    case OpKind::kTanh: {
      Tensor& ga = grad_of(n.parents[0]);
      for (std::size_t i = 0; i < size; ++i) {
        const double y = n.value[i];
        ga[i] += g[i] * (1.0 - y * y);
      }
      break;
    }
    case OpKind::kExp: {
      Tensor& ga = grad_of(n.parents[0]);
      for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * n.value[i];
      break;
    }
    case OpKind::kSquare: {
      const auto& a = val(0);
      Tensor& ga = grad_of(n.parents[0]);
      for (std::size_t i = 0; i < size; ++i) ga[i] += 2.0 * a[i] * g[i];
      break;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
      Tensor& ga = grad_of(n.parents[0]);
      const double s = n.kind == OpKind::kSum ? g[0] : g[0] / static_cast<double>(ga.size());
      for (auto& v : ga.storage()) v += s;
      break;
    }
    case OpKind::kMeanRows: {
      Tensor& ga = grad_of(n.parents[0]);
      const double inv = 1.0 / static_cast<double>(ga.rows());
      for (std::size_t r = 0; r < ga.rows(); ++r)
        for (std::size_t c = 0; c < n.cols; ++c) ga.at(r, c) += g[c] * inv;
      break;
    }
    case OpKind::kRow:
    case OpKind::kGatherRow: {
      Tensor& ga = grad_of(n.parents[0]);
      for (std::size_t c = 0; c < n.cols; ++c) ga.at(n.index, c) += g[c];
      break;
    }
    case OpKind::kStackRows: {
      for (std::size_t r = 0; r < n.rows; ++r) {
        Tensor& gr = grad_of(n.parents[r]);
        for (std::size_t c = 0; c < n.cols; ++c) gr[c] += g[r * n.cols + c];
      }
      break;
    }
    case OpKind::kConcatCols: {
      Tensor& ga = grad_of(n.parents[0]);
      const std::size_t ca = ga.cols();
      for (std::size_t r = 0; r < n.rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) ga.at(r, c) += g[r * n.cols + c];
      Tensor& gb = grad_of(n.parents[1]);
      const std::size_t cb = gb.cols();
      for (std::size_t r = 0; r < n.rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) gb.at(r, c) += g[r * n.cols + ca + c];
      break;
    }
    case OpKind::kTileRows: {
      Tensor& ga = grad_of(n.parents[0]);
      for (std::size_t r = 0; r < n.rows; ++r)
        for (std::size_t c = 0; c < n.cols; ++c) ga[c] += g[r * n.cols + c];
      break;
    }
    case OpKind::kStraightThrough: {
      Tensor& ga = grad_of(n.parents[0]);
      for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
      break;
    }
    case OpKind::kGaussianKL: {
      const auto& mu = val(0);
      const auto& lv = val(1);
      Tensor& gm = grad_of(n.parents[0]);
      for (std::size_t i = 0; i < mu.size(); ++i) gm[i] += g[0] * mu[i];
      Tensor& gv = grad_of(n.parents[1]);
      for (std::size_t i = 0; i < lv.size(); ++i) gv[i] += g[0] * 0.5 * (std::exp(lv[i]) - 1.0);
      break;
    }
  }
}

ParamGrads Graph::backward(NodeId loss) { return backward(loss, {}); }

ParamGrads Graph::backward(NodeId loss, std::span<const Parameter* const> wrt) {
  if (loss >= nodes_.size()) throw ShapeError("backward: unknown loss node " + std::to_string(loss));
  if (!has_run()) throw BindingError("backward() before forward()");
  const auto& ln = nodes_[loss];
  if (ln.rows != 1 || ln.cols != 1) {
    throw ShapeError("backward: loss node " + std::to_string(loss) + " (" + op_name(ln.kind) +
                     ") is " + dims(ln.rows, ln.cols) + ", not scalar");
  }
  needs_grad_.assign(nodes_.size(), 0);
  has_adjoint_.assign(nodes_.size(), 0);
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    auto& n = nodes_[id];
    if (n.kind == OpKind::kParameter) {
      needs_grad_[id] = wrt.empty() || std::find(wrt.begin(), wrt.end(), n.param) != wrt.end();
    } else {
      for (auto p : n.parents) needs_grad_[id] |= needs_grad_[p];
    }
  }
  grad_of(loss)[0] = 1.0;
  for (NodeId id = loss + 1; id-- > 0;) {
    if (!has_adjoint_[id] || !needs_grad_[id]) continue;
    propagate(nodes_[id]);
  }
  ParamGrads grads;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const auto& n = nodes_[id];
    if (n.kind != OpKind::kParameter) continue;
    if (!wrt.empty() && std::find(wrt.begin(), wrt.end(), n.param) == wrt.end()) continue;
    grads.emplace(n.label, has_adjoint_[id] ? n.adjoint : Tensor(n.rows, n.cols));
  }
  return grads;
}

const Tensor& Graph::value(NodeId id) const {
  const auto& n = checked(id, "value");
  if (id >= evaluated_count_ && n.kind != OpKind::kConstant) {
    throw BindingError("value of node " + std::to_string(id) + " read before forward()");
  }
  return n.value;
}

const Tensor& Graph::adjoint(NodeId id) const {
  static const Tensor kEmpty;
  const auto& n = checked(id, "adjoint");
  return id < has_adjoint_.size() && has_adjoint_[id] ? n.adjoint : kEmpty;
}

std::vector<Parameter*> Graph::parameters() const {
  std::vector<Parameter*> out;
  for (const auto& n : nodes_) {
    if (n.kind == OpKind::kParameter) out.push_back(n.param);
  }
  return out;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradientReport finite_diff_check(Graph& graph, NodeId loss, double h, Semantics semantics) {
  GradientReport report;
  graph.forward();
  const ParamGrads grads = graph.backward(loss);
  if (semantics == Semantics::kFrozen) graph.freeze();
  for (Parameter* p : graph.parameters()) {
    GradientReport::Entry entry{.parameter = p->name};
    const Tensor& g = grads.at(p->name);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      graph.forward({}, semantics);
      const double up = graph.value(loss).item();
      p->value[i] = saved - h;
      graph.forward({}, semantics);
      const double down = graph.value(loss).item();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(g[i] - numeric));
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(g[i], numeric));
      ++report.coordinates;
    }
    report.max_abs_error = std::max(report.max_abs_error, entry.max_abs_error);
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  graph.forward();
  graph.backward(loss);
  return report;
}

}  // namespace ctrlsynth::ad
