#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ctrlsynth/tensor.hpp"

namespace ctrlsynth::ad {

/// A named trainable tensor. Graphs refer to parameters without owning them,
/// so the same parameter can appear in many short-lived graphs.
struct Parameter {
  std::string name;
  Tensor value;
};

using NodeId = std::size_t;
using Bindings = std::map<std::string, Tensor>;
/// Parameter name -> gradient of the loss w.r.t. that parameter.
using ParamGrads = std::map<std::string, Tensor>;

enum class OpKind {
  kInput,
  kParameter,
  kConstant,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kSigmoid,
  kTanh,
  kExp,
  kSquare,
  kSum,
  kMean,
  kMeanRows,
  kRow,
  kStackRows,
  kConcatCols,
  kTileRows,
  kGatherRow,
  kStopGradient,
  kStraightThrough,
  kGaussianKL,
};

const char* op_name(OpKind kind);

struct Node {
  OpKind kind = OpKind::kConstant;
  std::vector<NodeId> parents;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Tensor value;
  Tensor adjoint;
  std::string label;
  Parameter* param = nullptr;
  double constant = 0.0;
  std::size_t index = 0;
  // Forward values captured by Graph::freeze() for the surrogate semantics.
  Tensor frozen_a;
  Tensor frozen_b;
};

/// How stop-gradient and straight-through nodes evaluate during forward().
///  - kStandard: sg(u) = u, st(a, b) = b.
///  - kFrozen:   sg(u) = u0, st(a, b) = b0 + (a - a0), with u0/a0/b0 captured
///               by freeze(). The frozen function has exactly the derivatives
///               that backward() reports, so finite differences of it audit
///               the gradient routing of sg and straight-through.
enum class Semantics { kStandard, kFrozen };

/// Reverse-mode tape over dense tensors.
///
/// Nodes are appended in topological order and identified by their position.
/// Shapes are inferred when a node is created, so wiring errors surface at
/// build time; forward() then evaluates every node in id order and backward()
/// sweeps adjoints in descending id order. Parameter gradients are reported
/// in ascending node-id order.
class Graph {
 public:
  NodeId input(std::string name, std::size_t rows, std::size_t cols);
  NodeId parameter(Parameter& p);
  NodeId constant(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  /// Elementwise sum; `b` may also be a single row broadcast over `a`'s rows.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  /// Elementwise product; `b` may also be 1x1.
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId exp(NodeId a);
  NodeId square(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  /// Column-wise mean over rows: (T x n) -> (1 x n).
  NodeId mean_rows(NodeId a);
  NodeId row(NodeId a, std::size_t r);
  NodeId stack_rows(std::span<const NodeId> rows);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId tile_rows(NodeId a, std::size_t count);
  NodeId gather_row(NodeId a, std::size_t r);
  NodeId stop_gradient(NodeId a);
  /// Forwards `b`, routes the whole adjoint to `a`.
  NodeId straight_through(NodeId a, NodeId b);
  /// KL(N(mu, exp(logvar)) || N(0, I)) summed over elements.
  NodeId gaussian_kl(NodeId mu, NodeId logvar);

  /// Sum of squared differences, composed from primitive nodes.
  NodeId squared_distance(NodeId a, NodeId b);

  void forward(const Bindings& bindings = {}, Semantics semantics = Semantics::kStandard);
  /// Evaluates only nodes appended since the last evaluation. Lets a builder
  /// read an intermediate value (e.g. an encoder output) and keep extending.
  void forward_pending();
  /// Adjoints of all parameter nodes; unreached parameters get zero tensors.
  ParamGrads backward(NodeId loss);
  /// Same, but only propagates along paths that reach the listed parameters.
  ParamGrads backward(NodeId loss, std::span<const Parameter* const> wrt);
  /// Captures the current forward values feeding sg and straight-through nodes.
  void freeze();

  const Tensor& value(NodeId id) const;
  const Tensor& adjoint(NodeId id) const;
  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  std::vector<Parameter*> parameters() const;
  bool has_run() const { return evaluated_count_ == nodes_.size() && !nodes_.empty(); }

 private:
  NodeId push(Node node);
  const Node& checked(NodeId id, const char* op) const;
  [[noreturn]] void shape_fail(const char* op, const std::string& detail) const;
  void evaluate(Node& n, Semantics semantics);
  void propagate(const Node& n);
  Tensor& grad_of(NodeId id);

  void bind_inputs(const Bindings& bindings, NodeId first);

  std::vector<Node> nodes_;
  std::size_t evaluated_count_ = 0;
  std::vector<char> needs_grad_;
  // Adjoint buffers stay allocated across backward() calls; this marks the
  // ones written during the current sweep.
  std::vector<char> has_adjoint_;
  bool frozen_ = false;
};

/// Result of comparing backward() against central finite differences.
struct GradientReport {
  struct Entry {
    std::string parameter;
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
  };
  std::vector<Entry> entries;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Relative error with a floor on the denominator. Central differences at
/// h = 1e-5 carry roundoff near 1e-11, so gradients below the floor are
/// judged on absolute error (<= 1e-9 for a 1e-5 tolerance) instead.
double relative_error(double analytic, double numeric, double floor = 1e-4);

/// Central-difference audit of every parameter coordinate of `loss`.
/// The graph is re-evaluated with each coordinate perturbed by +-h and then
/// restored. With kFrozen semantics the graph is frozen at the current point
/// first, so sg/straight-through edges are audited against their defined
/// routing; with kStandard they are compared against the true derivative.
GradientReport finite_diff_check(Graph& graph, NodeId loss, double h,
                                 Semantics semantics = Semantics::kFrozen);

}  // namespace ctrlsynth::ad
