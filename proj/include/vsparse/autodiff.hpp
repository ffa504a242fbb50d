#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vsparse/voxel_core.hpp"

namespace vsparse::ad {

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  AddRow,
  MulRow,
  Scale,
  AddScalar,
  Relu,
  Gelu,
  Sigmoid,
  Log,
  Exp,
  Clamp,
  SoftmaxRows,
  LogSoftmaxRows,
  LayerNormRows,
  GroupNorm,
  GatherRows,
  ScatterAddRows,
  Sum,
  Mean,
  SumRows,
  MeanRows,
  ConcatCols,
  ConcatRows,
  SliceCols,
  Transpose,
  BceWithLogits,
  SparseConv,
};

const char* op_name(OpKind kind);

/// Handle to a tape node.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Append-only reverse-mode tape. Nodes are created in topological order,
/// so the backward sweep walks ids in descending order and each node pushes
/// gradient into its parents in declaration order.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat<T>& grad_out)>;

  Var leaf(Mat<T> value, bool requires_grad = false);
  Var push(OpKind kind, std::vector<Var> parents, Mat<T> value, Backward backward);

  const Mat<T>& value(Var v) const { return node(v).value; }
  /// Accumulated gradient; zeros if nothing flowed into the node.
  Mat<T> grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  OpKind kind(Var v) const { return node(v).kind; }
  const std::vector<Var>& parents(Var v) const { return node(v).parents; }

  /// Gradient buffer of a parent, allocated on first use; nullptr when the
  /// node does not require gradients.
  Mat<T>* grad_buffer(Var v);

  /// Runs the reverse sweep from a 1x1 loss. Previously accumulated
  /// gradients are cleared first, so repeated sweeps are identical.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<Var> parents;
    Mat<T> value;
    Mat<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };
  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
};

template <typename T> Var matmul(Tape<T>& t, Var a, Var b);
template <typename T> Var add(Tape<T>& t, Var a, Var b);
template <typename T> Var sub(Tape<T>& t, Var a, Var b);
template <typename T> Var mul(Tape<T>& t, Var a, Var b);
/// x (R x C) + row (1 x C) broadcast over rows.
template <typename T> Var add_row(Tape<T>& t, Var x, Var row);
template <typename T> Var mul_row(Tape<T>& t, Var x, Var row);
template <typename T> Var scale(Tape<T>& t, Var x, T s);
template <typename T> Var add_scalar(Tape<T>& t, Var x, T s);
/// Subgradient at exactly 0 is 0.
template <typename T> Var relu(Tape<T>& t, Var x);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T> Var gelu(Tape<T>& t, Var x);
template <typename T> Var sigmoid(Tape<T>& t, Var x);
template <typename T> Var log(Tape<T>& t, Var x);
template <typename T> Var exp(Tape<T>& t, Var x);
/// Gradient is passed only where lo < x < hi.
template <typename T> Var clamp(Tape<T>& t, Var x, T lo, T hi);
template <typename T> Var softmax_rows(Tape<T>& t, Var x);
template <typename T> Var log_softmax_rows(Tape<T>& t, Var x);
template <typename T> Var layer_norm_rows(Tape<T>& t, Var x, Var gain, Var bias, T eps = T(1e-5));
/// Normalizes each channel group over all rows (biased variance). Rows are
/// one sample's active sites. No affine; compose with mul_row/add_row.
template <typename T> Var group_norm(Tape<T>& t, Var x, int groups, T eps = T(1e-5));
template <typename T> Var gather_rows(Tape<T>& t, Var x, std::vector<std::uint32_t> rows);
template <typename T>
Var scatter_add_rows(Tape<T>& t, Var x, std::vector<std::uint32_t> rows, Eigen::Index out_rows);
template <typename T> Var sum(Tape<T>& t, Var x);
template <typename T> Var mean(Tape<T>& t, Var x);
template <typename T> Var sum_rows(Tape<T>& t, Var x);
template <typename T> Var mean_rows(Tape<T>& t, Var x);
template <typename T> Var concat_cols(Tape<T>& t, std::span<const Var> parts);
template <typename T> Var concat_rows(Tape<T>& t, std::span<const Var> parts);
template <typename T> Var slice_cols(Tape<T>& t, Var x, Eigen::Index start, Eigen::Index count);
template <typename T> Var transpose(Tape<T>& t, Var x);
/// Element-wise binary cross-entropy from logits against constant targets:
/// softplus(l) - y * l.
template <typename T> Var bce_with_logits(Tape<T>& t, Var logits, Mat<T> targets);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  Eigen::Index worst_entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Builds the graph on a fresh tape from leaf inputs and returns a 1x1 loss.
using GraphBuilder = std::function<Var(Tape<double>&, std::span<const Var>)>;

/// Central differences for every entry of every input, compared with the
/// tape's analytic gradient. Error per entry is
/// |a - n| / max(1e-8, |a| + |n|). The step starts at eps and shrinks by 10x
/// (at most four times) until two successive estimates agree.
GradCheckResult grad_check(const GraphBuilder& builder, std::vector<Mat<double>> inputs,
                           double eps = 1e-5);

}  // namespace vsparse::ad
