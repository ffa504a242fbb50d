#include "vsparse/autodiff.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace vsparse::ad {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::AddRow: return "add_row";
    case OpKind::MulRow: return "mul_row";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Relu: return "relu";
    case OpKind::Gelu: return "gelu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Log: return "log";
    case OpKind::Exp: return "exp";
    case OpKind::Clamp: return "clamp";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::LogSoftmaxRows: return "log_softmax_rows";
    case OpKind::LayerNormRows: return "layer_norm_rows";
    case OpKind::GroupNorm: return "group_norm";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::ScatterAddRows: return "scatter_add_rows";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SumRows: return "sum_rows";
    case OpKind::MeanRows: return "mean_rows";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::Transpose: return "transpose";
    case OpKind::BceWithLogits: return "bce_with_logits";
    case OpKind::SparseConv: return "sparse_conv";
  }
  return "unknown";
}

namespace {

template <typename M>
std::string shape_str(const M& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <typename A, typename B>
[[noreturn]] void shape_fail(OpKind k, const A& a, const B& b) {
  throw ShapeError(std::string(op_name(k)) + ": shape mismatch " + shape_str(a) + " vs " +
                   shape_str(b));
}

template <typename T>
void require_same(OpKind k, const Mat<T>& a, const Mat<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(k, a, b);
}

}  // namespace

template <typename T>
Var Tape<T>::leaf(Mat<T> value, bool requires_grad) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::push(OpKind kind, std::vector<Var> parents, Mat<T> value, Backward backward) {
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  for (Var p : parents) {
    if (node(p).requires_grad) n.requires_grad = true;
  }
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::out_of_range("tape: invalid node id " + std::to_string(v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
  return const_cast<Node&>(static_cast<const Tape&>(*this).node(v));
}

template <typename T>
Mat<T> Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.has_grad) return n.grad;
  return Mat<T>::Zero(n.value.rows(), n.value.cols());
}

template <typename T>
Mat<T>* Tape<T>::grad_buffer(Var v) {
  Node& n = node(v);
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Mat<T>::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return &n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.rows() != 1 || ln.value.cols() != 1) {
    throw ShapeError("backward: loss must be 1x1, got " + shape_str(ln.value));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  if (!ln.requires_grad) return;
  Mat<T>* g = grad_buffer(loss);
  (*g)(0, 0) = T(1);
  for (std::int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || !n.backward) continue;
    // The closure may call grad_buffer, which never reallocates nodes_.
    n.backward(*this, n.grad);
  }
}

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const Mat<T>& A = t.value(a);
  const Mat<T>& B = t.value(b);
  if (A.cols() != B.rows()) shape_fail(OpKind::MatMul, A, B);
  Mat<T> out = A * B;
  return t.push(OpKind::MatMul, {a, b}, std::move(out), [a, b](Tape<T>& tp, const Mat<T>& g) {
    if (auto* ga = tp.grad_buffer(a)) ga->noalias() += g * tp.value(b).transpose();
    if (auto* gb = tp.grad_buffer(b)) gb->noalias() += tp.value(a).transpose() * g;
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  require_same(OpKind::Add, t.value(a), t.value(b));
  Mat<T> out = t.value(a) + t.value(b);
  return t.push(OpKind::Add, {a, b}, std::move(out), [a, b](Tape<T>& tp, const Mat<T>& g) {
    if (auto* ga = tp.grad_buffer(a)) *ga += g;
    if (auto* gb = tp.grad_buffer(b)) *gb += g;
  });
}

template <typename T>
Var sub(Tape<T>& t, Var a, Var b) {
  require_same(OpKind::Sub, t.value(a), t.value(b));
  Mat<T> out = t.value(a) - t.value(b);
  return t.push(OpKind::Sub, {a, b}, std::move(out), [a, b](Tape<T>& tp, const Mat<T>& g) {
    if (auto* ga = tp.grad_buffer(a)) *ga += g;
    if (auto* gb = tp.grad_buffer(b)) *gb -= g;
  });
}

template <typename T>
Var mul(Tape<T>& t, Var a, Var b) {
  require_same(OpKind::Mul, t.value(a), t.value(b));
  Mat<T> out = t.value(a).cwiseProduct(t.value(b));
  return t.push(OpKind::Mul, {a, b}, std::move(out), [a, b](Tape<T>& tp, const Mat<T>& g) {
    if (auto* ga = tp.grad_buffer(a)) *ga += g.cwiseProduct(tp.value(b));
    if (auto* gb = tp.grad_buffer(b)) *gb += g.cwiseProduct(tp.value(a));
  });
}

template <typename T>
Var add_row(Tape<T>& t, Var x, Var row) {
  const Mat<T>& X = t.value(x);
  const Mat<T>& R = t.value(row);
  if (R.rows() != 1 || R.cols() != X.cols()) shape_fail(OpKind::AddRow, X, R);
  Mat<T> out = X.rowwise() + R.row(0);
  return t.push(OpKind::AddRow, {x, row}, std::move(out), [x, row](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) *gx += g;
    if (auto* gr = tp.grad_buffer(row)) *gr += g.colwise().sum();
  });
}

template <typename T>
Var mul_row(Tape<T>& t, Var x, Var row) {
  const Mat<T>& X = t.value(x);
  const Mat<T>& R = t.value(row);
  if (R.rows() != 1 || R.cols() != X.cols()) shape_fail(OpKind::MulRow, X, R);
  Mat<T> out = X.array().rowwise() * R.row(0).array();
  return t.push(OpKind::MulRow, {x, row}, std::move(out), [x, row](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) {
      gx->array() += g.array().rowwise() * tp.value(row).row(0).array();
    }
    if (auto* gr = tp.grad_buffer(row)) *gr += g.cwiseProduct(tp.value(x)).colwise().sum();
  });
}

template <typename T>
Var scale(Tape<T>& t, Var x, T s) {
  Mat<T> out = t.value(x) * s;
  return t.push(OpKind::Scale, {x}, std::move(out), [x, s](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) *gx += g * s;
  });
}

template <typename T>
Var add_scalar(Tape<T>& t, Var x, T s) {
  Mat<T> out = t.value(x).array() + s;
  return t.push(OpKind::AddScalar, {x}, std::move(out), [x](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) *gx += g;
  });
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
  Mat<T> out = t.value(x).cwiseMax(T(0));
  return t.push(OpKind::Relu, {x}, std::move(out), [x](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) {
      gx->array() += (tp.value(x).array() > T(0)).select(g.array(), T(0));
    }
  });
}

namespace {
template <typename T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2 / pi)
template <typename T>
constexpr T kGeluA = T(0.044715);
}  // namespace

template <typename T>
Var gelu(Tape<T>& t, Var x) {
  const Mat<T>& X = t.value(x);
  Mat<T> out(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.size(); ++i) {
    const T v = X.data()[i];
    out.data()[i] = T(0.5) * v * (T(1) + std::tanh(kGeluC<T> * (v + kGeluA<T> * v * v * v)));
  }
  return t.push(OpKind::Gelu, {x}, std::move(out), [x](Tape<T>& tp, const Mat<T>& g) {
    auto* gx = tp.grad_buffer(x);
    if (!gx) return;
    const Mat<T>& Xv = tp.value(x);
    for (Eigen::Index i = 0; i < Xv.size(); ++i) {
      const T v = Xv.data()[i];
      const T u = kGeluC<T> * (v + kGeluA<T> * v * v * v);
      const T th = std::tanh(u);
      const T du = kGeluC<T> * (T(1) + T(3) * kGeluA<T> * v * v);
      const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
      gx->data()[i] += g.data()[i] * d;
    }
  });
}

template <typename T>
Var sigmoid(Tape<T>& t, Var x) {
  Mat<T> out = t.value(x).unaryExpr([](T v) {
    return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  });
  Var self{static_cast<std::int32_t>(t.size())};
  return t.push(OpKind::Sigmoid, {x}, std::move(out), [x, self](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) {
      const Mat<T>& y = tp.value(self);
      gx->array() += g.array() * y.array() * (T(1) - y.array());
    }
  });
}

template <typename T>
Var log(Tape<T>& t, Var x) {
  Mat<T> out = t.value(x).array().log();
  return t.push(OpKind::Log, {x}, std::move(out), [x](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) gx->array() += g.array() / tp.value(x).array();
  });
}

template <typename T>
Var exp(Tape<T>& t, Var x) {
  Mat<T> out = t.value(x).array().exp();
  Var self{static_cast<std::int32_t>(t.size())};
  return t.push(OpKind::Exp, {x}, std::move(out), [x, self](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) gx->array() += g.array() * tp.value(self).array();
  });
}

template <typename T>
Var clamp(Tape<T>& t, Var x, T lo, T hi) {
  Mat<T> out = t.value(x).cwiseMax(lo).cwiseMin(hi);
  return t.push(OpKind::Clamp, {x}, std::move(out), [x, lo, hi](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) {
      const auto& v = tp.value(x).array();
      gx->array() += ((v > lo) && (v < hi)).select(g.array(), T(0));
    }
  });
}

template <typename T>
Var softmax_rows(Tape<T>& t, Var x) {
  const Mat<T>& X = t.value(x);
  Mat<T> out(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const T m = X.row(r).maxCoeff();
    out.row(r) = (X.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  Var self{static_cast<std::int32_t>(t.size())};
  return t.push(OpKind::SoftmaxRows, {x}, std::move(out), [x, self](Tape<T>& tp, const Mat<T>& g) {
    auto* gx = tp.grad_buffer(x);
    if (!gx) return;
    const Mat<T>& y = tp.value(self);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const T dot = g.row(r).dot(y.row(r));
      gx->row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

template <typename T>
Var log_softmax_rows(Tape<T>& t, Var x) {
  const Mat<T>& X = t.value(x);
  Mat<T> out(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const T m = X.row(r).maxCoeff();
    const T lse = m + std::log((X.row(r).array() - m).exp().sum());
    out.row(r) = X.row(r).array() - lse;
  }
  Var self{static_cast<std::int32_t>(t.size())};
  return t.push(OpKind::LogSoftmaxRows, {x}, std::move(out), [x, self](Tape<T>& tp, const Mat<T>& g) {
    auto* gx = tp.grad_buffer(x);
    if (!gx) return;
    const Mat<T>& y = tp.value(self);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const T gs = g.row(r).sum();
      gx->row(r).array() += g.row(r).array() - y.row(r).array().exp() * gs;
    }
  });
}

template <typename T>
Var layer_norm_rows(Tape<T>& t, Var x, Var gain, Var bias, T eps) {
  const Mat<T>& X = t.value(x);
  const Mat<T>& G = t.value(gain);
  const Mat<T>& B = t.value(bias);
  if (G.rows() != 1 || G.cols() != X.cols()) shape_fail(OpKind::LayerNormRows, X, G);
  if (B.rows() != 1 || B.cols() != X.cols()) shape_fail(OpKind::LayerNormRows, X, B);
  const Eigen::Index n = X.rows();
  const Eigen::Index c = X.cols();
  Mat<T> xhat(n, c);
  std::vector<T> inv_std(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mu = X.row(r).mean();
    const T var = (X.row(r).array() - mu).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    xhat.row(r) = (X.row(r).array() - mu) * is;
  }
  Mat<T> out = (xhat.array().rowwise() * G.row(0).array()).rowwise() + B.row(0).array();
  return t.push(OpKind::LayerNormRows, {x, gain, bias}, std::move(out),
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape<T>& tp, const Mat<T>& g) {
                  const Mat<T>& Gv = tp.value(gain);
                  if (auto* gx = tp.grad_buffer(x)) {
                    for (Eigen::Index r = 0; r < g.rows(); ++r) {
                      Eigen::Array<T, 1, Eigen::Dynamic> dxh = g.row(r).array() * Gv.row(0).array();
                      const T m1 = dxh.mean();
                      const T m2 = (dxh * xhat.row(r).array()).mean();
                      gx->row(r).array() += inv_std[static_cast<std::size_t>(r)] *
                                            (dxh - m1 - xhat.row(r).array() * m2);
                    }
                  }
                  if (auto* gg = tp.grad_buffer(gain)) *gg += g.cwiseProduct(xhat).colwise().sum();
                  if (auto* gb = tp.grad_buffer(bias)) *gb += g.colwise().sum();
                });
}

template <typename T>
Var group_norm(Tape<T>& t, Var x, int groups, T eps) {
  const Mat<T>& X = t.value(x);
  const Eigen::Index n = X.rows();
  const Eigen::Index c = X.cols();
  if (groups <= 0 || c % groups != 0) {
    throw ShapeError("group_norm: channels " + std::to_string(c) + " not divisible by " +
                     std::to_string(groups) + " groups");
  }
  if (n == 0) {
    Mat<T> out = X;
    return t.push(OpKind::GroupNorm, {x}, std::move(out), [x](Tape<T>& tp, const Mat<T>& g) {
      if (auto* gx = tp.grad_buffer(x)) *gx += g;
    });
  }
  const Eigen::Index cg = c / groups;
  const T count = static_cast<T>(n * cg);
  Mat<T> xhat(n, c);
  std::vector<T> inv_std(static_cast<std::size_t>(groups));
  for (int gi = 0; gi < groups; ++gi) {
    auto blk = X.middleCols(gi * cg, cg);
    const T mu = blk.sum() / count;
    const T var = (blk.array() - mu).square().sum() / count;
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(gi)] = is;
    xhat.middleCols(gi * cg, cg) = (blk.array() - mu) * is;
  }
  Var self{static_cast<std::int32_t>(t.size())};
  return t.push(OpKind::GroupNorm, {x}, std::move(xhat),
                [x, self, groups, cg, count, inv_std = std::move(inv_std)](Tape<T>& tp,
                                                                           const Mat<T>& g) {
                  auto* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  const Mat<T>& xh = tp.value(self);
                  for (int gi = 0; gi < groups; ++gi) {
                    auto gb = g.middleCols(gi * cg, cg);
                    auto xb = xh.middleCols(gi * cg, cg);
                    const T m1 = gb.sum() / count;
                    const T m2 = gb.cwiseProduct(xb).sum() / count;
                    gx->middleCols(gi * cg, cg).array() +=
                        inv_std[static_cast<std::size_t>(gi)] *
                        (gb.array() - m1 - xb.array() * m2);
                  }
                });
}

template <typename T>
Var gather_rows(Tape<T>& t, Var x, std::vector<std::uint32_t> rows) {
  const Mat<T>& X = t.value(x);
  Mat<T> out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= X.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       shape_str(X));
    }
    out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
  }
  return t.push(OpKind::GatherRows, {x}, std::move(out),
                [x, rows = std::move(rows)](Tape<T>& tp, const Mat<T>& g) {
                  auto* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  for (std::size_t i = 0; i < rows.size(); ++i) {
                    gx->row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
                  }
                });
}

template <typename T>
Var scatter_add_rows(Tape<T>& t, Var x, std::vector<std::uint32_t> rows, Eigen::Index out_rows) {
  const Mat<T>& X = t.value(x);
  if (static_cast<std::size_t>(X.rows()) != rows.size()) {
    throw ShapeError("scatter_add_rows: " + std::to_string(rows.size()) + " indices for " +
                     shape_str(X));
  }
  Mat<T> out = Mat<T>::Zero(out_rows, X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= out_rows) {
      throw ShapeError("scatter_add_rows: row " + std::to_string(rows[i]) + " out of range " +
                       std::to_string(out_rows));
    }
    out.row(rows[i]) += X.row(static_cast<Eigen::Index>(i));
  }
  return t.push(OpKind::ScatterAddRows, {x}, std::move(out),
                [x, rows = std::move(rows)](Tape<T>& tp, const Mat<T>& g) {
                  auto* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  for (std::size_t i = 0; i < rows.size(); ++i) {
                    gx->row(static_cast<Eigen::Index>(i)) += g.row(rows[i]);
                  }
                });
}

template <typename T>
Var sum(Tape<T>& t, Var x) {
  Mat<T> out(1, 1);
  out(0, 0) = t.value(x).sum();
  return t.push(OpKind::Sum, {x}, std::move(out), [x](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) gx->array() += g(0, 0);
  });
}

template <typename T>
Var mean(Tape<T>& t, Var x) {
  const Mat<T>& X = t.value(x);
  if (X.size() == 0) throw ShapeError("mean: empty input");
  Mat<T> out(1, 1);
  out(0, 0) = X.mean();
  const T inv = T(1) / static_cast<T>(X.size());
  return t.push(OpKind::Mean, {x}, std::move(out), [x, inv](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) gx->array() += g(0, 0) * inv;
  });
}

template <typename T>
Var sum_rows(Tape<T>& t, Var x) {
  Mat<T> out = t.value(x).rowwise().sum();
  return t.push(OpKind::SumRows, {x}, std::move(out), [x](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) gx->colwise() += g.col(0);
  });
}

template <typename T>
Var mean_rows(Tape<T>& t, Var x) {
  const Mat<T>& X = t.value(x);
  if (X.cols() == 0) throw ShapeError("mean_rows: zero columns");
  Mat<T> out = X.rowwise().mean();
  const T inv = T(1) / static_cast<T>(X.cols());
  return t.push(OpKind::MeanRows, {x}, std::move(out), [x, inv](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) gx->colwise() += g.col(0) * inv;
  });
}

template <typename T>
Var concat_cols(Tape<T>& t, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) shape_fail(OpKind::ConcatCols, t.value(parts[0]), t.value(p));
    cols += t.value(p).cols();
  }
  Mat<T> out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(OpKind::ConcatCols, ps, std::move(out), [ps](Tape<T>& tp, const Mat<T>& g) {
    Eigen::Index off = 0;
    for (Var p : ps) {
      const Eigen::Index w = tp.value(p).cols();
      if (auto* gp = tp.grad_buffer(p)) *gp += g.middleCols(off, w);
      off += w;
    }
  });
}

template <typename T>
Var concat_rows(Tape<T>& t, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (Var p : parts) {
    if (t.value(p).cols() != cols) shape_fail(OpKind::ConcatRows, t.value(parts[0]), t.value(p));
    rows += t.value(p).rows();
  }
  Mat<T> out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(OpKind::ConcatRows, ps, std::move(out), [ps](Tape<T>& tp, const Mat<T>& g) {
    Eigen::Index off = 0;
    for (Var p : ps) {
      const Eigen::Index h = tp.value(p).rows();
      if (auto* gp = tp.grad_buffer(p)) *gp += g.middleRows(off, h);
      off += h;
    }
  });
}

template <typename T>
Var slice_cols(Tape<T>& t, Var x, Eigen::Index start, Eigen::Index count) {
  const Mat<T>& X = t.value(x);
  if (start < 0 || count < 0 || start + count > X.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + shape_str(X));
  }
  Mat<T> out = X.middleCols(start, count);
  return t.push(OpKind::SliceCols, {x}, std::move(out),
                [x, start, count](Tape<T>& tp, const Mat<T>& g) {
                  if (auto* gx = tp.grad_buffer(x)) gx->middleCols(start, count) += g;
                });
}

template <typename T>
Var transpose(Tape<T>& t, Var x) {
  Mat<T> out = t.value(x).transpose();
  return t.push(OpKind::Transpose, {x}, std::move(out), [x](Tape<T>& tp, const Mat<T>& g) {
    if (auto* gx = tp.grad_buffer(x)) *gx += g.transpose();
  });
}

template <typename T>
Var bce_with_logits(Tape<T>& t, Var logits, Mat<T> targets) {
  const Mat<T>& L = t.value(logits);
  require_same(OpKind::BceWithLogits, L, targets);
  Mat<T> out(L.rows(), L.cols());
  for (Eigen::Index i = 0; i < L.size(); ++i) {
    const T l = L.data()[i];
    const T softplus = std::max(l, T(0)) + std::log1p(std::exp(-std::abs(l)));
    out.data()[i] = softplus - targets.data()[i] * l;
  }
  return t.push(OpKind::BceWithLogits, {logits}, std::move(out),
                [logits, targets = std::move(targets)](Tape<T>& tp, const Mat<T>& g) {
                  auto* gl = tp.grad_buffer(logits);
                  if (!gl) return;
                  const Mat<T>& Lv = tp.value(logits);
                  for (Eigen::Index i = 0; i < Lv.size(); ++i) {
                    const T l = Lv.data()[i];
                    const T s = l >= T(0) ? T(1) / (T(1) + std::exp(-l))
                                          : std::exp(l) / (T(1) + std::exp(l));
                    gl->data()[i] += g.data()[i] * (s - targets.data()[i]);
                  }
                });
}

GradCheckResult grad_check(const GraphBuilder& builder, std::vector<Mat<double>> inputs,
                           double eps) {
  auto evaluate = [&](const std::vector<Mat<double>>& in) {
    Tape<double> tape;
    std::vector<Var> vars;
    vars.reserve(in.size());
    for (const auto& m : in) vars.push_back(tape.leaf(m, false));
    Var loss = builder(tape, vars);
    const double v = tape.value(loss)(0, 0);
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite loss");
    return v;
  };

  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.leaf(m, true));
  Var loss = builder(tape, vars);
  if (!std::isfinite(tape.value(loss)(0, 0))) {
    throw std::runtime_error("grad_check: non-finite loss");
  }
  tape.backward(loss);

  const double f0 = tape.value(loss)(0, 0);
  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Mat<double> analytic = tape.grad(vars[k]);
    for (Eigen::Index e = 0; e < inputs[k].size(); ++e) {
      const double orig = inputs[k].data()[e];
      auto central = [&](double h) {
        inputs[k].data()[e] = orig + h;
        const double fp = evaluate(inputs);
        inputs[k].data()[e] = orig - h;
        const double fm = evaluate(inputs);
        inputs[k].data()[e] = orig;
        return (fp - fm) / (2.0 * h);
      };
      // Refine until two successive estimates agree; a kink inside the
      // stencil or truncation error shows up as a step-dependent estimate.
      double h = eps;
      double numeric = central(h);
      for (int level = 0; level < 4; ++level) {
        h *= 0.1;
        const double finer = central(h);
        const double roundoff = 8.0 * std::numeric_limits<double>::epsilon() * (std::abs(f0) + 1.0) / h;
        const bool agree = std::abs(finer - numeric) <= 1e-6 * (std::abs(finer) + std::abs(numeric)) + roundoff;
        numeric = finer;
        if (agree) break;
      }
      const double a = analytic.data()[e];
      if (!std::isfinite(a) || !std::isfinite(numeric)) {
        throw std::runtime_error("grad_check: non-finite gradient");
      }
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (err > res.max_rel_error) {
        res = {err, k, e, a, numeric};
      }
    }
  }
  return res;
}

#define VSPARSE_AD_INSTANTIATE(T)                                                          \
  template class Tape<T>;                                                                  \
  template Var matmul<T>(Tape<T>&, Var, Var);                                              \
  template Var add<T>(Tape<T>&, Var, Var);                                                 \
  template Var sub<T>(Tape<T>&, Var, Var);                                                 \
  template Var mul<T>(Tape<T>&, Var, Var);                                                 \
  template Var add_row<T>(Tape<T>&, Var, Var);                                             \
  template Var mul_row<T>(Tape<T>&, Var, Var);                                             \
  template Var scale<T>(Tape<T>&, Var, T);                                                 \
  template Var add_scalar<T>(Tape<T>&, Var, T);                                            \
  template Var relu<T>(Tape<T>&, Var);                                                     \
  template Var gelu<T>(Tape<T>&, Var);                                                     \
  template Var sigmoid<T>(Tape<T>&, Var);                                                  \
  template Var log<T>(Tape<T>&, Var);                                                      \
  template Var exp<T>(Tape<T>&, Var);                                                      \
  template Var clamp<T>(Tape<T>&, Var, T, T);                                              \
  template Var softmax_rows<T>(Tape<T>&, Var);                                             \
  template Var log_softmax_rows<T>(Tape<T>&, Var);                                         \
  template Var layer_norm_rows<T>(Tape<T>&, Var, Var, Var, T);                             \
  template Var group_norm<T>(Tape<T>&, Var, int, T);                                       \
  template Var gather_rows<T>(Tape<T>&, Var, std::vector<std::uint32_t>);                  \
  template Var scatter_add_rows<T>(Tape<T>&, Var, std::vector<std::uint32_t>, Eigen::Index); \
  template Var sum<T>(Tape<T>&, Var);                                                      \
  template Var mean<T>(Tape<T>&, Var);                                                     \
  template Var sum_rows<T>(Tape<T>&, Var);                                                 \
  template Var mean_rows<T>(Tape<T>&, Var);                                                \
  template Var concat_cols<T>(Tape<T>&, std::span<const Var>);                             \
  template Var concat_rows<T>(Tape<T>&, std::span<const Var>);                             \
  template Var slice_cols<T>(Tape<T>&, Var, Eigen::Index, Eigen::Index);                   \
  template Var transpose<T>(Tape<T>&, Var);                                                \
  template Var bce_with_logits<T>(Tape<T>&, Var, Mat<T>);

VSPARSE_AD_INSTANTIATE(float)
VSPARSE_AD_INSTANTIATE(double)

#undef VSPARSE_AD_INSTANTIATE

}  // namespace vsparse::ad
