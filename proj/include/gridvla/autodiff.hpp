#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "gridvla/tensor.hpp"

namespace gridvla {

// Reverse-mode autodiff over a define-by-run tape. A tape is rebuilt per
// forward pass and never shared between threads; tensors recorded on it are
// treated as immutable. backward() computes adjoints for every node, so
// gradients can be queried at leaves and at intermediates (e.g. the token
// embeddings produced by a lookup).
//
// Primitives: matmul (optionally with transposed rhs), add (with row
// broadcast for biases), subtract, elementwise multiply, scalar multiply,
// tanh, relu, softmax over the last axis, mean, sum, squared L2 norm,
// absolute value, cosine similarity of two vectors, embedding lookup,
// concatenate, slice, plus reshape as a zero-cost view.

template <typename Scalar>
class TapeT;

template <typename Scalar>
struct VarT {
  TapeT<Scalar>* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

template <typename Scalar>
class TapeT {
 public:
  using Tensor = TensorT<Scalar>;
  using Var = VarT<Scalar>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;

  enum class Op {
    Leaf,
    Matmul,
    Add,
    Sub,
    Mul,
    Scale,
    Tanh,
    Relu,
    Softmax,
    Mean,
    Sum,
    SqNorm,
    Abs,
    Cosine,
    Lookup,
    Concat,
    Slice,
    Reshape,
  };

  Var leaf(Tensor v) {
    return push(Op::Leaf, -1, -1, std::move(v));
  }

  Var matmul(Var a, Var b, bool transpose_b = false) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2)
      throw Error("matmul: expects rank-2 operands, got " + shape_str(A.shape) + " x " +
                  shape_str(B.shape));
    int m = A.dim(0), k = A.dim(1);
    int bk = transpose_b ? B.dim(1) : B.dim(0);
    int n = transpose_b ? B.dim(0) : B.dim(1);
    if (k != bk)
      throw Error("matmul: shape mismatch " + shape_str(A.shape) + " x " + shape_str(B.shape) +
                  (transpose_b ? " (rhs transposed)" : ""));
    Tensor out = Tensor::zeros({m, n});
    CMap ma(A.data.data(), m, k);
    MMap mo(out.data.data(), m, n);
    if (transpose_b) {
      CMap mb(B.data.data(), n, k);
      mo.noalias() = ma * mb.transpose();
    } else {
      CMap mb(B.data.data(), k, n);
      mo.noalias() = ma * mb;
    }
    Var v = push(Op::Matmul, a.id, b.id, std::move(out));
    node(v).flag = transpose_b;
    return v;
  }

  // add supports equal shapes and a {1, n} bias broadcast over the rows of a
  // {m, n} lhs; nothing wider is needed by the model.
  Var add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.same_shape(B)) {
      Tensor out(A.shape, A.data + B.data);
      return push(Op::Add, a.id, b.id, std::move(out));
    }
    if (A.rank() == 2 && B.rank() == 2 && B.dim(0) == 1 && A.dim(1) == B.dim(1)) {
      Tensor out = A;
      CMap mb(B.data.data(), 1, B.dim(1));
      MMap mo(out.data.data(), A.dim(0), A.dim(1));
      mo.rowwise() += mb.row(0);
      Var v = push(Op::Add, a.id, b.id, std::move(out));
      node(v).flag = true;  // row broadcast
      return v;
    }
    throw Error("add: shape mismatch " + shape_str(A.shape) + " + " + shape_str(B.shape));
  }

  Var sub(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B))
      throw Error("subtract: shape mismatch " + shape_str(A.shape) + " - " + shape_str(B.shape));
    Tensor out(A.shape, A.data - B.data);
    return push(Op::Sub, a.id, b.id, std::move(out));
  }

  Var mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B))
      throw Error("multiply: shape mismatch " + shape_str(A.shape) + " * " + shape_str(B.shape));
    Tensor out(A.shape, A.data * B.data);
    return push(Op::Mul, a.id, b.id, std::move(out));
  }

  Var scale(Var a, Scalar s) {
    const Tensor& A = value(a);
    Tensor out(A.shape, A.data * s);
    Var v = push(Op::Scale, a.id, -1, std::move(out));
    node(v).scalar = s;
    return v;
  }

  Var tanh(Var a) {
    const Tensor& A = value(a);
    Tensor out(A.shape, A.data.tanh());
    return push(Op::Tanh, a.id, -1, std::move(out));
  }

  Var relu(Var a) {
    const Tensor& A = value(a);
    Tensor out(A.shape, A.data.max(Scalar(0)));
    return push(Op::Relu, a.id, -1, std::move(out));
  }

  // Softmax over the last axis of a rank-1 or rank-2 tensor, computed with
  // max subtraction.
  Var softmax(Var a) {
    const Tensor& A = value(a);
    if (A.rank() != 1 && A.rank() != 2)
      throw Error("softmax: expects rank-1 or rank-2, got " + shape_str(A.shape));
    int rows = A.rank() == 2 ? A.dim(0) : 1;
    int cols = A.rank() == 2 ? A.dim(1) : A.dim(0);
    Tensor out = Tensor::zeros(A.shape);
    for (int r = 0; r < rows; ++r) {
      auto row = A.data.segment(Eigen::Index(r) * cols, cols);
      Scalar m = row.maxCoeff();
      auto e = (row - m).exp();
      out.data.segment(Eigen::Index(r) * cols, cols) = e / e.sum();
    }
    return push(Op::Softmax, a.id, -1, std::move(out));
  }

  Var mean(Var a) {
    const Tensor& A = value(a);
    return push(Op::Mean, a.id, -1, Tensor::scalar(A.data.mean()));
  }

  Var sum(Var a) {
    const Tensor& A = value(a);
    return push(Op::Sum, a.id, -1, Tensor::scalar(A.data.sum()));
  }

  Var squared_norm(Var a) {
    const Tensor& A = value(a);
    return push(Op::SqNorm, a.id, -1, Tensor::scalar((A.data * A.data).sum()));
  }

  Var abs(Var a) {
    const Tensor& A = value(a);
    Tensor out(A.shape, A.data.abs());
    return push(Op::Abs, a.id, -1, std::move(out));
  }

  // Cosine similarity of two same-sized tensors viewed as flat vectors.
  Var cosine(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.size() != B.size())
      throw Error("cosine-similarity: size mismatch " + shape_str(A.shape) + " vs " +
                  shape_str(B.shape));
    Scalar na = std::sqrt((A.data * A.data).sum());
    Scalar nb = std::sqrt((B.data * B.data).sum());
    if (na == Scalar(0) || nb == Scalar(0))
      throw Error("cosine-similarity: zero vector operand (shapes " + shape_str(A.shape) + ", " +
                  shape_str(B.shape) + ")");
    Scalar dot = (A.data * B.data).sum();
    return push(Op::Cosine, a.id, b.id, Tensor::scalar(dot / (na * nb)));
  }

  // Embedding lookup: gathers rows of a {V, d} table.
  Var lookup(Var table, std::vector<int> ids) {
    const Tensor& T = value(table);
    if (T.rank() != 2) throw Error("embedding-lookup: table must be rank-2, got " + shape_str(T.shape));
    int v = T.dim(0), d = T.dim(1);
    Tensor out = Tensor::zeros({int(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= v)
        throw Error("embedding-lookup: id " + std::to_string(ids[i]) + " out of range [0," +
                    std::to_string(v) + ")");
      out.data.segment(Eigen::Index(i) * d, d) = T.data.segment(Eigen::Index(ids[i]) * d, d);
    }
    Var r = push(Op::Lookup, table.id, -1, std::move(out));
    node(r).ids = std::move(ids);
    return r;
  }

  // Concatenate along axis 0; trailing dimensions must match.
  Var concat(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != B.rank() || A.rank() < 1)
      throw Error("concatenate: rank mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    for (int i = 1; i < A.rank(); ++i)
      if (A.dim(i) != B.dim(i))
        throw Error("concatenate: trailing shape mismatch " + shape_str(A.shape) + " vs " +
                    shape_str(B.shape));
    std::vector<int> s = A.shape;
    s[0] += B.dim(0);
    Tensor out = Tensor::zeros(s);
    out.data.head(A.size()) = A.data;
    out.data.tail(B.size()) = B.data;
    return push(Op::Concat, a.id, b.id, std::move(out));
  }

  // Slice [begin, end) along axis 0 or 1 of a rank-1 or rank-2 tensor.
  Var slice(Var a, int axis, int begin, int end) {
    const Tensor& A = value(a);
    if (A.rank() != 1 && A.rank() != 2)
      throw Error("slice: expects rank-1 or rank-2, got " + shape_str(A.shape));
    int r = A.rank() == 2 ? A.dim(0) : 1;
    int c = A.rank() == 2 ? A.dim(1) : A.dim(0);
    int extent = axis == 0 ? (A.rank() == 2 ? r : c) : c;
    if (axis < 0 || axis >= A.rank() || begin < 0 || end > extent || begin >= end)
      throw Error("slice: invalid range [" + std::to_string(begin) + "," + std::to_string(end) +
                  ") on axis " + std::to_string(axis) + " of " + shape_str(A.shape));
    Tensor out;
    if (A.rank() == 1) {
      out = Tensor::zeros({end - begin});
      out.data = A.data.segment(begin, end - begin);
    } else if (axis == 0) {
      out = Tensor::zeros({end - begin, c});
      out.data = A.data.segment(Eigen::Index(begin) * c, Eigen::Index(end - begin) * c);
    } else {
      out = Tensor::zeros({r, end - begin});
      CMap ma(A.data.data(), r, c);
      MMap mo(out.data.data(), r, end - begin);
      mo = ma.middleCols(begin, end - begin);
    }
    Var v = push(Op::Slice, a.id, -1, std::move(out));
    node(v).axis = axis;
    node(v).begin = begin;
    node(v).end = end;
    return v;
  }

  // Zero-cost view with a new shape; gradients pass through unchanged.
  Var reshape(Var a, std::vector<int> s) {
    const Tensor& A = value(a);
    return push(Op::Reshape, a.id, -1, A.reshaped(std::move(s)));
  }

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }

  // Valid after backward(); zero for nodes not on any path to the root.
  const Tensor& grad(Var v) const {
    if (!ran_backward_) throw Error("grad: backward() has not been run on this tape");
    return nodes_[check(v)].grad;
  }

  void backward(Var root) {
    const Tensor& r = value(root);
    if (!r.is_scalar())
      throw Error("backward: root must be scalar, got shape " + shape_str(r.shape));
    for (auto& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
    nodes_[size_t(root.id)].grad.data[0] = Scalar(1);
    for (int i = root.id; i >= 0; --i) accumulate(i);
    ran_backward_ = true;
  }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    Tensor value;
    Tensor grad;
    Scalar scalar = Scalar(0);
    bool flag = false;
    int axis = 0, begin = 0, end = 0;
    std::vector<int> ids;
  };

  std::vector<Node> nodes_;
  bool ran_backward_ = false;

  Node& node(Var v) { return nodes_[check(v)]; }

  size_t check(Var v) const {
    if (v.tape != this || v.id < 0 || size_t(v.id) >= nodes_.size())
      throw Error("tape: variable does not belong to this tape");
    return size_t(v.id);
  }

  Var push(Op op, int a, int b, Tensor val) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(val);
    nodes_.push_back(std::move(n));
    ran_backward_ = false;
    return Var{this, int(nodes_.size()) - 1};
  }

  void accumulate(int i) {
    Node& n = nodes_[size_t(i)];
    const auto& g = n.grad.data;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Matmul: {
        Node& A = nodes_[size_t(n.a)];
        Node& B = nodes_[size_t(n.b)];
        int m = A.value.dim(0), k = A.value.dim(1), nn = n.value.dim(1);
        CMap mg(g.data(), m, nn);
        CMap ma(A.value.data.data(), m, k);
        MMap mga(A.grad.data.data(), m, k);
        if (n.flag) {  // C = A * B^T, B is {n, k}
          CMap mb(B.value.data.data(), nn, k);
          MMap mgb(B.grad.data.data(), nn, k);
          mga.noalias() += mg * mb;
          mgb.noalias() += mg.transpose() * ma;
        } else {
          CMap mb(B.value.data.data(), k, nn);
          MMap mgb(B.grad.data.data(), k, nn);
          mga.noalias() += mg * mb.transpose();
          mgb.noalias() += ma.transpose() * mg;
        }
        break;
      }
      case Op::Add: {
        Node& A = nodes_[size_t(n.a)];
        Node& B = nodes_[size_t(n.b)];
        A.grad.data += g;
        if (n.flag) {
          int rows = A.value.dim(0), cols = A.value.dim(1);
          CMap mg(g.data(), rows, cols);
          MMap mgb(B.grad.data.data(), 1, cols);
          mgb += mg.colwise().sum();
        } else {
          B.grad.data += g;
        }
        break;
      }
      case Op::Sub:
        nodes_[size_t(n.a)].grad.data += g;
        nodes_[size_t(n.b)].grad.data -= g;
        break;
      case Op::Mul:
        nodes_[size_t(n.a)].grad.data += g * nodes_[size_t(n.b)].value.data;
        nodes_[size_t(n.b)].grad.data += g * nodes_[size_t(n.a)].value.data;
        break;
      case Op::Scale:
        nodes_[size_t(n.a)].grad.data += g * n.scalar;
        break;
      case Op::Tanh:
        nodes_[size_t(n.a)].grad.data += g * (Scalar(1) - n.value.data * n.value.data);
        break;
      case Op::Relu: {
        Node& A = nodes_[size_t(n.a)];
        A.grad.data += g * (A.value.data > Scalar(0)).template cast<Scalar>();
        break;
      }
      case Op::Softmax: {
        Node& A = nodes_[size_t(n.a)];
        int rows = n.value.rank() == 2 ? n.value.dim(0) : 1;
        int cols = n.value.rank() == 2 ? n.value.dim(1) : n.value.dim(0);
        for (int r = 0; r < rows; ++r) {
          auto s = n.value.data.segment(Eigen::Index(r) * cols, cols);
          auto gy = g.segment(Eigen::Index(r) * cols, cols);
          Scalar dot = (gy * s).sum();
          A.grad.data.segment(Eigen::Index(r) * cols, cols) += s * (gy - dot);
        }
        break;
      }
      case Op::Mean:
        nodes_[size_t(n.a)].grad.data += g[0] / Scalar(nodes_[size_t(n.a)].value.size());
        break;
      case Op::Sum:
        nodes_[size_t(n.a)].grad.data += g[0];
        break;
      case Op::SqNorm:
        nodes_[size_t(n.a)].grad.data += Scalar(2) * g[0] * nodes_[size_t(n.a)].value.data;
        break;
      case Op::Abs: {
        Node& A = nodes_[size_t(n.a)];
        A.grad.data += g * A.value.data.sign();
        break;
      }
      case Op::Cosine: {
        Node& A = nodes_[size_t(n.a)];
        Node& B = nodes_[size_t(n.b)];
        Scalar na2 = (A.value.data * A.value.data).sum();
        Scalar nb2 = (B.value.data * B.value.data).sum();
        Scalar na = std::sqrt(na2), nb = std::sqrt(nb2);
        Scalar c = n.value.data[0];
        A.grad.data += g[0] * (B.value.data / (na * nb) - c * A.value.data / na2);
        B.grad.data += g[0] * (A.value.data / (na * nb) - c * B.value.data / nb2);
        break;
      }
      case Op::Lookup: {
        Node& T = nodes_[size_t(n.a)];
        int d = T.value.dim(1);
        for (size_t r = 0; r < n.ids.size(); ++r)
          T.grad.data.segment(Eigen::Index(n.ids[r]) * d, d) += g.segment(Eigen::Index(r) * d, d);
        break;
      }
      case Op::Concat: {
        Node& A = nodes_[size_t(n.a)];
        Node& B = nodes_[size_t(n.b)];
        A.grad.data += g.head(A.value.size());
        B.grad.data += g.tail(B.value.size());
        break;
      }
      case Op::Slice: {
        Node& A = nodes_[size_t(n.a)];
        if (A.value.rank() == 1) {
          A.grad.data.segment(n.begin, n.end - n.begin) += g;
        } else if (n.axis == 0) {
          int c = A.value.dim(1);
          A.grad.data.segment(Eigen::Index(n.begin) * c, Eigen::Index(n.end - n.begin) * c) += g;
        } else {
          int r = A.value.dim(0), c = A.value.dim(1);
          MMap mga(A.grad.data.data(), r, c);
          CMap mg(g.data(), r, n.end - n.begin);
          mga.middleCols(n.begin, n.end - n.begin) += mg;
        }
        break;
      }
      case Op::Reshape:
        nodes_[size_t(n.a)].grad.data += g;
        break;
    }
  }
};

using Tape = TapeT<double>;
using Var = VarT<double>;

// Free-function spellings so model code composes like expressions.
template <typename S> VarT<S> matmul(VarT<S> a, VarT<S> b, bool transpose_b = false) {
  return a.tape->matmul(a, b, transpose_b);
}
template <typename S> VarT<S> add(VarT<S> a, VarT<S> b) { return a.tape->add(a, b); }
template <typename S> VarT<S> sub(VarT<S> a, VarT<S> b) { return a.tape->sub(a, b); }
template <typename S> VarT<S> mul(VarT<S> a, VarT<S> b) { return a.tape->mul(a, b); }
template <typename S> VarT<S> scale(VarT<S> a, S s) { return a.tape->scale(a, s); }
template <typename S> VarT<S> tanh(VarT<S> a) { return a.tape->tanh(a); }
template <typename S> VarT<S> relu(VarT<S> a) { return a.tape->relu(a); }
template <typename S> VarT<S> softmax(VarT<S> a) { return a.tape->softmax(a); }
template <typename S> VarT<S> mean(VarT<S> a) { return a.tape->mean(a); }
template <typename S> VarT<S> sum(VarT<S> a) { return a.tape->sum(a); }
template <typename S> VarT<S> squared_norm(VarT<S> a) { return a.tape->squared_norm(a); }
template <typename S> VarT<S> abs(VarT<S> a) { return a.tape->abs(a); }
template <typename S> VarT<S> cosine(VarT<S> a, VarT<S> b) { return a.tape->cosine(a, b); }
template <typename S> VarT<S> lookup(VarT<S> table, std::vector<int> ids) {
  return table.tape->lookup(table, std::move(ids));
}
template <typename S> VarT<S> concat(VarT<S> a, VarT<S> b) { return a.tape->concat(a, b); }
template <typename S> VarT<S> slice(VarT<S> a, int axis, int begin, int end) {
  return a.tape->slice(a, axis, begin, end);
}
template <typename S> VarT<S> reshape(VarT<S> a, std::vector<int> s) {
  return a.tape->reshape(a, std::move(s));
}

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |central| + 1e-12) for a scalar-valued tape function.
template <typename S>
double grad_check(const std::function<VarT<S>(TapeT<S>&, VarT<S>)>& f, const TensorT<S>& point,
                  double h) {
  if (h <= 0) throw Error("grad_check: step must be positive");
  TapeT<S> tape;
  VarT<S> x = tape.leaf(point);
  VarT<S> y = f(tape, x);
  tape.backward(y);
  TensorT<S> analytic = tape.grad(x);

  double worst = 0.0;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    auto eval = [&](double delta) {
      TensorT<S> p = point;
      p.data[i] += S(delta);
      TapeT<S> t;
      VarT<S> xi = t.leaf(p);
      return double(t.value(f(t, xi)).value());
    };
    double central = (eval(h) - eval(-h)) / (2.0 * h);
    double a = double(analytic.data[i]);
    double err = std::fabs(a - central) / (std::fabs(a) + std::fabs(central) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace gridvla
