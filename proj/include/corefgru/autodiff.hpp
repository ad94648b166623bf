#pragma once

// Dense reverse-mode differentiation over Eigen matrices.
//
// Every value on a tape is a 2-D matrix over Scalar (double for training,
// long double for high-precision reference evaluation). Vectors are column
// vectors (n x 1) and sequences are stored one token per column (d x T), so a
// linear layer reads `W * X` with W shaped (out x in).

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "corefgru/errors.hpp"

namespace corefgru {

using Index = Eigen::Index;
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Tensor = MatrixT<double>;
using Vector = VectorT<double>;

// Column-wise softmax with max subtraction. Works for any floating scalar.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  if (logits.size() == 0) throw InvalidShape("softmax of empty input");
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(logits.rows(), logits.cols());
  for (Index c = 0; c < logits.cols(); ++c) {
    const Scalar top = logits.col(c).maxCoeff();
    out.col(c) = (logits.col(c).array() - top).exp().matrix();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}

// Named, ordered collection of trainable tensors.
template <typename Scalar>
class BasicParameterSet {
 public:
  using TensorType = MatrixT<Scalar>;

  TensorType& add(std::string name, TensorType value) {
    if (index_.count(name) != 0) throw InvalidShape("duplicate parameter '" + name + "'");
    if (!value.allFinite()) throw NonFinite("parameter '" + name + "' has non-finite values");
    index_.emplace(name, values_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.back();
  }

  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }
  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw InvalidShape("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }
  std::size_t size() const { return values_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  TensorType& operator[](std::size_t i) { return values_[i]; }
  const TensorType& operator[](std::size_t i) const { return values_[i]; }
  TensorType& at(std::string_view name) { return values_[index_of(name)]; }
  const TensorType& at(std::string_view name) const { return values_[index_of(name)]; }

  template <typename Other>
  BasicParameterSet<Other> cast() const {
    BasicParameterSet<Other> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<Other>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<TensorType> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Gradient accumulators aligned with a parameter set.
template <typename Scalar>
class BasicGradients {
 public:
  using TensorType = MatrixT<Scalar>;

  BasicGradients() = default;
  explicit BasicGradients(const BasicParameterSet<Scalar>& params) {
    grads_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) grads_.push_back(TensorType::Zero(params[i].rows(), params[i].cols()));
  }

  std::size_t size() const { return grads_.size(); }
  TensorType& operator[](std::size_t i) { return grads_[i]; }
  const TensorType& operator[](std::size_t i) const { return grads_[i]; }

  void zero() {
    for (auto& g : grads_) g.setZero();
  }
  void scale(Scalar factor) {
    for (auto& g : grads_) g *= factor;
  }
  BasicGradients& operator+=(const BasicGradients& other) {
    if (other.grads_.size() != grads_.size()) throw InvalidShape("gradient sets differ in size");
    for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
    return *this;
  }
  Scalar squared_norm() const {
    Scalar s(0);
    for (const auto& g : grads_) s += g.squaredNorm();
    return s;
  }

 private:
  std::vector<TensorType> grads_;
};

template <typename Scalar>
class BasicTape;

// Handle to a value recorded on a tape.
template <typename Scalar>
class BasicVar {
 public:
  BasicVar() = default;
  BasicVar(BasicTape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const MatrixT<Scalar>& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  BasicTape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  BasicTape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class Op {
  Leaf,
  Param,
  MatMul,
  Add,
  Sub,
  Mul,
  Sigmoid,
  Tanh,
  Softmax,
  Concat,
  Slice,
  Gather,
  Dropout,
  CrossEntropy,
  Sum,
  Mean,
  MeanCols,
  Custom,
};

// Adjoint for a custom op: receives the output gradient and must add the
// input gradients into the provided accumulators (one per parent).
template <typename Scalar>
using BasicCustomAdjoint = std::function<void(const MatrixT<Scalar>& grad_out, std::vector<MatrixT<Scalar>*>& grad_in)>;

// Records operations in topological order. Single-threaded; the bound
// parameter set is read-only while the tape is alive.
template <typename Scalar>
class BasicTape {
 public:
  using TensorType = MatrixT<Scalar>;
  using VarType = BasicVar<Scalar>;

  explicit BasicTape(const BasicParameterSet<Scalar>& params);

  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  VarType param(std::string_view name);
  VarType param(std::size_t index);
  VarType constant(TensorType value);

  // Records a value with caller-supplied parents. An empty adjoint marks the
  // op as forward-only; differentiating through it raises UnsupportedOp.
  VarType custom(TensorType value, std::vector<VarType> parents, BasicCustomAdjoint<Scalar> adjoint = {});

  // Exact reverse-mode gradients of a scalar node with respect to every
  // parameter of the bound set (zeros for parameters not reached).
  BasicGradients<Scalar> backward(VarType loss) const;
  void backward_into(VarType loss, BasicGradients<Scalar>& grads) const;

  std::size_t size() const { return nodes_.size(); }
  const BasicParameterSet<Scalar>& parameters() const { return *params_; }

  bool check_finite() const { return check_finite_; }
  void set_check_finite(bool on) { check_finite_ = on; }

  const TensorType& value(std::size_t id) const { return nodes_[id].value; }

  // Op implementations append through `push`.
  struct Node {
    Op op = Op::Leaf;
    std::size_t a = 0;
    std::size_t b = 0;
    TensorType value;
    bool trans_a = false;
    bool trans_b = false;
    Index i0 = 0, i1 = 0, i2 = 0, i3 = 0;
    std::vector<std::size_t> parents;
    std::vector<Index> indices;
    TensorType aux;
    BasicCustomAdjoint<Scalar> adjoint;
  };

  VarType push(Node node);
  void check(const VarType& v) const;

 private:
  const BasicParameterSet<Scalar>* params_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> param_nodes_;
  bool check_finite_;
};

using ParameterSet = BasicParameterSet<double>;
using Gradients = BasicGradients<double>;
using Var = BasicVar<double>;
using Tape = BasicTape<double>;
using CustomAdjoint = BasicCustomAdjoint<double>;

// op(a) * op(b), with op either identity or transpose.
template <typename S>
BasicVar<S> matmul(BasicVar<S> a, BasicVar<S> b, bool trans_a = false, bool trans_b = false);
// Elementwise; b may be a column vector broadcast across columns of a, or 1x1.
template <typename S>
BasicVar<S> operator+(BasicVar<S> a, BasicVar<S> b);
template <typename S>
BasicVar<S> operator-(BasicVar<S> a, BasicVar<S> b);
// Elementwise product; either operand may be a 1x1 scalar.
template <typename S>
BasicVar<S> hadamard(BasicVar<S> a, BasicVar<S> b);
template <typename S>
BasicVar<S> sigmoid(BasicVar<S> x);
template <typename S>
BasicVar<S> tanh(BasicVar<S> x);
// Column-wise softmax.
template <typename S>
BasicVar<S> softmax(BasicVar<S> x);
// axis 0 stacks rows, axis 1 stacks columns.
template <typename S>
BasicVar<S> concat(const std::vector<BasicVar<S>>& parts, int axis);
template <typename S>
BasicVar<S> concat(std::initializer_list<BasicVar<S>> parts, int axis) {
  return concat(std::vector<BasicVar<S>>(parts), axis);
}
template <typename S>
BasicVar<S> slice(BasicVar<S> x, Index row0, Index rows, Index col0, Index cols);
template <typename S>
BasicVar<S> slice_rows(BasicVar<S> x, Index row0, Index rows) {
  return slice(x, row0, rows, 0, x.cols());
}
template <typename S>
BasicVar<S> column(BasicVar<S> x, Index col) {
  return slice(x, 0, x.rows(), col, 1);
}
// Embedding lookup: selects columns of `table`.
template <typename S>
BasicVar<S> gather_cols(BasicVar<S> table, const std::vector<Index>& ids);
// Inverted dropout with a mask drawn from `rng`. rate 0 returns x unchanged.
template <typename S>
BasicVar<S> dropout(BasicVar<S> x, double rate, std::mt19937_64& rng);
// -log(probs[target]) for a probability column vector.
template <typename S>
BasicVar<S> cross_entropy(BasicVar<S> probs, Index target);
template <typename S>
BasicVar<S> sum(BasicVar<S> x);
template <typename S>
BasicVar<S> mean(BasicVar<S> x);
// Average over columns: (r x c) -> (r x 1).
template <typename S>
BasicVar<S> mean_cols(BasicVar<S> x);

}  // namespace corefgru
