#include "corefgru/autodiff.hpp"

#include <cmath>
#include <utility>

namespace corefgru {

namespace {

template <typename S>
std::string shape_str(const MatrixT<S>& t) {
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}

template <typename S>
bool is_scalar(const MatrixT<S>& t) { return t.rows() == 1 && t.cols() == 1; }

template <typename S, typename E>
void accumulate(MatrixT<S>& into, const E& delta) {
  if (into.size() == 0) {
    into = delta;
  } else {
    into += delta;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename S>
BasicTape<S>::BasicTape(const BasicParameterSet<S>& params)
    : params_(&params),
      param_nodes_(params.size(), static_cast<std::size_t>(-1)),
#ifdef NDEBUG
      check_finite_(false)
#else
      check_finite_(true)
#endif
{
  nodes_.reserve(1024);
}

template <typename S>
BasicVar<S> BasicTape<S>::push(Node node) {
  if (check_finite_ && !node.value.allFinite()) {
    throw NonFinite("non-finite value produced by op #" + std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(node));
  return VarType(this, nodes_.size() - 1);
}

template <typename S>
void BasicTape<S>::check(const VarType& v) const {
  if (!v.valid() || &v.tape() != this) throw InvalidShape("variable belongs to a different tape");
}

template <typename S>
BasicVar<S> BasicTape<S>::param(std::string_view name) { return param(params_->index_of(name)); }

template <typename S>
BasicVar<S> BasicTape<S>::param(std::size_t index) {
  std::size_t& slot = param_nodes_.at(index);
  if (slot != static_cast<std::size_t>(-1)) return VarType(this, slot);
  Node n;
  n.op = Op::Param;
  n.i0 = static_cast<Index>(index);
  n.value = (*params_)[index];
  VarType v = push(std::move(n));
  slot = v.id();
  return v;
}

template <typename S>
BasicVar<S> BasicTape<S>::constant(TensorType value) {
  if (!value.allFinite()) throw NonFinite("constant has non-finite values");
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return VarType(this, nodes_.size() - 1);
}

template <typename S>
BasicVar<S> BasicTape<S>::custom(TensorType value, std::vector<VarType> parents, BasicCustomAdjoint<S> adjoint) {
  Node n;
  n.op = Op::Custom;
  n.value = std::move(value);
  for (const auto& p : parents) {
    check(p);
    n.parents.push_back(p.id());
  }
  n.adjoint = std::move(adjoint);
  return push(std::move(n));
}

template <typename S>
BasicGradients<S> BasicTape<S>::backward(VarType loss) const {
  BasicGradients<S> grads(*params_);
  backward_into(loss, grads);
  return grads;
}

template <typename S>
void BasicTape<S>::backward_into(VarType loss, BasicGradients<S>& out) const {
  check(loss);
  if (!is_scalar(loss.value())) {
    throw InvalidShape("backward needs a scalar loss, got " + shape_str(loss.value()));
  }
  if (out.size() != params_->size()) throw InvalidShape("gradient registry does not match parameters");

  std::vector<MatrixT<S>> g(loss.id() + 1);
  g[loss.id()] = MatrixT<S>::Ones(1, 1);

  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    if (g[k].size() == 0) continue;
    const Node& n = nodes_[k];
    const MatrixT<S>& go = g[k];
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Param:
        out[static_cast<std::size_t>(n.i0)] += go;
        break;
      case Op::MatMul: {
        const MatrixT<S>& A = nodes_[n.a].value;
        const MatrixT<S>& B = nodes_[n.b].value;
        // C = op(A) op(B): d op(A) = dC op(B)^T, d op(B) = op(A)^T dC.
        if (!n.trans_a && !n.trans_b) {
          accumulate(g[n.a], go * B.transpose());
          accumulate(g[n.b], A.transpose() * go);
        } else if (n.trans_a && !n.trans_b) {
          accumulate(g[n.a], B * go.transpose());
          accumulate(g[n.b], A * go);
        } else if (!n.trans_a && n.trans_b) {
          accumulate(g[n.a], go * B);
          accumulate(g[n.b], go.transpose() * A);
        } else {
          accumulate(g[n.a], B.transpose() * go.transpose());
          accumulate(g[n.b], go.transpose() * A.transpose());
        }
        break;
      }
      case Op::Add:
      case Op::Sub: {
        const S sign = n.op == Op::Add ? S(1) : S(-1);
        accumulate(g[n.a], go);
        const MatrixT<S>& B = nodes_[n.b].value;
        if (B.rows() == go.rows() && B.cols() == go.cols()) {
          accumulate(g[n.b], sign * go);
        } else if (is_scalar(B)) {
          accumulate(g[n.b], MatrixT<S>::Constant(1, 1, sign * go.sum()));
        } else {
          accumulate(g[n.b], sign * go.rowwise().sum());
        }
        break;
      }
      case Op::Mul: {
        const MatrixT<S>& A = nodes_[n.a].value;
        const MatrixT<S>& B = nodes_[n.b].value;
        if (is_scalar(A) && !is_scalar(B)) {
          accumulate(g[n.a], MatrixT<S>::Constant(1, 1, go.cwiseProduct(B).sum()));
          accumulate(g[n.b], A(0, 0) * go);
        } else if (is_scalar(B) && !is_scalar(A)) {
          accumulate(g[n.a], B(0, 0) * go);
          accumulate(g[n.b], MatrixT<S>::Constant(1, 1, go.cwiseProduct(A).sum()));
        } else {
          accumulate(g[n.a], go.cwiseProduct(B));
          accumulate(g[n.b], go.cwiseProduct(A));
        }
        break;
      }
      case Op::Sigmoid: {
        const MatrixT<S>& y = n.value;
        accumulate(g[n.a], go.cwiseProduct(y.cwiseProduct((S(1) - y.array()).matrix())));
        break;
      }
      case Op::Tanh: {
        const MatrixT<S>& y = n.value;
        accumulate(g[n.a], go.cwiseProduct((S(1) - y.array().square()).matrix()));
        break;
      }
      case Op::Softmax: {
        const MatrixT<S>& y = n.value;
        MatrixT<S> gx = y.cwiseProduct(go);
        const Eigen::Matrix<S, 1, Eigen::Dynamic> dots = gx.colwise().sum();
        gx -= y * dots.asDiagonal();
        accumulate(g[n.a], gx);
        break;
      }
      case Op::Concat: {
        Index offset = 0;
        for (std::size_t p : n.parents) {
          const MatrixT<S>& part = nodes_[p].value;
          if (n.i0 == 0) {
            accumulate(g[p], go.middleRows(offset, part.rows()));
            offset += part.rows();
          } else {
            accumulate(g[p], go.middleCols(offset, part.cols()));
            offset += part.cols();
          }
        }
        break;
      }
      case Op::Slice: {
        const MatrixT<S>& x = nodes_[n.a].value;
        if (g[n.a].size() == 0) g[n.a] = MatrixT<S>::Zero(x.rows(), x.cols());
        g[n.a].block(n.i0, n.i2, n.i1, n.i3) += go;
        break;
      }
      case Op::Gather: {
        const MatrixT<S>& table = nodes_[n.a].value;
        if (g[n.a].size() == 0) g[n.a] = MatrixT<S>::Zero(table.rows(), table.cols());
        for (std::size_t j = 0; j < n.indices.size(); ++j) {
          g[n.a].col(n.indices[j]) += go.col(static_cast<Index>(j));
        }
        break;
      }
      case Op::Dropout:
        accumulate(g[n.a], go.cwiseProduct(n.aux));
        break;
      case Op::CrossEntropy: {
        const MatrixT<S>& p = nodes_[n.a].value;
        MatrixT<S> gp = MatrixT<S>::Zero(p.rows(), p.cols());
        gp(n.i0, 0) = -go(0, 0) / p(n.i0, 0);
        accumulate(g[n.a], gp);
        break;
      }
      case Op::Sum: {
        const MatrixT<S>& x = nodes_[n.a].value;
        accumulate(g[n.a], MatrixT<S>::Constant(x.rows(), x.cols(), go(0, 0)));
        break;
      }
      case Op::Mean: {
        const MatrixT<S>& x = nodes_[n.a].value;
        accumulate(g[n.a], MatrixT<S>::Constant(x.rows(), x.cols(), go(0, 0) / static_cast<S>(x.size())));
        break;
      }
      case Op::MeanCols: {
        const MatrixT<S>& x = nodes_[n.a].value;
        accumulate(g[n.a], (go / static_cast<S>(x.cols())).replicate(1, x.cols()));
        break;
      }
      case Op::Custom: {
        if (!n.adjoint) throw UnsupportedOp("op #" + std::to_string(k) + " has no registered adjoint");
        std::vector<MatrixT<S>*> slots;
        slots.reserve(n.parents.size());
        for (std::size_t p : n.parents) {
          if (g[p].size() == 0) g[p] = MatrixT<S>::Zero(nodes_[p].value.rows(), nodes_[p].value.cols());
          slots.push_back(&g[p]);
        }
        n.adjoint(go, slots);
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

template <typename S>
BasicVar<S> matmul(BasicVar<S> a, BasicVar<S> b, bool trans_a, bool trans_b) {
  BasicTape<S>& t = a.tape();
  t.check(b);
  const MatrixT<S>& A = a.value();
  const MatrixT<S>& B = b.value();
  const Index inner_a = trans_a ? A.rows() : A.cols();
  const Index inner_b = trans_b ? B.cols() : B.rows();
  if (inner_a != inner_b) {
    throw InvalidShape("matmul shape mismatch " + shape_str(A) + (trans_a ? "^T" : "") + " * " +
                       shape_str(B) + (trans_b ? "^T" : ""));
  }
  typename BasicTape<S>::Node n;
  n.op = Op::MatMul;
  n.a = a.id();
  n.b = b.id();
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  if (!trans_a && !trans_b) {
    n.value.noalias() = A * B;
  } else if (trans_a && !trans_b) {
    n.value.noalias() = A.transpose() * B;
  } else if (!trans_a && trans_b) {
    n.value.noalias() = A * B.transpose();
  } else {
    n.value.noalias() = A.transpose() * B.transpose();
  }
  return t.push(std::move(n));
}

template <typename S>
BasicVar<S> add_like(BasicVar<S> a, BasicVar<S> b, Op op) {
  BasicTape<S>& t = a.tape();
  t.check(b);
  const MatrixT<S>& A = a.value();
  const MatrixT<S>& B = b.value();
  const S sign = op == Op::Add ? S(1) : S(-1);
  typename BasicTape<S>::Node n;
  n.op = op;
  n.a = a.id();
  n.b = b.id();
  if (A.rows() == B.rows() && A.cols() == B.cols()) {
    n.value = op == Op::Add ? MatrixT<S>(A + B) : MatrixT<S>(A - B);
  } else if (is_scalar(B)) {
    n.value = (A.array() + sign * B(0, 0)).matrix();
  } else if (B.cols() == 1 && B.rows() == A.rows()) {
    n.value = A;
    if (op == Op::Add) {
      n.value.colwise() += B.col(0);
    } else {
      n.value.colwise() -= B.col(0);
    }
  } else {
    throw InvalidShape("add shape mismatch " + shape_str(A) + " vs " + shape_str(B));
  }
  return t.push(std::move(n));
}

template <typename S>
BasicVar<S> operator+(BasicVar<S> a, BasicVar<S> b) { return add_like(a, b, Op::Add); }
template <typename S>
BasicVar<S> operator-(BasicVar<S> a, BasicVar<S> b) { return add_like(a, b, Op::Sub); }

template <typename S>
BasicVar<S> hadamard(BasicVar<S> a, BasicVar<S> b) {
  BasicTape<S>& t = a.tape();
  t.check(b);
  const MatrixT<S>& A = a.value();
  const MatrixT<S>& B = b.value();
  typename BasicTape<S>::Node n;
  n.op = Op::Mul;
  n.a = a.id();
  n.b = b.id();
  if (A.rows() == B.rows() && A.cols() == B.cols()) {
    n.value = A.cwiseProduct(B);
  } else if (is_scalar(A)) {
    n.value = A(0, 0) * B;
  } else if (is_scalar(B)) {
    n.value = A * B(0, 0);
  } else {
    throw InvalidShape("elementwise product shape mismatch " + shape_str(A) + " vs " + shape_str(B));
  }
  return t.push(std::move(n));
}

template <typename S>
BasicVar<S> sigmoid(BasicVar<S> x) {
  typename BasicTape<S>::Node n;
  n.op = Op::Sigmoid;
  n.a = x.id();
  n.value = (S(1) + (-x.value().array()).exp()).inverse().matrix();
  return x.tape().push(std::move(n));
}

template <typename S>
BasicVar<S> tanh(BasicVar<S> x) {
  typename BasicTape<S>::Node n;
  n.op = Op::Tanh;
  n.a = x.id();
  n.value = x.value().array().tanh().matrix();
  return x.tape().push(std::move(n));
}

template <typename S>
BasicVar<S> softmax(BasicVar<S> x) {
  typename BasicTape<S>::Node n;
  n.op = Op::Softmax;
  n.a = x.id();
  n.value = softmax(x.value().eval());
  return x.tape().push(std::move(n));
}

template <typename S>
BasicVar<S> concat(const std::vector<BasicVar<S>>& parts, int axis) {
  if (parts.empty()) throw InvalidShape("concat of nothing");
  if (axis != 0 && axis != 1) throw InvalidShape("concat axis must be 0 or 1");
  BasicTape<S>& t = parts.front().tape();
  Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    t.check(p);
    if (axis == 0) {
      if (p.cols() != parts.front().cols()) throw InvalidShape("concat column mismatch");
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != parts.front().rows()) throw InvalidShape("concat row mismatch");
      cols += p.cols();
      rows = p.rows();
    }
  }
  typename BasicTape<S>::Node n;
  n.op = Op::Concat;
  n.i0 = axis;
  n.value.resize(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    n.parents.push_back(p.id());
    if (axis == 0) {
      n.value.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      n.value.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
  }
  return t.push(std::move(n));
}

template <typename S>
BasicVar<S> slice(BasicVar<S> x, Index row0, Index rows, Index col0, Index cols) {
  const MatrixT<S>& X = x.value();
  if (row0 < 0 || rows < 0 || col0 < 0 || cols < 0 || row0 + rows > X.rows() || col0 + cols > X.cols()) {
    throw InvalidShape("slice out of range for " + shape_str(X));
  }
  typename BasicTape<S>::Node n;
  n.op = Op::Slice;
  n.a = x.id();
  n.i0 = row0;
  n.i1 = rows;
  n.i2 = col0;
  n.i3 = cols;
  n.value = X.block(row0, col0, rows, cols);
  return x.tape().push(std::move(n));
}

template <typename S>
BasicVar<S> gather_cols(BasicVar<S> table, const std::vector<Index>& ids) {
  const MatrixT<S>& T = table.value();
  typename BasicTape<S>::Node n;
  n.op = Op::Gather;
  n.a = table.id();
  n.value.resize(T.rows(), static_cast<Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] < 0 || ids[j] >= T.cols()) throw InvalidShape("gather index out of range");
    n.value.col(static_cast<Index>(j)) = T.col(ids[j]);
  }
  n.indices = ids;
  return table.tape().push(std::move(n));
}

template <typename S>
BasicVar<S> dropout(BasicVar<S> x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw RangeError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const MatrixT<S>& X = x.value();
  std::bernoulli_distribution keep(1.0 - rate);
  MatrixT<S> mask(X.rows(), X.cols());
  const S scale = S(1) / (S(1) - S(rate));
  for (Index j = 0; j < mask.cols(); ++j) {
    for (Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(rng) ? scale : S(0);
  }
  typename BasicTape<S>::Node n;
  n.op = Op::Dropout;
  n.a = x.id();
  n.value = X.cwiseProduct(mask);
  n.aux = std::move(mask);
  return x.tape().push(std::move(n));
}

template <typename S>
BasicVar<S> cross_entropy(BasicVar<S> probs, Index target) {
  const MatrixT<S>& P = probs.value();
  if (P.cols() != 1) throw InvalidShape("cross_entropy expects a column vector");
  if (target < 0 || target >= P.rows()) throw InvalidShape("cross_entropy target out of range");
  typename BasicTape<S>::Node n;
  n.op = Op::CrossEntropy;
  n.a = probs.id();
  n.i0 = target;
  n.value = MatrixT<S>::Constant(1, 1, -std::log(P(target, 0)));
  return probs.tape().push(std::move(n));
}

template <typename S>
BasicVar<S> sum(BasicVar<S> x) {
  typename BasicTape<S>::Node n;
  n.op = Op::Sum;
  n.a = x.id();
  n.value = MatrixT<S>::Constant(1, 1, x.value().sum());
  return x.tape().push(std::move(n));
}

template <typename S>
BasicVar<S> mean(BasicVar<S> x) {
  if (x.value().size() == 0) throw InvalidShape("mean of empty tensor");
  typename BasicTape<S>::Node n;
  n.op = Op::Mean;
  n.a = x.id();
  n.value = MatrixT<S>::Constant(1, 1, x.value().mean());
  return x.tape().push(std::move(n));
}

template <typename S>
BasicVar<S> mean_cols(BasicVar<S> x) {
  if (x.cols() == 0) throw InvalidShape("mean_cols of empty tensor");
  typename BasicTape<S>::Node n;
  n.op = Op::MeanCols;
  n.a = x.id();
  n.value = x.value().rowwise().mean();
  return x.tape().push(std::move(n));
}

#define COREFGRU_INSTANTIATE(S)                                                                \
  template class BasicTape<S>;                                                                 \
  template BasicVar<S> matmul(BasicVar<S>, BasicVar<S>, bool, bool);                           \
  template BasicVar<S> operator+(BasicVar<S>, BasicVar<S>);                                    \
  template BasicVar<S> operator-(BasicVar<S>, BasicVar<S>);                                    \
  template BasicVar<S> hadamard(BasicVar<S>, BasicVar<S>);                                     \
  template BasicVar<S> sigmoid(BasicVar<S>);                                                   \
  template BasicVar<S> tanh(BasicVar<S>);                                                      \
  template BasicVar<S> softmax(BasicVar<S>);                                                   \
  template BasicVar<S> concat(const std::vector<BasicVar<S>>&, int);                          \
  template BasicVar<S> slice(BasicVar<S>, Index, Index, Index, Index);                         \
  template BasicVar<S> gather_cols(BasicVar<S>, const std::vector<Index>&);                    \
  template BasicVar<S> dropout(BasicVar<S>, double, std::mt19937_64&);                         \
  template BasicVar<S> cross_entropy(BasicVar<S>, Index);                                      \
  template BasicVar<S> sum(BasicVar<S>);                                                       \
  template BasicVar<S> mean(BasicVar<S>);                                                      \
  template BasicVar<S> mean_cols(BasicVar<S>);

COREFGRU_INSTANTIATE(double)
COREFGRU_INSTANTIATE(long double)

}  // namespace corefgru
