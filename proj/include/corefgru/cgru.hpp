#pragma once

// Coreference-biased GRU (C-GRU).
//
// The cell mixes the first half of the sequential state with the second half
// of the coreferent antecedent's state:
//
//   m = alpha * h_prev[0:d/2] || (1 - alpha) * h_ante[d/2:d]
//   r = sigmoid(W_r x + U_r m + b_r)
//   z = sigmoid(W_z x + U_z m + b_z)
//   c = tanh(W_h x + r .* (U_h m) + b_h)
//   h = (1 - z) .* m + z .* c
//
// with alpha = softmax([x.k1, x.k2])[0] when an antecedent exists and exactly
// 1 otherwise. Value-level kernels below are templated on the scalar type;
// the Tape overloads at the bottom record the same computation for training.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "corefgru/autodiff.hpp"
#include "corefgru/coref.hpp"

namespace corefgru {

enum class AlphaMode { TwoKey, SingleKey };
enum class Direction { Forward, Backward };
enum class CellKind { Gru, CorefGru };

struct CellOptions {
  AlphaMode alpha_mode = AlphaMode::TwoKey;
  // Ablation switch: alpha == 1 everywhere, antecedent path cut.
  bool force_alpha_one = false;
};

// Weights of a plain GRU cell.
template <typename Scalar>
struct GRUWeights {
  MatrixT<Scalar> W_r, W_z, W_h;  // d x d_in
  MatrixT<Scalar> U_r, U_z, U_h;  // d x d
  VectorT<Scalar> b_r, b_z, b_h;  // d

  Index hidden() const { return W_r.rows(); }
  Index input() const { return W_r.cols(); }
  std::size_t parameter_count() const { return static_cast<std::size_t>(3 * (hidden() * input() + hidden() * hidden() + hidden())); }

  static GRUWeights zeros(Index d, Index d_in) {
    GRUWeights w;
    w.W_r = w.W_z = w.W_h = MatrixT<Scalar>::Zero(d, d_in);
    w.U_r = w.U_z = w.U_h = MatrixT<Scalar>::Zero(d, d);
    w.b_r = w.b_z = w.b_h = VectorT<Scalar>::Zero(d);
    return w;
  }
};

// Weights of a C-GRU cell: GRU gates acting on m plus two key vectors.
template <typename Scalar>
struct CGRUWeights : GRUWeights<Scalar> {
  VectorT<Scalar> k1, k2;  // d_in

  std::size_t parameter_count() const {
    return GRUWeights<Scalar>::parameter_count() + static_cast<std::size_t>(k1.size() + k2.size());
  }

  static CGRUWeights zeros(Index d, Index d_in) {
    CGRUWeights w;
    static_cast<GRUWeights<Scalar>&>(w) = GRUWeights<Scalar>::zeros(d, d_in);
    w.k1 = w.k2 = VectorT<Scalar>::Zero(d_in);
    return w;
  }

  // Throws InvalidShape on odd d or inconsistent shapes.
  void validate() const {
    const Index d = this->hidden();
    const Index n = this->input();
    if (d % 2 != 0) throw InvalidShape("C-GRU hidden size must be even, got " + std::to_string(d));
    const bool ok = this->W_z.rows() == d && this->W_h.rows() == d && this->W_z.cols() == n && this->W_h.cols() == n &&
                    this->U_r.rows() == d && this->U_r.cols() == d && this->U_z.rows() == d && this->U_z.cols() == d &&
                    this->U_h.rows() == d && this->U_h.cols() == d && this->b_r.size() == d && this->b_z.size() == d &&
                    this->b_h.size() == d && k1.size() == n && k2.size() == n;
    if (!ok) throw InvalidShape("inconsistent C-GRU parameter shapes");
  }
};

using CGRUParams = CGRUWeights<double>;
using GRUParams = GRUWeights<double>;

// Mixing weight for the sequential half. Exactly 1 without an antecedent.
template <typename Scalar, typename DX, typename DK1, typename DK2>
Scalar compute_alpha(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DK1>& k1,
                     const Eigen::MatrixBase<DK2>& k2, bool antecedent_present,
                     AlphaMode mode = AlphaMode::TwoKey) {
  if (x.size() != k1.size() || x.size() != k2.size()) throw InvalidShape("alpha: input and key sizes differ");
  if (!antecedent_present) return Scalar(1);
  VectorT<Scalar> logits(2);
  logits(0) = x.dot(k1);
  logits(1) = mode == AlphaMode::TwoKey ? Scalar(x.dot(k2)) : Scalar(0);
  return softmax(logits)(0, 0);
}

// One C-GRU update. `h_ante == nullptr` means the antecedent is absent.
template <typename Scalar>
VectorT<Scalar> cell_step(const CGRUWeights<Scalar>& p, const VectorT<Scalar>& x, const VectorT<Scalar>& h_prev,
                          const VectorT<Scalar>* h_ante, const CellOptions& opt = {}) {
  const Index d = p.hidden();
  if (d % 2 != 0) throw InvalidShape("C-GRU hidden size must be even");
  if (x.size() != p.input() || h_prev.size() != d || (h_ante && h_ante->size() != d)) {
    throw InvalidShape("cell_step: input or state size mismatch");
  }
  const Index half = d / 2;
  const bool present = h_ante != nullptr && !opt.force_alpha_one;

  VectorT<Scalar> m(d);
  if (present) {
    VectorT<Scalar> logits(2);
    logits(0) = x.dot(p.k1);
    logits(1) = opt.alpha_mode == AlphaMode::TwoKey ? Scalar(x.dot(p.k2)) : Scalar(0);
    const MatrixT<Scalar> a = softmax(logits);
    m.head(half) = a(0, 0) * h_prev.head(half);
    m.tail(half) = a(1, 0) * h_ante->tail(half);
  } else {
    m.head(half) = h_prev.head(half);
    m.tail(half).setZero();
  }

  const VectorT<Scalar> r = (Scalar(1) + (-((p.W_r * x + p.b_r) + p.U_r * m).array()).exp()).inverse().matrix();
  const VectorT<Scalar> z = (Scalar(1) + (-((p.W_z * x + p.b_z) + p.U_z * m).array()).exp()).inverse().matrix();
  const VectorT<Scalar> c = ((p.W_h * x + p.b_h) + r.cwiseProduct(p.U_h * m)).array().tanh().matrix();
  return (Scalar(1) - z.array()).matrix().cwiseProduct(m) + z.cwiseProduct(c);
}

// Plain GRU update with the same gate layout.
template <typename Scalar>
VectorT<Scalar> gru_step(const GRUWeights<Scalar>& p, const VectorT<Scalar>& x, const VectorT<Scalar>& h_prev) {
  if (x.size() != p.input() || h_prev.size() != p.hidden()) throw InvalidShape("gru_step: size mismatch");
  const VectorT<Scalar> r = (Scalar(1) + (-((p.W_r * x + p.b_r) + p.U_r * h_prev).array()).exp()).inverse().matrix();
  const VectorT<Scalar> z = (Scalar(1) + (-((p.W_z * x + p.b_z) + p.U_z * h_prev).array()).exp()).inverse().matrix();
  const VectorT<Scalar> c = ((p.W_h * x + p.b_h) + r.cwiseProduct(p.U_h * h_prev)).array().tanh().matrix();
  return (Scalar(1) - z.array()).matrix().cwiseProduct(h_prev) + z.cwiseProduct(c);
}

namespace detail {

inline void check_order(const std::vector<TokenRef>& ante, Index T, Direction dir) {
  if (static_cast<Index>(ante.size()) != T) throw InvalidShape("antecedent array length differs from sequence length");
  for (Index t = 0; t < T; ++t) {
    const auto& a = ante[static_cast<std::size_t>(t)];
    if (!a) continue;
    const bool ok = dir == Direction::Forward ? (*a >= 0 && *a < t) : (*a > t && *a < T);
    if (!ok) {
      throw OrderViolation("antecedent " + std::to_string(*a) + " of token " + std::to_string(t) +
                           " is not processed before it");
    }
  }
}

}  // namespace detail

// Unrolls one direction with h_0 = 0. `inputs` holds one token per column;
// the returned states are in original token order.
template <typename Scalar>
MatrixT<Scalar> run_direction(const CGRUWeights<Scalar>& p, const MatrixT<Scalar>& inputs,
                              const std::vector<TokenRef>& ante, Direction dir, const CellOptions& opt = {}) {
  p.validate();
  const Index T = inputs.cols();
  detail::check_order(ante, T, dir);
  MatrixT<Scalar> out = MatrixT<Scalar>::Zero(p.hidden(), T);
  VectorT<Scalar> h = VectorT<Scalar>::Zero(p.hidden());
  for (Index step = 0; step < T; ++step) {
    const Index t = dir == Direction::Forward ? step : T - 1 - step;
    const auto& a = ante[static_cast<std::size_t>(t)];
    const VectorT<Scalar> x = inputs.col(t);
    if (a) {
      const VectorT<Scalar> ha = out.col(*a);
      h = cell_step(p, x, h, &ha, opt);
    } else {
      h = cell_step<Scalar>(p, x, h, nullptr, opt);
    }
    out.col(t) = h;
  }
  return out;
}

template <typename Scalar>
MatrixT<Scalar> run_gru_direction(const GRUWeights<Scalar>& p, const MatrixT<Scalar>& inputs, Direction dir) {
  const Index T = inputs.cols();
  MatrixT<Scalar> out(p.hidden(), T);
  VectorT<Scalar> h = VectorT<Scalar>::Zero(p.hidden());
  for (Index step = 0; step < T; ++step) {
    const Index t = dir == Direction::Forward ? step : T - 1 - step;
    h = gru_step(p, VectorT<Scalar>(inputs.col(t)), h);
    out.col(t) = h;
  }
  return out;
}

// Forward states stacked over backward states: (2d x T).
template <typename Scalar>
MatrixT<Scalar> run_bidirectional(const CGRUWeights<Scalar>& fwd, const CGRUWeights<Scalar>& bwd,
                                  const MatrixT<Scalar>& inputs, const AntecedentMap& map,
                                  const CellOptions& opt = {}) {
  const MatrixT<Scalar> f = run_direction(fwd, inputs, map.forward, Direction::Forward, opt);
  const MatrixT<Scalar> b = run_direction(bwd, inputs, map.backward, Direction::Backward, opt);
  MatrixT<Scalar> out(f.rows() + b.rows(), inputs.cols());
  out << f, b;
  return out;
}

// Per-cluster state: row c holds the state of the latest processed token of
// cluster c; unwritten rows stay zero.
template <typename Scalar>
struct ClusterMemory {
  MatrixT<Scalar> M;  // C x d
  std::vector<bool> written;

  ClusterMemory(Index clusters, Index d) : M(MatrixT<Scalar>::Zero(clusters, d)), written(static_cast<std::size_t>(clusters), false) {}
  Index clusters() const { return M.rows(); }
};

template <typename Scalar>
struct MemoryRun {
  MatrixT<Scalar> states;  // d x T, original order
  ClusterMemory<Scalar> memory;
};

namespace detail {

inline void check_clusters(const std::vector<TokenRef>& cluster_of, Index num_clusters) {
  for (const auto& c : cluster_of) {
    if (c && (*c < 0 || *c >= num_clusters)) {
      throw RangeError("cluster id " + std::to_string(*c) + " outside [0, " + std::to_string(num_clusters) + ")");
    }
  }
}

}  // namespace detail

// Memory-network execution: antecedent states are read from and written to a
// C x d cluster memory instead of being looked up by position.
template <typename Scalar>
MemoryRun<Scalar> run_memory_mode(const CGRUWeights<Scalar>& p, const MatrixT<Scalar>& inputs,
                                  const std::vector<TokenRef>& cluster_of, Index num_clusters, Direction dir,
                                  const CellOptions& opt = {}) {
  p.validate();
  const Index T = inputs.cols();
  if (static_cast<Index>(cluster_of.size()) != T) throw InvalidShape("cluster_of length differs from sequence length");
  detail::check_clusters(cluster_of, num_clusters);

  MemoryRun<Scalar> run{MatrixT<Scalar>::Zero(p.hidden(), T), ClusterMemory<Scalar>(num_clusters, p.hidden())};
  VectorT<Scalar> h = VectorT<Scalar>::Zero(p.hidden());
  for (Index step = 0; step < T; ++step) {
    const Index t = dir == Direction::Forward ? step : T - 1 - step;
    const auto& c = cluster_of[static_cast<std::size_t>(t)];
    const VectorT<Scalar> x = inputs.col(t);
    if (c && run.memory.written[static_cast<std::size_t>(*c)]) {
      const VectorT<Scalar> read = run.memory.M.row(*c).transpose();
      h = cell_step(p, x, h, &read, opt);
    } else {
      h = cell_step<Scalar>(p, x, h, nullptr, opt);
    }
    if (c) {
      run.memory.M.row(*c) = h.transpose();
      run.memory.written[static_cast<std::size_t>(*c)] = true;
    }
    run.states.col(t) = h;
  }
  return run;
}

// Batched memory-mode forward pass: B sequences advanced in lockstep with one
// C x d memory per sequence alive for the whole pass.
template <typename Scalar>
std::vector<MatrixT<Scalar>> run_memory_mode_batch(const CGRUWeights<Scalar>& p,
                                                   const std::vector<MatrixT<Scalar>>& inputs,
                                                   const std::vector<std::vector<TokenRef>>& cluster_of,
                                                   Index num_clusters, Direction dir, const CellOptions& opt = {}) {
  p.validate();
  if (inputs.size() != cluster_of.size()) throw InvalidShape("batch inputs and annotations differ in count");
  const std::size_t B = inputs.size();
  Index T = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (static_cast<Index>(cluster_of[b].size()) != inputs[b].cols()) throw InvalidShape("cluster_of length mismatch");
    detail::check_clusters(cluster_of[b], num_clusters);
    T = std::max(T, inputs[b].cols());
  }
  std::vector<ClusterMemory<Scalar>> memory(B, ClusterMemory<Scalar>(num_clusters, p.hidden()));
  std::vector<MatrixT<Scalar>> states;
  std::vector<VectorT<Scalar>> h(B, VectorT<Scalar>::Zero(p.hidden()));
  states.reserve(B);
  for (std::size_t b = 0; b < B; ++b) states.push_back(MatrixT<Scalar>::Zero(p.hidden(), inputs[b].cols()));

  for (Index step = 0; step < T; ++step) {
    for (std::size_t b = 0; b < B; ++b) {
      const Index Tb = inputs[b].cols();
      if (step >= Tb) continue;
      const Index t = dir == Direction::Forward ? step : Tb - 1 - step;
      const auto& c = cluster_of[b][static_cast<std::size_t>(t)];
      const VectorT<Scalar> x = inputs[b].col(t);
      if (c && memory[b].written[static_cast<std::size_t>(*c)]) {
        const VectorT<Scalar> read = memory[b].M.row(*c).transpose();
        h[b] = cell_step(p, x, h[b], &read, opt);
      } else {
        h[b] = cell_step<Scalar>(p, x, h[b], nullptr, opt);
      }
      if (c) {
        memory[b].M.row(*c) = h[b].transpose();
        memory[b].written[static_cast<std::size_t>(*c)] = true;
      }
      states[b].col(t) = h[b];
    }
  }
  return states;
}

// ---------------------------------------------------------------------------
// Parameter registration and tape recording.

// Uniform on [-s, s] with s = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Index rows, Index cols, Index fan_in, Index fan_out, std::mt19937_64& rng);

// Adds the tensors of one cell under `prefix` ("prefix.W_r", ...). Weights and
// keys are uniform on [-s, s] with s = sqrt(6 / (fan_in + fan_out)); biases 0.
void add_cell_params(ParameterSet& params, const std::string& prefix, CellKind kind, Index d, Index d_in,
                     std::mt19937_64& rng);

CGRUParams cgru_from(const ParameterSet& params, const std::string& prefix);
GRUParams gru_from(const ParameterSet& params, const std::string& prefix);
void store_cgru(ParameterSet& params, const std::string& prefix, const CGRUParams& weights);

std::size_t cell_parameter_count(CellKind kind, Index d, Index d_in);

// Tape version of run_direction: inputs (d_in x T) -> states (d x T).
// `ante` is ignored for CellKind::Gru.
template <typename Scalar>
BasicVar<Scalar> record_direction(BasicTape<Scalar>& tape, const std::string& prefix, CellKind kind,
                                  BasicVar<Scalar> inputs, const std::vector<TokenRef>& ante, Direction dir,
                                  const CellOptions& opt = {});

// Tape version of run_bidirectional: (2d x T). `map` may be null for GRU cells.
template <typename Scalar>
BasicVar<Scalar> record_bidirectional(BasicTape<Scalar>& tape, const std::string& fwd_prefix,
                                      const std::string& bwd_prefix, CellKind kind, BasicVar<Scalar> inputs,
                                      const AntecedentMap* map, const CellOptions& opt = {});

}  // namespace corefgru
