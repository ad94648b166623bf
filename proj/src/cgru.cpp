#include "corefgru/cgru.hpp"

#include <algorithm>
#include <cmath>

namespace corefgru {

Tensor glorot_uniform(Index rows, Index cols, Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-s, s);
  Tensor t(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) t(i, j) = u(rng);
  }
  return t;
}

namespace {

template <typename S>
struct CellVars {
  BasicVar<S> W_r, W_z, W_h, U_r, U_z, U_h, b_r, b_z, b_h, k1, k2;
};

template <typename S>
CellVars<S> load(BasicTape<S>& tape, const std::string& prefix, CellKind kind) {
  CellVars<S> v;
  v.W_r = tape.param(prefix + ".W_r");
  v.W_z = tape.param(prefix + ".W_z");
  v.W_h = tape.param(prefix + ".W_h");
  v.U_r = tape.param(prefix + ".U_r");
  v.U_z = tape.param(prefix + ".U_z");
  v.U_h = tape.param(prefix + ".U_h");
  v.b_r = tape.param(prefix + ".b_r");
  v.b_z = tape.param(prefix + ".b_z");
  v.b_h = tape.param(prefix + ".b_h");
  if (kind == CellKind::CorefGru) {
    v.k1 = tape.param(prefix + ".k1");
    v.k2 = tape.param(prefix + ".k2");
  }
  return v;
}

}  // namespace

void add_cell_params(ParameterSet& params, const std::string& prefix, CellKind kind, Index d, Index d_in,
                     std::mt19937_64& rng) {
  if (kind == CellKind::CorefGru && d % 2 != 0) {
    throw InvalidShape("C-GRU hidden size must be even, got " + std::to_string(d));
  }
  for (const char* gate : {"r", "z", "h"}) {
    params.add(prefix + ".W_" + gate, glorot_uniform(d, d_in, d_in, d, rng));
  }
  for (const char* gate : {"r", "z", "h"}) {
    params.add(prefix + ".U_" + gate, glorot_uniform(d, d, d, d, rng));
  }
  for (const char* gate : {"r", "z", "h"}) {
    params.add(prefix + ".b_" + gate, Tensor::Zero(d, 1));
  }
  if (kind == CellKind::CorefGru) {
    params.add(prefix + ".k1", glorot_uniform(d_in, 1, d_in, 1, rng));
    params.add(prefix + ".k2", glorot_uniform(d_in, 1, d_in, 1, rng));
  }
}

GRUParams gru_from(const ParameterSet& params, const std::string& prefix) {
  GRUParams w;
  w.W_r = params.at(prefix + ".W_r");
  w.W_z = params.at(prefix + ".W_z");
  w.W_h = params.at(prefix + ".W_h");
  w.U_r = params.at(prefix + ".U_r");
  w.U_z = params.at(prefix + ".U_z");
  w.U_h = params.at(prefix + ".U_h");
  w.b_r = params.at(prefix + ".b_r");
  w.b_z = params.at(prefix + ".b_z");
  w.b_h = params.at(prefix + ".b_h");
  return w;
}

CGRUParams cgru_from(const ParameterSet& params, const std::string& prefix) {
  CGRUParams w;
  static_cast<GRUParams&>(w) = gru_from(params, prefix);
  w.k1 = params.at(prefix + ".k1");
  w.k2 = params.at(prefix + ".k2");
  return w;
}

void store_cgru(ParameterSet& params, const std::string& prefix, const CGRUParams& w) {
  params.at(prefix + ".W_r") = w.W_r;
  params.at(prefix + ".W_z") = w.W_z;
  params.at(prefix + ".W_h") = w.W_h;
  params.at(prefix + ".U_r") = w.U_r;
  params.at(prefix + ".U_z") = w.U_z;
  params.at(prefix + ".U_h") = w.U_h;
  params.at(prefix + ".b_r") = w.b_r;
  params.at(prefix + ".b_z") = w.b_z;
  params.at(prefix + ".b_h") = w.b_h;
  params.at(prefix + ".k1") = w.k1;
  params.at(prefix + ".k2") = w.k2;
}

std::size_t cell_parameter_count(CellKind kind, Index d, Index d_in) {
  const auto gates = static_cast<std::size_t>(3 * (d * d_in + d * d + d));
  return kind == CellKind::CorefGru ? gates + static_cast<std::size_t>(2 * d_in) : gates;
}

template <typename S>
BasicVar<S> record_direction(BasicTape<S>& tape, const std::string& prefix, CellKind kind, BasicVar<S> inputs,
                             const std::vector<TokenRef>& ante, Direction dir, const CellOptions& opt) {
  using Var = BasicVar<S>;
  using M = MatrixT<S>;
  const CellVars<S> p = load(tape, prefix, kind);
  const Index d = p.U_r.rows();
  const Index T = inputs.cols();
  if (T == 0) throw InvalidShape("empty input sequence");
  if (kind == CellKind::CorefGru) {
    if (d % 2 != 0) throw InvalidShape("C-GRU hidden size must be even");
    detail::check_order(ante, T, dir);
  }
  const Index half = d / 2;

  // Input projections for every position at once.
  const Var xr = matmul(p.W_r, inputs) + p.b_r;
  const Var xz = matmul(p.W_z, inputs) + p.b_z;
  const Var xh = matmul(p.W_h, inputs) + p.b_h;

  Var mix;  // 2 x T: column t = [alpha_t, 1 - alpha_t]
  const bool any_link =
      kind == CellKind::CorefGru && !opt.force_alpha_one &&
      std::any_of(ante.begin(), ante.end(), [](const TokenRef& a) { return a.has_value(); });
  if (any_link) {
    const Var s1 = matmul(p.k1, inputs, true);
    const Var s2 = opt.alpha_mode == AlphaMode::TwoKey ? matmul(p.k2, inputs, true) : tape.constant(M::Zero(1, T));
    mix = softmax(concat({s1, s2}, 0));
  }

  const Var ones = tape.constant(M::Ones(d, 1));
  const Var zero_half = tape.constant(M::Zero(half, 1));
  Var h = tape.constant(M::Zero(d, 1));
  std::vector<Var> states(static_cast<std::size_t>(T));

  for (Index step = 0; step < T; ++step) {
    const Index t = dir == Direction::Forward ? step : T - 1 - step;
    Var m;
    if (kind == CellKind::Gru) {
      m = h;
    } else {
      const auto& a = ante[static_cast<std::size_t>(t)];
      const Var seq = slice(h, 0, half, 0, 1);
      if (a && any_link) {
        const Var alpha = slice(mix, 0, 1, t, 1);
        const Var beta = slice(mix, 1, 1, t, 1);
        const Var coref = slice(states[static_cast<std::size_t>(*a)], half, half, 0, 1);
        m = concat({hadamard(alpha, seq), hadamard(beta, coref)}, 0);
      } else {
        m = concat({seq, zero_half}, 0);
      }
    }
    const Var r = sigmoid(column(xr, t) + matmul(p.U_r, m));
    const Var z = sigmoid(column(xz, t) + matmul(p.U_z, m));
    const Var c = tanh(column(xh, t) + hadamard(r, matmul(p.U_h, m)));
    h = hadamard(ones - z, m) + hadamard(z, c);
    states[static_cast<std::size_t>(t)] = h;
  }
  return concat(states, 1);
}

template <typename S>
BasicVar<S> record_bidirectional(BasicTape<S>& tape, const std::string& fwd_prefix, const std::string& bwd_prefix,
                                 CellKind kind, BasicVar<S> inputs, const AntecedentMap* map, const CellOptions& opt) {
  using Var = BasicVar<S>;
  const std::vector<TokenRef> empty_links(static_cast<std::size_t>(inputs.cols()));
  const auto& fwd_links = map ? map->forward : empty_links;
  const auto& bwd_links = map ? map->backward : empty_links;
  const Var f = record_direction(tape, fwd_prefix, kind, inputs, fwd_links, Direction::Forward, opt);
  const Var b = record_direction(tape, bwd_prefix, kind, inputs, bwd_links, Direction::Backward, opt);
  return concat({f, b}, 0);
}

#define COREFGRU_INSTANTIATE(S)                                                                              \
  template BasicVar<S> record_direction(BasicTape<S>&, const std::string&, CellKind, BasicVar<S>,             \
                                        const std::vector<TokenRef>&, Direction, const CellOptions&);          \
  template BasicVar<S> record_bidirectional(BasicTape<S>&, const std::string&, const std::string&, CellKind, \
                                            BasicVar<S>, const AntecedentMap*, const CellOptions&);

COREFGRU_INSTANTIATE(double)
COREFGRU_INSTANTIATE(long double)

}  // namespace corefgru
