#pragma once

#include <random>

#include "corefgru/cgru.hpp"
#include "corefgru/dataset.hpp"

namespace testing_util {

using namespace corefgru;

inline Tensor uniform(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor t(r, c);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

inline Vector uniform_vec(Index n, std::mt19937_64& rng, double scale = 1.0) { return uniform(n, 1, rng, scale); }

inline CGRUParams random_cgru(Index d, Index d_in, std::mt19937_64& rng, double scale = 0.5) {
  CGRUParams p;
  p.W_r = uniform(d, d_in, rng, scale);
  p.W_z = uniform(d, d_in, rng, scale);
  p.W_h = uniform(d, d_in, rng, scale);
  p.U_r = uniform(d, d, rng, scale);
  p.U_z = uniform(d, d, rng, scale);
  p.U_h = uniform(d, d, rng, scale);
  p.b_r = uniform_vec(d, rng, scale);
  p.b_z = uniform_vec(d, rng, scale);
  p.b_h = uniform_vec(d, rng, scale);
  p.k1 = uniform_vec(d_in, rng, scale);
  p.k2 = uniform_vec(d_in, rng, scale);
  return p;
}

// Random cluster ids (or none) per token.
inline std::vector<TokenRef> random_membership(Index T, Index C, std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> u(-1, C - 1);
  std::vector<TokenRef> out(static_cast<std::size_t>(T));
  for (auto& c : out) {
    const Index v = u(rng);
    if (v >= 0) c = v;
  }
  return out;
}

// Twelve-token story with two candidates and two clusters.
inline RCInstance probe_instance() {
  RCInstance x;
  x.id = "probe";
  x.passage.tokens = {"mary", "got", "the", "ball", ".", "mary", "went", "to", "the", "hallway", ".", "kitchen"};
  x.question.tokens = {"where", "is", "the", "ball", "?"};
  x.answer = "hallway";
  x.candidates = {{"hallway", {{9, 10}}}, {"kitchen", {{11, 12}}}};
  x.clusters.clusters = {{{0, 1}, {5, 6}}, {{3, 4}}};
  x.head_entity = "ball";
  return x;
}

}  // namespace testing_util
