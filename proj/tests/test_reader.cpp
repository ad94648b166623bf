#include <doctest.h>

#include <cmath>
#include <random>

#include "corefgru/gradcheck.hpp"
#include "corefgru/reader.hpp"
#include "helpers.hpp"

using namespace corefgru;
using namespace testing_util;

namespace {

ReaderConfig tiny(CellKind kind = CellKind::CorefGru) {
  ReaderConfig c;
  c.layers = 2;
  c.hidden = 4;
  c.embedding = 4;
  c.recurrence = kind;
  c.dropout = 0.0;
  c.cluster_cap = 3;
  return c;
}

ReaderModel tiny_model(const ReaderConfig& c, std::uint64_t seed = 1) {
  std::vector<std::string> classes;
  if (c.answer_head == AnswerHead::Classify) classes = {"hallway", "kitchen", "garden"};
  return ReaderModel(c, Vocabulary::build({probe_instance()}), classes, seed);
}

Tensor cols(std::initializer_list<std::initializer_list<double>> columns) {
  const auto n = static_cast<Index>(columns.begin()->size());
  Tensor t(n, static_cast<Index>(columns.size()));
  Index j = 0;
  for (const auto& c : columns) {
    Index i = 0;
    for (double v : c) t(i++, j) = v;
    ++j;
  }
  return t;
}

}  // namespace

TEST_CASE("vocabulary") {
  const Vocabulary v = Vocabulary::build({probe_instance()});
  CHECK(v.id("zebra") == 0);
  CHECK(v.id("mary") > 0);
  CHECK(v.tokens().front() == Vocabulary::kUnknown);
  CHECK(Vocabulary::from_tokens(v.tokens()) == v);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"mary"}), IncompatibleCheckpoint);
}

TEST_CASE("embedding features and width") {
  ReaderConfig c = tiny();
  c.use_onehot_coref = true;
  const ReaderModel m = tiny_model(c);
  CHECK(m.input_width() == 4 + 1 + 3);
  const EncodedInstance x = m.prepare(probe_instance());
  Tape tape(m.parameters());
  const auto [p, q] = embed(tape, m, x);
  REQUIRE(p.rows() == 8);
  CHECK(p.cols() == 12);
  CHECK(q.rows() == 4);
  CHECK(p.value()(4, 3) == 1.0);  // "ball" is in the question
  CHECK(p.value()(4, 0) == 0.0);  // "mary" is not
  // One-hot block: mary -> cluster 0, ball -> cluster 1, "got" -> none.
  CHECK(p.value()(5, 0) == 1.0);
  CHECK(p.value()(6, 3) == 1.0);
  CHECK(p.value().block(5, 1, 3, 1).isZero(0.0));

  ReaderConfig plain = tiny();
  plain.use_query_feature = false;
  CHECK(tiny_model(plain).input_width() == 4);
}

TEST_CASE("gated attention") {
  ParameterSet none;
  Tape tape(none);
  const Tensor P = cols({{1.0, 2.0}, {-1.0, 0.5}, {3.0, 0.0}});
  const Var p = tape.constant(P);

  const Tensor q1 = cols({{0.7, -0.2}});
  const Tensor single = gated_attention(p, tape.constant(q1)).value();
  for (Index i = 0; i < 3; ++i) CHECK(single.col(i) == P.col(i).cwiseProduct(q1.col(0)));

  const Tensor same = cols({{0.3, 0.4}, {0.3, 0.4}, {0.3, 0.4}});
  const Tensor s = gated_attention(p, tape.constant(same)).value();
  for (Index i = 0; i < 3; ++i) CHECK((s.col(i) - P.col(i).cwiseProduct(same.col(0))).norm() < 1e-15);

  // p = (1, 1) is orthogonal to both question states: equal weights, average (2, -2).
  const Tensor o = gated_attention(tape.constant(cols({{1.0, 1.0}})), tape.constant(cols({{1.0, -1.0}, {3.0, -3.0}})))
                       .value();
  CHECK(o(0, 0) == 2.0);
  CHECK(o(1, 0) == -2.0);
  CHECK_THROWS_AS(gated_attention(p, tape.constant(cols({{1.0, 2.0, 3.0}}))), InvalidShape);
}

TEST_CASE("attention sum") {
  ParameterSet none;
  Tape tape(none);
  const Var states = tape.constant(Tensor::Zero(2, 4));
  const Var query = tape.constant(cols({{1.0, -1.0}}));
  const Tensor pr = attention_sum_answer(states, query, {{0, 2}, {1}}).value();
  CHECK(std::abs(pr(0, 0) - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(pr(1, 0) - 1.0 / 3.0) < 1e-15);

  const Var rnd = tape.constant(cols({{0.3, 1.0}, {2.0, -1.0}, {0.5, 0.5}, {-2.0, 0.1}}));
  CHECK(attention_sum_answer(rnd, query, {{3}}).value()(0, 0) == 1.0);
  CHECK(std::abs(attention_sum_answer(rnd, query, {{0, 3}, {1}, {2}}).value().sum() - 1.0) < 1e-15);
  CHECK_THROWS_AS(attention_sum_answer(rnd, query, {{0}, {}}), MissingMention);
  CHECK_THROWS_AS(attention_sum_answer(rnd, query, {}), MissingMention);
}

TEST_CASE("full model probabilities are normalised") {
  for (CellKind kind : {CellKind::CorefGru, CellKind::Gru}) {
    for (AnswerHead head : {AnswerHead::AttentionSum, AnswerHead::Classify}) {
      ReaderConfig c = tiny(kind);
      c.answer_head = head;
      const ReaderModel m = tiny_model(c, 5);
      Tape tape(m.parameters());
      const auto out = forward(tape, m, m.prepare(probe_instance()));
      CHECK(std::abs(out.probabilities.value().sum() - 1.0) < 1e-12);
      CHECK(out.passage_states.rows() == 8);
      CHECK(out.question_summary.rows() == 8);
      CHECK(out.loss.value()(0, 0) == doctest::Approx(-std::log(out.probabilities.value()(m.prepare(probe_instance()).target, 0))));
    }
  }
}

TEST_CASE("classification head") {
  ReaderConfig c = tiny();
  c.answer_head = AnswerHead::Classify;
  ReaderModel m(c, Vocabulary::build({probe_instance()}), {"hallway", "kitchen"}, 3);
  m.parameters().at("head.W").setZero();
  {
    Tape tape(m.parameters());
    const auto out = forward(tape, m, m.prepare(probe_instance()));
    CHECK(out.probabilities.value()(0, 0) == 0.5);
  }
  m.parameters().at("head.b") << std::log(3.0), 0.0;
  Tape tape(m.parameters());
  const auto out = forward(tape, m, m.prepare(probe_instance()));
  CHECK(std::abs(out.probabilities.value()(0, 0) - 0.75) < 1e-12);
  CHECK(std::abs(out.probabilities.value()(1, 0) - 0.25) < 1e-12);

  RCInstance other = probe_instance();
  other.answer = "garden";
  CHECK_THROWS_AS(m.prepare(other), LabelError);
  CHECK_THROWS_AS(ReaderModel(c, Vocabulary{}, {}, 1), LabelError);
}

TEST_CASE("one layer skips gated attention") {
  ReaderConfig c = tiny();
  c.layers = 1;
  const ReaderModel m = tiny_model(c, 8);
  const EncodedInstance x = m.prepare(probe_instance());
  Tape tape(m.parameters());
  const auto out = encode(tape, m, x, nullptr);
  const auto [p, q] = embed(tape, m, x);
  const Tensor expect =
      run_bidirectional(cgru_from(m.parameters(), "layer0.fwd"), cgru_from(m.parameters(), "layer0.bwd"), p.value(), x.links);
  CHECK((out.passage_states.value() - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("dropout rate zero leaves training and evaluation passes equal") {
  const ReaderModel m = tiny_model(tiny(), 9);
  const EncodedInstance x = m.prepare(probe_instance());
  std::mt19937_64 rng(1);
  Tape a(m.parameters()), b(m.parameters());
  CHECK(forward(a, m, x, &rng).probabilities.value() == forward(b, m, x).probabilities.value());

  ReaderConfig c = tiny();
  c.dropout = 0.5;
  const ReaderModel d = tiny_model(c, 9);
  Tape e(d.parameters()), f(d.parameters());
  CHECK(forward(e, d, x, &rng).probabilities.value() != forward(f, d, x).probabilities.value());
}

TEST_CASE("GRU reader ignores coreference annotations") {
  const ReaderModel m = tiny_model(tiny(CellKind::Gru), 10);
  const RCInstance base = probe_instance();
  const Tensor ref = [&] {
    Tape t(m.parameters());
    return Tensor(forward(t, m, m.prepare(base)).probabilities.value());
  }();
  RCInstance stripped = base;
  stripped.clusters.clusters.clear();
  for (const auto& [inst, spec] :
       std::vector<std::pair<RCInstance, CorruptionSpec>>{{base, {CorruptionMode::Randomize, 1.0, 3}},
                                                          {base, {CorruptionMode::RemoveFraction, 0.5, 4}},
                                                          {stripped, {}}}) {
    Tape t(m.parameters());
    CHECK(forward(t, m, m.prepare(inst, spec)).probabilities.value() == ref);
  }
}

// At desk scale the key vectors are the only extras. Below d = 32 they exceed
// the one percent budget, so parity is checked from d = 32 up.
TEST_CASE("parameter counts match within one percent") {
  for (Index d : {32, 48, 64}) {
    ReaderConfig c = tiny(CellKind::CorefGru);
    c.hidden = d;
    c.embedding = d;
    ReaderConfig g = c;
    g.recurrence = CellKind::Gru;
    const double nc = static_cast<double>(tiny_model(c).parameters().scalar_count());
    const double ng = static_cast<double>(tiny_model(g).parameters().scalar_count());
    CAPTURE(d);
    CHECK(std::abs(nc - ng) / nc <= 0.01);
  }
}

TEST_CASE("reader gradients pass the finite-difference check") {
  for (AnswerHead head : {AnswerHead::AttentionSum, AnswerHead::Classify}) {
    ReaderConfig c = tiny();
    c.answer_head = head;
    ReaderModel m = tiny_model(c, 2);
    const EncodedInstance x = m.prepare(probe_instance());
    const auto report = grad_check(
        m.parameters(), [&](auto& t) { return forward(t, m, x).loss; }, 1e-5, 1e-4, GradCheckOptions{200, 0});
    for (const auto& p : report.parameters) {
      CAPTURE(p.name);
      CHECK(p.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("instance validation") {
  const ReaderModel m = tiny_model(tiny());
  RCInstance no_pos = probe_instance();
  no_pos.candidates[1].positions.clear();
  CHECK_THROWS_AS(m.prepare(no_pos), MissingMention);
  RCInstance wrong = probe_instance();
  wrong.answer = "garden";
  CHECK_THROWS_AS(m.prepare(wrong), LabelError);
  CHECK(predict(cols({{0.4, 0.4, 0.2}})) == 0);
  CHECK(predict(cols({{0.2, 0.4, 0.4}})) == 1);
}
