#include <doctest.h>

#include <cmath>
#include <random>

#include "corefgru/autodiff.hpp"
#include "corefgru/gradcheck.hpp"

using namespace corefgru;

namespace {

Tensor col(std::initializer_list<double> v) {
  Tensor t(static_cast<Index>(v.size()), 1);
  Index i = 0;
  for (double x : v) t(i++, 0) = x;
  return t;
}

Tensor random_tensor(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor t(r, c);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

}  // namespace

TEST_CASE("softmax values") {
  const Tensor a = softmax(col({0.0, 0.0}));
  CHECK(a(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(a(1, 0) == doctest::Approx(0.5).epsilon(1e-15));

  const Tensor b = softmax(col({std::log(3.0), 0.0}));
  CHECK(std::abs(b(0, 0) - 0.75) < 1e-12);
  CHECK(std::abs(b(1, 0) - 0.25) < 1e-12);

  const Tensor c = softmax(col({1000.0, 0.0}));
  CHECK(c.allFinite());
  CHECK(std::abs(c(0, 0) - 1.0) < 1e-12);
  CHECK(std::abs(c(1, 0)) < 1e-12);

  CHECK_THROWS_AS(softmax(Tensor(0, 1)), InvalidShape);
}

TEST_CASE("softmax sums to one for long inputs") {
  std::mt19937_64 rng(11);
  for (Index n : {1, 7, 1000, 100000}) {
    const Tensor p = softmax(random_tensor(n, 1, rng, 50.0));
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    CHECK(p.minCoeff() >= 0.0);
  }
}

TEST_CASE("tape softmax matches the value kernel") {
  ParameterSet params;
  params.add("v", col({0.3, -1.2, 2.0}));
  Tape tape(params);
  const Var p = softmax(tape.param("v"));
  CHECK((p.value() - softmax(params.at("v"))).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward of a linear map is the outer product") {
  ParameterSet params;
  params.add("W", Tensor::Constant(2, 3, 0.5));
  Tape tape(params);
  const Tensor x = col({1.0, -2.0, 4.0});
  const Var loss = sum(matmul(tape.param("W"), tape.constant(x)));
  const Gradients g = tape.backward(loss);
  for (Index i = 0; i < 2; ++i) {
    for (Index j = 0; j < 3; ++j) CHECK(g[0](i, j) == x(j, 0));
  }
}

TEST_CASE("constant loss gives zero gradients") {
  ParameterSet params;
  params.add("W", Tensor::Constant(2, 2, 1.0));
  params.add("unused", Tensor::Constant(3, 1, 2.0));
  Tape tape(params);
  tape.param("W");
  const Var loss = sum(tape.constant(col({3.0})));
  const Gradients g = tape.backward(loss);
  CHECK(g[0].isZero(0.0));
  CHECK(g[1].isZero(0.0));
}

TEST_CASE("cross-entropy of equal logits") {
  ParameterSet params;
  params.add("logits", col({0.7, 0.7, 0.7}));
  Tape tape(params);
  const Var loss = cross_entropy(softmax(tape.param("logits")), 0);
  CHECK(loss.value()(0, 0) == doctest::Approx(std::log(3.0)));
  const Gradients g = tape.backward(loss);
  CHECK(std::abs(g[0](0, 0) + 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(g[0](1, 0) - 1.0 / 3.0) < 1e-12);
  CHECK(std::abs(g[0](2, 0) - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("shared parameters accumulate") {
  ParameterSet params;
  params.add("a", col({2.0}));
  Tape tape(params);
  const Var a = tape.param("a");
  const Var loss = sum(hadamard(a, a) + a);  // a^2 + a
  CHECK(tape.backward(loss)[0](0, 0) == 5.0);

  Gradients acc(params);
  tape.backward_into(loss, acc);
  tape.backward_into(loss, acc);
  CHECK(acc[0](0, 0) == 10.0);
}

TEST_CASE("backward errors") {
  ParameterSet params;
  params.add("W", Tensor::Constant(2, 2, 1.0));
  Tape tape(params);
  const Var w = tape.param("W");
  CHECK_THROWS_AS(tape.backward(w), InvalidShape);

  const Var opaque = tape.custom(w.value() * 2.0, {w});
  CHECK_THROWS_AS(tape.backward(sum(opaque)), UnsupportedOp);

  const Var doubled = tape.custom(w.value() * 2.0, {w}, [](const Tensor& go, std::vector<Tensor*>& gi) {
    *gi[0] += 2.0 * go;
  });
  CHECK(tape.backward(sum(doubled))[0].isApproxToConstant(2.0));
}

TEST_CASE("shape errors") {
  ParameterSet params;
  params.add("A", Tensor::Ones(2, 3));
  params.add("B", Tensor::Ones(2, 3));
  Tape tape(params);
  CHECK_THROWS_AS(matmul(tape.param("A"), tape.param("B")), InvalidShape);
  CHECK_NOTHROW(matmul(tape.param("A"), tape.param("B"), false, true));
  CHECK_THROWS_AS(slice(tape.param("A"), 1, 2, 0, 1), InvalidShape);
  CHECK_THROWS_AS(gather_cols(tape.param("A"), {3}), InvalidShape);
  CHECK_THROWS_AS(cross_entropy(tape.param("A"), 0), InvalidShape);
}

TEST_CASE("non-finite values are rejected") {
  ParameterSet params;
  CHECK_THROWS_AS(params.add("bad", col({std::nan("")})), NonFinite);
  params.add("x", col({1.0}));
  Tape tape(params);
  CHECK_THROWS_AS(tape.constant(col({INFINITY})), NonFinite);
  tape.set_check_finite(true);
  // -log(0) overflows.
  const Var p = tape.constant(col({0.0, 1.0}));
  CHECK_THROWS_AS(cross_entropy(p, 0), NonFinite);
}

TEST_CASE("dropout") {
  ParameterSet params;
  params.add("x", Tensor::Ones(20, 50));
  Tape tape(params);
  std::mt19937_64 rng(5);
  const Var x = tape.param("x");
  CHECK(dropout(x, 0.0, rng).id() == x.id());

  std::mt19937_64 r1(9), r2(9);
  const Var a = dropout(x, 0.25, r1);
  const Var b = dropout(x, 0.25, r2);
  CHECK(a.value() == b.value());
  for (Index i = 0; i < a.value().size(); ++i) {
    const double v = a.value().data()[i];
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15));
  }
  // Mean is preserved in expectation.
  CHECK(a.value().mean() == doctest::Approx(1.0).epsilon(0.1));
  CHECK_THROWS_AS(dropout(x, 1.0, rng), RangeError);
}

TEST_CASE("same tape twice is bitwise identical") {
  std::mt19937_64 rng(3);
  ParameterSet params;
  params.add("W", random_tensor(4, 3, rng));
  params.add("x", random_tensor(3, 5, rng));
  auto run = [&] {
    Tape tape(params);
    const Var h = tanh(matmul(tape.param("W"), tape.param("x")));
    const Var loss = mean(hadamard(h, sigmoid(h)));
    return std::make_pair(loss.value()(0, 0), tape.backward(loss)[0]);
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("grad_check on a linear loss") {
  std::mt19937_64 rng(1);
  ParameterSet params;
  params.add("W", random_tensor(3, 4, rng));
  const Tensor x = random_tensor(4, 2, rng);
  const auto report = grad_check(
      params, [&](Tape& t) { return sum(matmul(t.param("W"), t.constant(x))); }, 1e-5, 1e-4);
  CHECK(report.passed);
  CHECK(report.max_relative_error < 1e-9);
}

TEST_CASE("grad_check reports the failing parameter and coordinate") {
  ParameterSet params;
  params.add("ok", col({1.0, 2.0}));
  params.add("broken", col({0.5, -0.5, 1.5}));
  // Wrong adjoint on coordinate 2 of "broken".
  LossBuilder build = [](Tape& t) {
    const Var b = t.param("broken");
    const Var cube = t.custom(b.value().array().cube().matrix(), {b}, [v = b.value()](const Tensor& go, std::vector<Tensor*>& gi) {
      Tensor g = 3.0 * v.array().square().matrix();
      g(2, 0) = 0.0;
      *gi[0] += g.cwiseProduct(go);
    });
    return sum(cube) + sum(t.param("ok"));
  };
  const auto report = grad_check(params, build, 1e-5, 1e-4);
  CHECK_FALSE(report.passed);
  REQUIRE(report.failing() == std::vector<std::string>{"broken"});
  CHECK(report.parameters[1].worst_coordinate == 2);
  CHECK(report.parameters[0].passed);
  // Parameters are restored.
  CHECK(params.at("broken")(2, 0) == 1.5);
}

TEST_CASE("grad_check rejects non-deterministic builders and bad eps") {
  ParameterSet params;
  params.add("w", col({1.0}));
  int calls = 0;
  LossBuilder flaky = [&](Tape& t) { return sum(t.param("w")) + sum(t.constant(col({double(calls++)}))); };
  calls = 0;
  CHECK_THROWS_AS(grad_check(params, flaky, 1e-5, 1e-4), NonDeterministic);
  LossBuilder fine = [](Tape& t) { return sum(t.param("w")); };
  CHECK_THROWS_AS(grad_check(params, fine, 0.0, 1e-4), RangeError);
  CHECK_THROWS_AS(grad_check(params, fine, 0.1, 1e-4), RangeError);
}

TEST_CASE("grad_check subsamples at least 200 coordinates") {
  std::mt19937_64 rng(2);
  ParameterSet params;
  params.add("W", random_tensor(30, 30, rng));
  GradCheckOptions opt;
  opt.max_coordinates = 10;
  opt.seed = 4;
  const auto report = grad_check(params, [](Tape& t) { return mean(tanh(t.param("W"))); }, 1e-5, 1e-4, opt);
  CHECK(report.parameters[0].coordinates_checked == 200);
  CHECK(report.passed);
}

// Seeded random graphs over the whole op catalog.
TEST_CASE("random graphs of depth <= 6 pass the gradient check") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    std::mt19937_64 rng(seed);
    ParameterSet params;
    params.add("A", random_tensor(3, 3, rng));
    params.add("B", random_tensor(3, 4, rng));
    params.add("v", random_tensor(3, 1, rng));
    params.add("E", random_tensor(3, 6, rng));
    std::uniform_int_distribution<int> op(0, 11);
    std::uniform_int_distribution<int> depth_d(1, 6);
    const int depth = depth_d(rng);
    std::vector<int> ops;
    for (int i = 0; i < depth; ++i) ops.push_back(op(rng));
    const bool ce_head = seed % 2 == 0;
    const std::vector<Index> ids{5, 0, 2, 2};

    auto build = [&](auto& t) {
      using V = std::decay_t<decltype(t.param("A"))>;
      V h = t.param("B");  // 3 x 4
      for (int o : ops) {
        switch (o) {
          case 0: h = matmul(t.param("A"), h); break;
          case 1: h = h + t.param("v"); break;
          case 2: h = hadamard(h, tanh(h)); break;
          case 3: h = sigmoid(h); break;
          case 4: h = tanh(h); break;
          case 5: h = softmax(h); break;
          case 6: h = slice(concat({h, h}, 0), 1, 3, 0, 4); break;
          case 7: h = concat({slice(h, 0, 3, 0, 2), slice(h, 0, 3, 2, 2)}, 1); break;
          case 8: h = h - hadamard(gather_cols(t.param("E"), ids), h); break;
          case 9: h = matmul(t.param("A"), h, true) + t.param("B"); break;
          case 10: h = hadamard(h, mean(h)); break;
          default: h = concat({mean_cols(h), slice(h, 0, 3, 1, 3)}, 1); break;
        }
      }
      if (ce_head) return cross_entropy(softmax(mean_cols(h)), 1);
      return sum(h);
    };
    CAPTURE(seed);
    const auto report = grad_check(params, build, 1e-5, 1e-4);
    CHECK(report.passed);
  }
}
