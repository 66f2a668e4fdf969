#include "doctest.h"
#include "seqmetric/tensor.hpp"

#include <cmath>
#include <random>

using namespace seqmetric;

namespace {

Array random_array(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                   double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array a(r, c);
  for (double& v : a.values()) v = u(rng);
  return a;
}

struct OpCase {
  OpKind kind;
  std::vector<Shape> shapes;
  OpAttrs attrs;
  double lo = -1.0;
  double hi = 1.0;
};

}  // namespace

TEST_CASE("matmul with identity returns the input") {
  Tensor a = constant(Array(2, 2, {1, 2, 3, 4}));
  Tensor i = constant(Array::identity(2));
  CHECK(matmul(a, i).value() == Array(2, 2, {1, 2, 3, 4}));
}

TEST_CASE("sigmoid at zero is one half") {
  CHECK(sigmoid(constant(Array::scalar(0.0))).item() == 0.5);
}

TEST_CASE("softmax of [0, ln 3]") {
  // Reference values 1/4 and 3/4 from exp(0)/(1+3) and 3/(1+3).
  Tensor s = softmax(constant(Array::row({0.0, std::log(3.0)})), 1);
  CHECK(s.value()[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(s.value()[1] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("softmax is overflow safe and honours the mask") {
  Tensor s = softmax(constant(Array::row({1000.0, 1000.0})), 1);
  CHECK(s.value()[0] == doctest::Approx(0.5));
  Array mask = Array::row({1.0, 0.0, 1.0});
  Tensor m = softmax(constant(Array::row({0.0, 50.0, 0.0})), 1, &mask);
  CHECK(m.value()[0] == doctest::Approx(0.5));
  CHECK(m.value()[1] == 0.0);
}

TEST_CASE("backward of sum(x*x) is 2x") {
  Tensor x = parameter(Array::row({1, 2, 3}));
  Tape tape;
  TapeScope scope(tape);
  Tensor y = sum_all(mul(x, x));
  tape.backward(y);
  CHECK(x.grad() == Array::row({2, 4, 6}));
}

TEST_CASE("backward of c*x is c") {
  Tensor x = parameter(Array::row({1, -2, 3, 0.5}));
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum_all(scale(x, 2.5)));
  const Array g = x.grad();
  for (double v : g.values()) CHECK(v == 2.5);
}

TEST_CASE("backward errors") {
  Tensor x = parameter(Array::row({1, 2}));
  Tape tape;
  TapeScope scope(tape);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), TapeError);
  Tensor s = sum_all(y);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), TapeError);
  tape.reset();
  Tensor s2 = sum_all(mul(x, x));
  CHECK_NOTHROW(tape.backward(s2));
}

TEST_CASE("untaped output cannot be differentiated") {
  Tensor x = parameter(Array::row({1, 2}));
  Tensor s = sum_all(x);
  Tape tape;
  CHECK_THROWS_AS(tape.backward(s), TapeError);
}

TEST_CASE("shape and domain errors name the op") {
  Tensor a = constant(Array(2, 3));
  Tensor b = constant(Array(2, 3));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(constant(Array(2, 3)), constant(Array(3, 2))), ShapeError);
  CHECK_THROWS_AS(log(constant(Array::row({-1.0}))), DomainError);
  CHECK_THROWS_AS(sqrt(constant(Array::row({-1e-3}))), DomainError);
}

TEST_CASE("composed sigmoid-matmul chain matches finite differences") {
  std::mt19937_64 rng(3);
  Tensor w = parameter(random_array(3, 4, rng));
  Tensor x = constant(random_array(2, 3, rng));
  Tensor v = constant(random_array(2, 4, rng));
  auto f = [&](const Tensor& p) { return sum_all(mul(sigmoid(matmul(x, p)), v)); };
  CHECK(finite_difference_check(f, w, 1e-5) < 1e-4);
}

TEST_CASE("finite_difference_check basics") {
  std::mt19937_64 rng(5);
  Tensor x = parameter(random_array(1, 6, rng, -3, 3));
  CHECK(finite_difference_check([](const Tensor& p) { return sum_all(square(p)); }, x, 1e-5) <
        1e-8);
  Tensor c = parameter(random_array(2, 2, rng));
  auto constant_f = [](const Tensor&) { return constant(Array::scalar(4.0)); };
  CHECK(finite_difference_check(constant_f, c, 1e-5) == 0.0);
  CHECK_THROWS_AS(finite_difference_check(constant_f, c, 0.0), DomainError);
  auto bad = [](const Tensor& p) { return log(scale(sum_all(p), 0.0)); };
  CHECK_THROWS_AS(finite_difference_check(bad, c, 1e-5), DomainError);
}

TEST_CASE("every op kind matches central differences") {
  Array row_mask = Array(3, 4, 1.0);
  row_mask(0, 1) = 0.0;
  row_mask(2, 3) = 0.0;
  std::vector<OpCase> cases = {
      {OpKind::MatMul, {{3, 4}, {4, 2}}, {}},
      {OpKind::Add, {{3, 4}, {3, 4}}, {}},
      {OpKind::Add, {{3, 4}, {3, 1}}, {}},
      {OpKind::Sub, {{3, 4}, {1, 4}}, {}},
      {OpKind::Mul, {{3, 4}, {3, 4}}, {}},
      {OpKind::Mul, {{3, 4}, {1, 1}}, {}},
      {OpKind::Div, {{3, 4}, {3, 1}}, {}, 0.5, 2.0},
      {OpKind::AddRow, {{3, 4}, {1, 4}}, {}},
      {OpKind::Neg, {{2, 3}}, {}},
      {OpKind::Scale, {{2, 3}}, {.scalar = -1.7}},
      {OpKind::AddScalar, {{2, 3}}, {.scalar = 0.3}},
      {OpKind::Sigmoid, {{2, 3}}, {}},
      {OpKind::Tanh, {{2, 3}}, {}},
      {OpKind::Relu, {{2, 3}}, {}, 0.1, 1.0},
      {OpKind::Exp, {{2, 3}}, {}},
      {OpKind::Log, {{2, 3}}, {}, 0.2, 2.0},
      {OpKind::Sqrt, {{2, 3}}, {}, 0.2, 2.0},
      {OpKind::Square, {{2, 3}}, {}},
      {OpKind::Concat, {{2, 3}, {1, 3}}, {.axis = 0}},
      {OpKind::Concat, {{2, 3}, {2, 2}}, {.axis = 1}},
      {OpKind::Slice, {{4, 3}}, {.axis = 0, .begin = 1, .end = 3}},
      {OpKind::Slice, {{4, 3}}, {.axis = 1, .begin = 0, .end = 2}},
      {OpKind::Transpose, {{2, 3}}, {}},
      {OpKind::Reshape, {{2, 6}}, {.rows = 3, .cols = 4}},
      {OpKind::Sum, {{3, 4}}, {.axis = 0}},
      {OpKind::Mean, {{3, 4}}, {.axis = 1}},
      {OpKind::SumAll, {{3, 4}}, {}},
      {OpKind::MeanAll, {{3, 4}}, {}},
      {OpKind::Softmax, {{3, 4}}, {.axis = 1}},
      {OpKind::Softmax, {{3, 4}}, {.axis = 0}},
      {OpKind::Softmax, {{3, 4}}, {.axis = 1, .mask = &row_mask}},
      {OpKind::LogSoftmax, {{3, 4}}, {.axis = 1}},
      {OpKind::LogSoftmax, {{3, 4}}, {.axis = 1, .mask = &row_mask}},
      {OpKind::SquaredNorm, {{3, 4}}, {}},
      {OpKind::NormalizeRows, {{3, 5}}, {.eps = 1e-5}},
      {OpKind::StandardizeCols, {{5, 3}}, {.eps = 1e-5}},
      {OpKind::L2NormalizeRows, {{3, 4}}, {}, 0.2, 1.0},
      {OpKind::PoolTime, {{2, 3}, {6, 4}}, {}},
  };
  std::mt19937_64 rng(11);
  for (const OpCase& oc : cases) {
    CAPTURE(op_name(oc.kind));
    std::vector<Tensor> inputs;
    for (const Shape& s : oc.shapes) inputs.push_back(parameter(random_array(s[0], s[1], rng, oc.lo, oc.hi)));
    // Fixed contraction weights, drawn once per case.
    std::mt19937_64 wrng(rng());
    Tensor probe = apply(oc.kind, inputs, oc.attrs);
    Tensor w = constant(random_array(probe.rows(), probe.cols(), wrng));
    auto f = [&]() { return sum_all(mul(apply(oc.kind, inputs, oc.attrs), w)); };
    CHECK(finite_difference_check(f, std::span<Tensor>(inputs), 1e-5) < 1e-6);
  }
}

TEST_CASE("taped and untaped forward values agree bitwise") {
  std::mt19937_64 rng(17);
  Tensor w = parameter(random_array(4, 3, rng));
  Tensor x = constant(random_array(5, 4, rng));
  auto f = [&]() {
    Tensor h = tanh(matmul(x, w));
    return l2_normalize_rows(standardize_cols(normalize_rows(h, 1e-5), 1e-5));
  };
  Array untaped = f().value();
  Tape tape;
  TapeScope scope(tape);
  Tensor taped = f();
  CHECK(taped.requires_grad());
  CHECK(taped.value() == untaped);
}

TEST_CASE("backward is linear over summed scalars") {
  std::mt19937_64 rng(19);
  Tensor x = parameter(random_array(2, 3, rng));
  auto f1 = [](const Tensor& p) { return sum_all(exp(p)); };
  auto f2 = [](const Tensor& p) { return squared_norm(tanh(p)); };
  auto grad_of = [&](auto&& f) {
    x.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    tape.backward(f(x));
    return x.grad();
  };
  Array g1 = grad_of(f1);
  Array g2 = grad_of(f2);
  Array g12 = grad_of([&](const Tensor& p) { return add(f1(p), f2(p)); });
  for (std::size_t i = 0; i < g12.size(); ++i) CHECK(g12[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-14));
}

TEST_CASE("layer-norm core on [1,2,3]") {
  Tensor y = normalize_rows(constant(Array::row({1, 2, 3})), 0.0);
  // mean 2, population std sqrt(2/3)
  CHECK(y.value()[0] == doctest::Approx(-1.224744871391589));
  CHECK(y.value()[1] == doctest::Approx(0.0));
  CHECK(y.value()[2] == doctest::Approx(1.224744871391589));
}
