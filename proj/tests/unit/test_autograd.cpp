#include <doctest.h>

#include "batman/autograd.hpp"
#include "batman/gradcheck.hpp"
#include "batman/rng.hpp"

using namespace batman;

TEST_SUITE("autograd") {

TEST_CASE("sum of squares gradient") {
  Rng rng(1);
  const Tensor x = randn({3, 4}, rng);
  Tape tape;
  Var v = tape.leaf(x);
  tape.backward(ag::sum(ag::mul(v, v)));
  const Tensor g = tape.grad(v);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(g[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-15));
  const GradCheckResult r =
      grad_check([](Tape&, const std::vector<Var>& in) { return ag::sum(ag::mul(in[0], in[0])); }, {x});
  CHECK(r.passed(1e-8));
}

TEST_CASE("layer norm and matmul chain") {
  Rng rng(2);
  const GradCheckResult r = grad_check(
      [](Tape&, const std::vector<Var>& in) {
        return ag::sum(ag::gelu(ag::matmul(ag::layer_norm(in[0], in[1], in[2]), in[3])));
      },
      {randn({5, 6}, rng), randn({6}, rng), randn({6}, rng), randn({6, 3}, rng)});
  CHECK(r.passed(1e-4));
}

TEST_CASE("every operation passes the finite-difference check") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const auto& c : operation_gradcheck_cases(seed)) {
      CAPTURE(c.name);
      CAPTURE(seed);
      const GradCheckResult r = grad_check(c.f, c.inputs, c.options);
      CHECK(r.passed(1e-4));
    }
  }
}

TEST_CASE("non-finite analytic gradient is reported") {
  const GradCheckResult r = grad_check(
      [](Tape& t, const std::vector<Var>& in) {
        const Tensor x = in[0].value();
        return t.record(Tensor::scalar(x[0]), {in[0]},
                        [](const Tensor&) { return std::vector<Tensor>{Tensor::full({2}, NAN)}; });
      },
      {Tensor::from_list({2}, {1, 2})});
  CHECK_FALSE(r.finite);
  CHECK_FALSE(r.passed(1.0));
  CHECK(r.message.find("coordinate") != std::string::npos);
}

TEST_CASE("gradients have input shapes and accumulate over reuse") {
  Tape tape;
  Var a = tape.leaf(Tensor::from_list({2, 2}, {1, 2, 3, 4}));
  Var c = tape.constant(Tensor::from_list({2, 2}, {1, 1, 1, 1}));
  Var y = ag::sum(ag::add(ag::mul(a, c), ag::scale(a, 2.0)));
  tape.backward(y);
  const Tensor g = tape.grad(a);
  CHECK(g.shape() == Shape{2, 2});
  for (double v : g.data()) CHECK(v == 3.0);
  const Tensor gc = tape.grad(c);
  CHECK(gc.shape() == Shape{2, 2});
  for (double v : gc.data()) CHECK(v == 0.0);
}

TEST_CASE("unused leaves get zero gradients") {
  Tape tape;
  Var a = tape.leaf(Tensor::from_list({2}, {1, 2}));
  Var b = tape.leaf(Tensor::from_list({3}, {1, 2, 3}));
  tape.backward(ag::sum(a));
  const Tensor gb = tape.grad(b);
  for (double v : gb.data()) CHECK(v == 0.0);
}

}  // TEST_SUITE
