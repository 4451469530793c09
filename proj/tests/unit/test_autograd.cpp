#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "wdgda/autograd.hpp"
#include "wdgda/gradcheck.hpp"

using namespace wdgda;
using wdgda::testing::random_tensor;

TEST_CASE("backward of x^2 at 3 is 6") {
  auto x = Tensor::scalar(3.0).clone_leaf(true);
  auto grads = backward(square(x));
  REQUIRE(grads.count(x.id()));
  CHECK(grads.at(x.id()).item() == 6.0);
  CHECK(x.has_grad());
  CHECK(x.grad().item() == 6.0);
}

TEST_CASE("gradient of sum(conv3d(x, k)) matches central differences") {
  auto k = random_tensor({2, 1, 2, 2, 2}, 1);
  auto x0 = random_tensor({1, 1, 4, 4, 4}, 2);
  auto err = finite_diff_check([&](const Tensor& x) { return sum(conv3d(x, k)); }, x0, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("double backward of (d/dx x^3)^2 at x=2 is 288") {
  auto x = Tensor::scalar(2.0).clone_leaf(true);
  auto cube = mul(mul(x, x), x);
  auto first = grad(cube, {x}, true).front();
  CHECK(first.item() == doctest::Approx(12.0));
  CHECK(first.requires_grad());
  auto second = grad(square(first), {x}).front();
  CHECK(second.item() == doctest::Approx(288.0).epsilon(1e-14));
}

TEST_CASE("finite_diff_check of sum is exact") {
  auto err = finite_diff_check([](const Tensor& x) { return sum(x); }, random_tensor({3, 4}, 3));
  CHECK(err < 1e-10);
}

TEST_CASE("finite_diff_check steps around a nearby kink but still sees wrong gradients") {
  // |x| with x = 3e-6: the 1e-5 central difference straddles 0
  const auto p = Tensor::from_data({1}, {3e-6});
  CHECK(finite_diff_check([](const Tensor& x) { return sum(abs(x)); }, p, 1e-5) < 1e-9);
  // forward 2x, backward claims slope 1
  auto wrong = [](const Tensor& x) {
    return make_result("wrong", x.shape(), {2.0 * x.item()}, {x},
                       [](const Tensor& g, const Tensor&) { return std::vector<Tensor>{g}; });
  };
  CHECK(finite_diff_check(wrong, p, 1e-5) > 0.5);
}

TEST_CASE("every registered op passes the first-order gradient check") {
  for (const auto& r : check_op_gradients(10, 7)) {
    INFO(r.name << " max error " << r.max_error);
    CHECK(r.passed());
  }
}

TEST_CASE("smooth ops pass the gradient check with 32-bit storage") {
  for (const auto& r : check_op_gradients_f32(10, 7)) {
    INFO(r.name << " max error " << r.max_error);
    CHECK(r.passed());
  }
}

TEST_CASE("certified ops pass the second-order check") {
  for (const auto& r : check_second_order(10, 7)) {
    INFO(r.name << " max error " << r.max_error);
    CHECK(r.passed());
  }
}

TEST_CASE("backward is linear in the loss") {
  auto k = random_tensor({2, 1, 2, 2, 2}, 4, -1, 1, true);
  auto x = random_tensor({1, 1, 3, 4, 4}, 5);
  auto f = [&] { return sum(square(conv3d(x, k))); };
  auto g = [&] { return mean(tanh(conv3d(x, k))); };
  const double a = 0.75, b = -2.0;
  auto gf = backward(f()).at(k.id());
  auto gg = backward(g()).at(k.id());
  auto gc = backward(add(scale(f(), a), scale(g(), b))).at(k.id());
  for (std::int64_t i = 0; i < k.numel(); ++i) {
    CHECK(std::fabs(gc[i] - (a * gf[i] + b * gg[i])) < 1e-12);
  }
}

TEST_CASE("identical inputs give bit-identical values and gradients") {
  auto run = [] {
    auto k = random_tensor({3, 2, 3, 3, 3}, 6, -1, 1, true);
    auto x = random_tensor({2, 2, 3, 5, 5}, 7);
    auto y = instance_norm(leaky_relu(conv3d(x, k, {1, 2, 2}, {1, 1, 1}), 0.2));
    auto loss = mean(square(y));
    auto g = backward(loss).at(k.id());
    return std::make_pair(loss.item(), g.to_vector());
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("backward error paths") {
  auto x = random_tensor({3}, 8, -1, 1, true);
  SUBCASE("non-scalar loss") { CHECK_THROWS_AS(backward(mul(x, x)), GraphError); }
  SUBCASE("graph already freed") {
    auto loss = sum(square(x));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), GraphError);
  }
  SUBCASE("retained graph can be swept twice") {
    auto loss = sum(square(x));
    auto g1 = backward(loss, true).at(x.id());
    auto g2 = backward(loss).at(x.id());
    CHECK(g1.to_vector() == g2.to_vector());
  }
  SUBCASE("non-certified op under second-order differentiation") {
    auto y = sum(tanh(x));
    CHECK_THROWS_AS(grad(y, {x}, true), UnsupportedOpError);
  }
}

TEST_CASE("gradients flow only to inputs that require them") {
  auto a = random_tensor({2, 2}, 9, -1, 1, true);
  auto b = random_tensor({2, 2}, 10);
  auto grads = backward(sum(mul(a, b)));
  CHECK(grads.size() == 1);
  CHECK(grads.at(a.id()).to_vector() == b.to_vector());
  auto detached = backward(sum(mul(a.detach(), b)));
  CHECK(detached.empty());
}
