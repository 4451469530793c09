#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "wdgda/autograd.hpp"
#include "wdgda/gradcheck.hpp"

namespace wdgda {

namespace {

using UnaryFn = std::function<Tensor(const Tensor&)>;

enum class SampleDomain { Signed, Positive, AwayFromKinks };

struct OpCase {
  std::string name;
  Shape shape;
  SampleDomain domain;
  UnaryFn op;
};

Tensor sample(const Shape& shape, SampleDomain domain, std::mt19937_64& rng, DType dtype) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) {
    x = u(rng);
    if (domain == SampleDomain::Positive) x = 0.5 + std::fabs(x) * 1.5;
    if (domain == SampleDomain::AwayFromKinks) {
      // keep clear of 0 and of the +-0.5 clamp bounds
      x = std::copysign(0.1 + 0.8 * std::fabs(x), x);
      if (std::fabs(std::fabs(x) - 0.5) < 0.05) x += std::copysign(0.1, x);
    }
  }
  return Tensor::from_data(shape, std::move(v), dtype);
}

Tensor fixed(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = u(rng);
  return Tensor::from_data(shape, std::move(v));
}

// Reduces an op's output to a scalar with fixed random weights so every
// output coordinate contributes a distinct gradient.
UnaryFn weighted(UnaryFn op, std::uint64_t seed) {
  return [op = std::move(op), seed](const Tensor& x) {
    auto y = op(x);
    auto w = fixed(y.shape(), seed ^ 0x9e3779b97f4a7c15ull).to(y.dtype());
    return sum(mul(y, w));
  };
}

std::vector<OpCase> op_cases() {
  const Shape v5{2, 2, 2, 3, 3};
  auto other = fixed({2, 3}, 11);
  auto positive = fixed({2, 3}, 12, 0.5, 2.0);
  auto row = fixed({3}, 13);
  auto kernel = fixed({3, 2, 2, 3, 3}, 14);
  auto vol = fixed(v5, 15);
  auto mat = fixed({3, 4}, 16);
  auto weight = fixed({5, 4}, 17);
  auto bias = fixed({5}, 18);
  auto t = fixed({2, 1}, 19, 0.0, 1.0);
  auto ada_scale = fixed({2, 2}, 20);
  auto ada_shift = fixed({2, 2}, 21);
  const Shape conv_out{2, 3, 3, 2, 2};
  auto conv_grad = fixed(conv_out, 22);

  return {
      {"add", {2, 3}, SampleDomain::Signed, [=](const Tensor& x) { return add(x, other); }},
      {"add_broadcast", {2, 3}, SampleDomain::Signed, [=](const Tensor& x) { return add(row, x); }},
      {"add_broadcast_rhs", {3}, SampleDomain::Signed, [=](const Tensor& x) { return add(other, x); }},
      {"sub", {2, 3}, SampleDomain::Signed, [=](const Tensor& x) { return sub(other, x); }},
      {"mul", {2, 3}, SampleDomain::Signed, [=](const Tensor& x) { return mul(x, other); }},
      {"mul_self", {2, 3}, SampleDomain::Signed, [=](const Tensor& x) { return mul(x, x); }},
      {"div_numerator", {2, 3}, SampleDomain::Signed, [=](const Tensor& x) { return div(x, positive); }},
      {"div_denominator", {2, 3}, SampleDomain::Positive,
       [=](const Tensor& x) { return div(other, x); }},
      {"neg", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return neg(x); }},
      {"scale", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return scale(x, -2.5); }},
      {"add_scalar", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return add_scalar(x, 0.7); }},
      {"square", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return square(x); }},
      {"sqrt", {2, 3}, SampleDomain::Positive, [](const Tensor& x) { return sqrt(x); }},
      {"rsqrt", {2, 3}, SampleDomain::Positive, [](const Tensor& x) { return rsqrt(x); }},
      {"exp", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return exp(x); }},
      {"log", {2, 3}, SampleDomain::Positive, [](const Tensor& x) { return log(x); }},
      {"abs", {2, 3}, SampleDomain::AwayFromKinks, [](const Tensor& x) { return abs(x); }},
      {"tanh", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return tanh(x); }},
      {"sigmoid", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return sigmoid(x); }},
      {"relu", {2, 3}, SampleDomain::AwayFromKinks, [](const Tensor& x) { return relu(x); }},
      {"leaky_relu", {2, 3}, SampleDomain::AwayFromKinks,
       [](const Tensor& x) { return leaky_relu(x, 0.2); }},
      {"clamp", {2, 3}, SampleDomain::AwayFromKinks,
       [](const Tensor& x) { return clamp(x, -0.5, 0.5); }},
      {"lerp_a", {2, 3}, SampleDomain::Signed, [=](const Tensor& x) { return lerp(x, other, t); }},
      {"lerp_b", {2, 3}, SampleDomain::Signed, [=](const Tensor& x) { return lerp(other, x, t); }},
      {"lerp_t", {2, 1}, SampleDomain::Signed, [=](const Tensor& x) { return lerp(other, row, x); }},
      {"sum", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return sum(x); }},
      {"mean", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return mean(x); }},
      {"sum_to", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return sum_to(x, {1, 3}); }},
      {"broadcast_to", {1, 3}, SampleDomain::Signed,
       [](const Tensor& x) { return broadcast_to(x, {4, 3}); }},
      {"mean_over", v5, SampleDomain::Signed, [](const Tensor& x) { return mean_over(x, {2, 3, 4}); }},
      {"reshape", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return reshape(x, {3, 2}); }},
      {"transpose", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return transpose(x); }},
      {"matmul_lhs", {2, 3}, SampleDomain::Signed, [=](const Tensor& x) { return matmul(x, mat); }},
      {"matmul_rhs", {3, 4}, SampleDomain::Signed, [=](const Tensor& x) { return matmul(other, x); }},
      {"linear_input", {3, 4}, SampleDomain::Signed,
       [=](const Tensor& x) { return linear(x, weight, bias); }},
      {"linear_weight", {5, 4}, SampleDomain::Signed,
       [=](const Tensor& x) { return linear(mat, x, bias); }},
      {"linear_bias", {5}, SampleDomain::Signed, [=](const Tensor& x) { return linear(mat, weight, x); }},
      {"concat", {2, 3}, SampleDomain::Signed,
       [=](const Tensor& x) { return concat({other, x, square(x)}, 1); }},
      {"slice", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return slice(x, 1, 1, 2); }},
      {"embed", {2, 3}, SampleDomain::Signed, [](const Tensor& x) { return embed(x, 0, 1, 4); }},
      {"conv3d_input", v5, SampleDomain::Signed,
       [=](const Tensor& x) { return conv3d(x, kernel, {1, 2, 2}, {1, 1, 1}); }},
      {"conv3d_kernel", {3, 2, 2, 3, 3}, SampleDomain::Signed,
       [=](const Tensor& k) { return conv3d(vol, k, {1, 2, 2}, {1, 1, 1}); }},
      {"conv3d_input_grad", conv_out, SampleDomain::Signed,
       [=](const Tensor& g) { return conv3d_input_grad(g, kernel, v5, {1, 2, 2}, {1, 1, 1}); }},
      {"conv3d_kernel_grad", v5, SampleDomain::Signed,
       [=](const Tensor& x) {
         return conv3d_kernel_grad(x, conv_grad, kernel.shape(), {1, 2, 2}, {1, 1, 1});
       }},
      {"upsample3d_nearest", v5, SampleDomain::Signed,
       [](const Tensor& x) { return upsample3d_nearest(x, {1, 2, 2}); }},
      {"downsample3d_sum", {2, 2, 2, 4, 4}, SampleDomain::Signed,
       [](const Tensor& x) { return downsample3d_sum(x, {1, 2, 2}); }},
      {"instance_norm", v5, SampleDomain::Signed, [](const Tensor& x) { return instance_norm(x); }},
      {"adaptive_instance_norm", v5, SampleDomain::Signed,
       [=](const Tensor& x) { return adaptive_instance_norm(x, ada_scale, ada_shift); }},
      {"adaptive_instance_norm_scale", {2, 2}, SampleDomain::Signed,
       [=](const Tensor& s) { return adaptive_instance_norm(vol, s, ada_shift); }},
      {"adaptive_instance_norm_shift", {2, 2}, SampleDomain::Signed,
       [=](const Tensor& s) { return adaptive_instance_norm(vol, ada_scale, s); }},
      {"softmax_over_channels", v5, SampleDomain::Signed,
       [](const Tensor& x) { return softmax_over_channels(x); }},
      {"log_softmax_over_channels", v5, SampleDomain::Signed,
       [](const Tensor& x) { return log_softmax_over_channels(x); }},
      {"l1_distance", {2, 3}, SampleDomain::AwayFromKinks,
       [](const Tensor& x) { return l1_distance(x, Tensor::zeros({2, 3})); }},
  };
}

std::vector<GradcheckResult> run(const std::vector<OpCase>& cases, int points, std::uint64_t seed,
                                 DType dtype, double eps, double tolerance) {
  std::vector<GradcheckResult> results;
  std::mt19937_64 rng(seed);
  for (const auto& c : cases) {
    GradcheckResult r{c.name, 0.0, tolerance};
    for (int p = 0; p < points; ++p) {
      auto point = sample(c.shape, c.domain, rng, dtype);
      auto f = weighted(c.op, seed + static_cast<std::uint64_t>(p));
      r.max_error = std::max(r.max_error, finite_diff_check(f, point, eps));
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace

std::vector<GradcheckResult> check_op_gradients(int points, std::uint64_t seed) {
  return run(op_cases(), points, seed, DType::F64, 1e-5, 1e-6);
}

std::vector<GradcheckResult> check_op_gradients_f32(int points, std::uint64_t seed) {
  std::vector<OpCase> smooth;
  for (auto& c : op_cases()) {
    if (c.domain == SampleDomain::Signed) smooth.push_back(c);
  }
  return run(smooth, points, seed, DType::F32, 1e-2, 1e-3);
}

std::vector<GradcheckResult> check_second_order(int points, std::uint64_t seed) {
  // Each case is S(x, p); the checked function is p -> ||dS/dx||^2, whose
  // analytic gradient needs a recorded first backward.
  struct SecondOrderCase {
    std::string name;
    Shape x_shape;
    Shape p_shape;
    SampleDomain x_domain;
    std::function<Tensor(const Tensor& x, const Tensor& p)> op;
  };
  const Shape v5{2, 2, 2, 3, 3};
  const std::vector<SecondOrderCase> cases = {
      {"conv3d", v5, {3, 2, 2, 3, 3}, SampleDomain::Signed,
       [](const Tensor& x, const Tensor& k) { return conv3d(x, k, {1, 2, 2}, {1, 1, 1}); }},
      {"linear", {3, 4}, {5, 4}, SampleDomain::Signed,
       [](const Tensor& x, const Tensor& w) { return linear(x, w, Tensor{}); }},
      {"leaky_relu", {2, 3}, {2, 3}, SampleDomain::AwayFromKinks,
       [](const Tensor& x, const Tensor& p) { return leaky_relu(mul(x, p), 0.2); }},
      {"instance_norm", v5, v5, SampleDomain::Signed,
       [](const Tensor& x, const Tensor& p) { return instance_norm(mul(x, p)); }},
      {"mean", {2, 3}, {2, 3}, SampleDomain::Signed,
       [](const Tensor& x, const Tensor& p) { return mean(square(mul(x, p))); }},
      {"lerp", {2, 3}, {2, 1}, SampleDomain::Signed,
       [](const Tensor& x, const Tensor& t) {
         return lerp(x, Tensor::full({2, 3}, 0.3), t);
       }},
  };

  std::vector<GradcheckResult> results;
  std::mt19937_64 rng(seed);
  for (const auto& c : cases) {
    GradcheckResult r{c.name, 0.0, 1e-3};
    for (int p = 0; p < points; ++p) {
      auto x0 = sample(c.x_shape, c.x_domain, rng, DType::F64);
      auto p0 = sample(c.p_shape, SampleDomain::AwayFromKinks, rng, DType::F64);
      const auto wseed = seed + 100 + static_cast<std::uint64_t>(p);
      auto norm_sq = [&](const Tensor& param) {
        auto x = x0.clone_leaf(true);
        auto y = c.op(x, param);
        auto s = sum(mul(y, fixed(y.shape(), wseed)));
        auto gx = grad(s, {x}, true).front();
        return sum(square(gx));
      };
      r.max_error = std::max(r.max_error, finite_diff_check(norm_sq, p0, 1e-5));
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace wdgda
