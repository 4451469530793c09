#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "wdgda/serialize.hpp"
#include "wdgda/tensor.hpp"

using namespace wdgda;
using wdgda::testing::direct_conv3d;
using wdgda::testing::random_tensor;

TEST_CASE("conv3d with a unit 1x1x1 kernel is the identity") {
  auto x = random_tensor({1, 1, 3, 3, 3}, 1);
  auto k = Tensor::full({1, 1, 1, 1, 1}, 1.0);
  auto y = conv3d(x, k);
  REQUIRE(y.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv3d of a zero input is zero") {
  auto x = Tensor::zeros({2, 3, 4, 5, 5});
  auto k = random_tensor({4, 3, 3, 3, 3}, 2);
  auto y = conv3d(x, k, {1, 2, 2}, {1, 1, 1});
  CHECK(y.shape() == Shape{2, 4, 4, 3, 3});
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv3d matches direct summation") {
  SUBCASE("spec geometry") {
    auto x = random_tensor({1, 1, 4, 4, 4}, 3);
    auto k = random_tensor({1, 1, 2, 2, 2}, 4);
    auto y = conv3d(x, k);
    auto ref = direct_conv3d(x, k, {1, 1, 1}, {0, 0, 0});
    REQUIRE(y.numel() == static_cast<std::int64_t>(ref.size()));
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(y[i] - ref[i]) < 1e-12);
  }
  SUBCASE("strided, padded, multi-channel") {
    auto x = random_tensor({2, 3, 5, 6, 7}, 5);
    auto k = random_tensor({4, 3, 3, 3, 2}, 6);
    for (Int3 s : {Int3{1, 1, 1}, Int3{1, 2, 2}, Int3{2, 3, 1}}) {
      for (Int3 p : {Int3{0, 0, 0}, Int3{1, 1, 1}, Int3{0, 2, 1}}) {
        auto y = conv3d(x, k, s, p);
        auto ref = direct_conv3d(x, k, s, p);
        REQUIRE(y.numel() == static_cast<std::int64_t>(ref.size()));
        double worst = 0;
        for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::fabs(y[i] - ref[i]));
        CHECK(worst < 1e-12);
      }
    }
  }
}

TEST_CASE("conv3d output extents follow floor((D + 2p - k)/s) + 1") {
  auto y = conv3d(Tensor::zeros({1, 1, 5, 32, 32}), Tensor::zeros({2, 1, 3, 3, 3}), {1, 2, 2},
                  {1, 1, 1});
  CHECK(y.shape() == Shape{1, 2, 5, 16, 16});
}

TEST_CASE("conv3d rejects mismatched shapes with a dimension error") {
  CHECK_THROWS_AS(conv3d(Tensor::zeros({1, 2, 4, 4, 4}), Tensor::zeros({1, 3, 2, 2, 2})),
                  ShapeError);
  CHECK_THROWS_AS(conv3d(Tensor::zeros({1, 1, 2, 4, 4}), Tensor::zeros({1, 1, 3, 3, 3})),
                  ShapeError);
  CHECK_THROWS_AS(conv3d(Tensor::zeros({1, 4, 4, 4}), Tensor::zeros({1, 1, 2, 2, 2})), ShapeError);
  CHECK_THROWS_AS(conv3d(Tensor::zeros({1, 1, 4, 4, 4}), Tensor::zeros({1, 1, 2, 2, 2}), {0, 1, 1}),
                  ShapeError);
}

TEST_CASE("core op definitions") {
  auto y = random_tensor({2, 3}, 7);
  auto y_hat = random_tensor({2, 3}, 8);
  auto at0 = lerp(y, y_hat, 0.0);
  for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(at0[i] == y[i]);
  auto at1 = lerp(y, y_hat, 1.0);
  for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(at1[i] == doctest::Approx(y_hat[i]));

  CHECK(leaky_relu(Tensor::scalar(-1.0), 0.2).item() == doctest::Approx(-0.2).epsilon(1e-15));
  CHECK(leaky_relu(Tensor::scalar(2.0), 0.2).item() == 2.0);
  CHECK(relu(Tensor::scalar(-3.0)).item() == 0.0);
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(tanh(Tensor::scalar(0.0)).item() == 0.0);
}

TEST_CASE("instance_norm of a constant channel is zero") {
  auto x = Tensor::full({1, 2, 2, 3, 3}, 4.5);
  auto y = instance_norm(x);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("instance_norm standardizes each (sample, channel)") {
  auto x = random_tensor({2, 3, 2, 4, 4}, 9, -3.0, 5.0);
  auto y = instance_norm(x);
  const std::int64_t inner = 32;
  for (std::int64_t nc = 0; nc < 6; ++nc) {
    double m = 0, v = 0;
    for (std::int64_t i = 0; i < inner; ++i) m += y[nc * inner + i];
    m /= inner;
    for (std::int64_t i = 0; i < inner; ++i) v += std::pow(y[nc * inner + i] - m, 2);
    v /= inner;
    CHECK(std::fabs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("adaptive_instance_norm applies per-channel scale and shift") {
  auto x = random_tensor({1, 2, 1, 2, 2}, 10);
  auto scale_nc = Tensor::from_data({1, 2}, {2.0, 0.0});
  auto shift_nc = Tensor::from_data({1, 2}, {1.0, -3.0});
  auto y = adaptive_instance_norm(x, scale_nc, shift_nc);
  auto n = instance_norm(x);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(2.0 * n[i] + 1.0));
  for (std::int64_t i = 4; i < 8; ++i) CHECK(y[i] == -3.0);
  CHECK_THROWS_AS(adaptive_instance_norm(x, Tensor::zeros({1, 3}), shift_nc), ShapeError);
}

TEST_CASE("softmax over channels sums to one") {
  auto logits = random_tensor({2, 3, 1, 2, 2}, 11, -4.0, 4.0);
  auto p = softmax_over_channels(logits);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::int64_t c = 0; c < 3; ++c) s += p[(n * 3 + c) * 4 + i];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("log of a non-positive value is a numeric-domain error") {
  CHECK_THROWS_AS(log(Tensor::from_data({2}, {1.0, 0.0})), NumericError);
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), NumericError);
  CHECK_THROWS_AS(sqrt(Tensor::scalar(-1.0)), NumericError);
}

TEST_CASE("broadcasting, reductions and shape ops") {
  auto a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::from_data({3}, {10, 20, 30});
  auto c = add(a, b);
  CHECK(c.to_vector() == std::vector<double>{11, 22, 33, 14, 25, 36});
  auto col = Tensor::from_data({2, 1}, {1, -1});
  CHECK(mul(a, col).to_vector() == std::vector<double>{1, 2, 3, -4, -5, -6});
  CHECK(sum_to(a, {1, 3}).to_vector() == std::vector<double>{5, 7, 9});
  CHECK(sum_to(a, {2, 1}).to_vector() == std::vector<double>{6, 15});
  CHECK(sum(a).item() == 21.0);
  CHECK(mean(a).item() == 3.5);
  CHECK(broadcast_to(b, {2, 3}).to_vector() == std::vector<double>{10, 20, 30, 10, 20, 30});
  CHECK(transpose(a).to_vector() == std::vector<double>{1, 4, 2, 5, 3, 6});
  auto m = matmul(a, Tensor::from_data({3, 1}, {1, 1, 1}));
  CHECK(m.to_vector() == std::vector<double>{6, 15});
  auto cat = concat({a, reshape(b, {1, 3})}, 0);
  CHECK(cat.shape() == Shape{3, 3});
  CHECK(slice(cat, 0, 2, 1).to_vector() == std::vector<double>{10, 20, 30});
  CHECK(embed(Tensor::from_data({1, 2}, {7, 8}), 1, 1, 4).to_vector() ==
        std::vector<double>{0, 7, 8, 0});
  CHECK_THROWS_AS(add(a, Tensor::zeros({4})), ShapeError);
  CHECK_THROWS_AS(reshape(a, {4}), ShapeError);
}

TEST_CASE("nearest upsampling and block-sum downsampling are adjoint") {
  auto x = random_tensor({1, 2, 2, 3, 2}, 12);
  auto y = random_tensor({1, 2, 2, 6, 4}, 13);
  auto up = upsample3d_nearest(x, {1, 2, 2});
  CHECK(up.shape() == Shape{1, 2, 2, 6, 4});
  CHECK(up[0] == x[0]);
  CHECK(up[1] == x[0]);
  auto down = downsample3d_sum(y, {1, 2, 2});
  double lhs = 0, rhs = 0;
  for (std::int64_t i = 0; i < y.numel(); ++i) lhs += up[i] * y[i];
  for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * down[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
}

TEST_CASE("random_uniform is seeded and in [0,1)") {
  auto a = random_uniform({100}, 42);
  auto b = random_uniform({100}, 42);
  auto c = random_uniform({100}, 43);
  CHECK(a.to_vector() == b.to_vector());
  CHECK(a.to_vector() != c.to_vector());
  for (double v : a.data()) {
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("32-bit tensors round values to float precision") {
  auto a = Tensor::from_data({1}, {0.1}, DType::F32);
  CHECK(a[0] == static_cast<double>(0.1f));
  auto b = add(a, Tensor::from_data({1}, {0.2}));
  CHECK(b.dtype() == DType::F32);
  CHECK(b[0] == static_cast<double>(static_cast<float>(static_cast<double>(0.1f) + 0.2)));
}

TEST_CASE("non-finite results are rejected") {
  CHECK_THROWS_AS(exp(Tensor::scalar(1000.0)), NumericError);
  CHECK_THROWS_AS(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), NumericError);
}

TEST_CASE("tensor snapshots round-trip bit-exactly") {
  for (auto dtype : {DType::F64, DType::F32}) {
    auto t = random_tensor({2, 1, 3, 4}, 14).to(dtype);
    ByteWriter w;
    write_tensor(w, t);
    auto bytes = w.release();
    CHECK(std::string(bytes.begin(), bytes.begin() + 5) == "WDGT1");
    CHECK(bytes[5] == static_cast<std::uint8_t>(dtype));
    CHECK(bytes[6] == 4);
    ByteReader r(bytes);
    auto back = read_tensor(r);
    CHECK(back.shape() == t.shape());
    CHECK(back.dtype() == dtype);
    CHECK(back.to_vector() == t.to_vector());
  }
}

TEST_CASE("tensor snapshot parse errors name the offset") {
  ByteWriter w;
  write_tensor(w, Tensor::from_data({3}, {1, 2, 3}));
  auto bytes = w.release();
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  ByteReader r(truncated);
  CHECK_THROWS_AS(read_tensor(r), ParseError);

  auto bad = bytes;
  bad[0] = 'X';
  ByteReader r2(bad);
  try {
    read_tensor(r2);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 0);
  }
}

TEST_CASE("named tensor container round-trips") {
  NamedTensors in{{"a/w", random_tensor({2, 2}, 15)}, {"b", Tensor::scalar(3.0)}};
  auto out = decode_named_tensors(encode_named_tensors(in));
  REQUIRE(out.size() == 2);
  CHECK(out.at("a/w").to_vector() == in.at("a/w").to_vector());
  CHECK(out.at("b").shape().empty());
  CHECK(out.at("b").item() == 3.0);
}
