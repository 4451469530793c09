#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "wdgda/tensor.hpp"

namespace wdgda::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0, bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data(shape, std::move(v), DType::F64, requires_grad);
}

// Reference cross-correlation written as seven nested loops (plus padding and
// stride), independent of the library kernels.
inline std::vector<double> direct_conv3d(const Tensor& x, const Tensor& k, Int3 s, Int3 p) {
  const auto N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const auto F = k.dim(0), KD = k.dim(2), KH = k.dim(3), KW = k.dim(4);
  const auto OD = (D + 2 * p[0] - KD) / s[0] + 1;
  const auto OH = (H + 2 * p[1] - KH) / s[1] + 1;
  const auto OW = (W + 2 * p[2] - KW) / s[2] + 1;
  std::vector<double> out(static_cast<std::size_t>(N * F * OD * OH * OW), 0.0);
  auto X = [&](std::int64_t n, std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t w) {
    if (z < 0 || z >= D || y < 0 || y >= H || w < 0 || w >= W) return 0.0;
    return x[(((n * C + c) * D + z) * H + y) * W + w];
  };
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t f = 0; f < F; ++f)
      for (std::int64_t oz = 0; oz < OD; ++oz)
        for (std::int64_t oy = 0; oy < OH; ++oy)
          for (std::int64_t ox = 0; ox < OW; ++ox) {
            double acc = 0.0;
            for (std::int64_t c = 0; c < C; ++c)
              for (std::int64_t a = 0; a < KD; ++a)
                for (std::int64_t b = 0; b < KH; ++b)
                  for (std::int64_t e = 0; e < KW; ++e)
                    acc += k[(((f * C + c) * KD + a) * KH + b) * KW + e] *
                           X(n, c, oz * s[0] + a - p[0], oy * s[1] + b - p[1],
                             ox * s[2] + e - p[2]);
            out[static_cast<std::size_t>((((n * F + f) * OD + oz) * OH + oy) * OW + ox)] = acc;
          }
  return out;
}

}  // namespace wdgda::testing
