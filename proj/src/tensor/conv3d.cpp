#include <algorithm>

#include "wdgda/tensor.hpp"

namespace wdgda {

namespace {

struct ConvGeometry {
  std::int64_t n, c, d, h, w;       // input
  std::int64_t f, kd, kh, kw;       // kernel
  std::int64_t od, oh, ow;          // output
  Int3 stride, pad;
};

std::int64_t out_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
  return (in + 2 * p - k) / s + 1;
}

ConvGeometry geometry(const Shape& input, const Shape& kernel, Int3 stride, Int3 pad) {
  if (input.size() != 5) {
    throw ShapeError("conv3d expects input [N,C,D,H,W], got " + to_string(input));
  }
  if (kernel.size() != 5) {
    throw ShapeError("conv3d expects kernel [F,C,kd,kh,kw], got " + to_string(kernel));
  }
  if (input[1] != kernel[1]) {
    throw ShapeError("conv3d channel mismatch: input " + to_string(input) + " has " +
                     std::to_string(input[1]) + " channels, kernel " + to_string(kernel) +
                     " expects " + std::to_string(kernel[1]));
  }
  for (int a = 0; a < 3; ++a) {
    if (stride[a] < 1) throw ShapeError("conv3d stride must be >= 1");
    if (pad[a] < 0) throw ShapeError("conv3d padding must be >= 0");
    if (input[2 + a] + 2 * pad[a] < kernel[2 + a]) {
      throw ShapeError("conv3d kernel " + to_string(kernel) + " does not fit input " +
                       to_string(input) + " on spatial axis " + std::to_string(a));
    }
  }
  ConvGeometry g{};
  g.n = input[0];
  g.c = input[1];
  g.d = input[2];
  g.h = input[3];
  g.w = input[4];
  g.f = kernel[0];
  g.kd = kernel[2];
  g.kh = kernel[3];
  g.kw = kernel[4];
  g.od = out_extent(g.d, g.kd, stride[0], pad[0]);
  g.oh = out_extent(g.h, g.kh, stride[1], pad[1]);
  g.ow = out_extent(g.w, g.kw, stride[2], pad[2]);
  g.stride = stride;
  g.pad = pad;
  return g;
}

// Range of output positions o with 0 <= o*s + k - p < in.
inline void valid_range(std::int64_t k, std::int64_t s, std::int64_t p, std::int64_t in,
                        std::int64_t out, std::int64_t& lo, std::int64_t& hi) {
  // o*s >= p - k
  lo = p - k > 0 ? (p - k + s - 1) / s : 0;
  // o*s <= in - 1 + p - k
  const auto top = in - 1 + p - k;
  hi = top < 0 ? 0 : std::min(out, top / s + 1);
  if (lo > hi) lo = hi;
}

// Visits every (output, input, kernel) triple of the cross-correlation with
// innermost contiguous runs along the output width axis. `body` receives
// (input row pointer offset, output row offset, kernel offset, run start,
// run end, stride).
template <class Body>
void for_each_tap(const ConvGeometry& g, std::int64_t batch, std::int64_t filt, std::int64_t chan,
                  Body&& body) {
  const auto [sd, sh, sw] = g.stride;
  const auto [pd, ph, pw] = g.pad;
  for (std::int64_t a = 0; a < g.kd; ++a) {
    std::int64_t od_lo, od_hi;
    valid_range(a, sd, pd, g.d, g.od, od_lo, od_hi);
    for (std::int64_t b = 0; b < g.kh; ++b) {
      std::int64_t oh_lo, oh_hi;
      valid_range(b, sh, ph, g.h, g.oh, oh_lo, oh_hi);
      for (std::int64_t e = 0; e < g.kw; ++e) {
        std::int64_t ow_lo, ow_hi;
        valid_range(e, sw, pw, g.w, g.ow, ow_lo, ow_hi);
        if (ow_lo >= ow_hi) continue;
        const auto k_off = (((filt * g.c + chan) * g.kd + a) * g.kh + b) * g.kw + e;
        for (std::int64_t z = od_lo; z < od_hi; ++z) {
          const auto iz = z * sd + a - pd;
          for (std::int64_t y = oh_lo; y < oh_hi; ++y) {
            const auto iy = y * sh + b - ph;
            const auto in_row = (((batch * g.c + chan) * g.d + iz) * g.h + iy) * g.w;
            const auto out_row = (((batch * g.f + filt) * g.od + z) * g.oh + y) * g.ow;
            body(in_row + e - pw, out_row, k_off, ow_lo, ow_hi, sw);
          }
        }
      }
    }
  }
}

std::vector<double> conv_forward(const ConvGeometry& g, std::span<const double> x,
                                 std::span<const double> k) {
  std::vector<double> out(static_cast<std::size_t>(g.n * g.f * g.od * g.oh * g.ow), 0.0);
  double* o = out.data();
  const double* xi = x.data();
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t f = 0; f < g.f; ++f)
      for (std::int64_t c = 0; c < g.c; ++c)
        for_each_tap(g, n, f, c,
                     [&](std::int64_t in_base, std::int64_t out_row, std::int64_t k_off,
                         std::int64_t lo, std::int64_t hi, std::int64_t s) {
                       const double kv = k[static_cast<std::size_t>(k_off)];
                       if (kv == 0.0) return;
                       double* orow = o + out_row;
                       const double* irow = xi + in_base;
                       if (s == 1) {
                         for (std::int64_t q = lo; q < hi; ++q) orow[q] += kv * irow[q];
                       } else {
                         for (std::int64_t q = lo; q < hi; ++q) orow[q] += kv * irow[q * s];
                       }
                     });
  return out;
}

std::vector<double> conv_input_grad(const ConvGeometry& g, std::span<const double> grad_out,
                                    std::span<const double> k) {
  std::vector<double> dx(static_cast<std::size_t>(g.n * g.c * g.d * g.h * g.w), 0.0);
  double* dxi = dx.data();
  const double* go = grad_out.data();
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t c = 0; c < g.c; ++c)
      for (std::int64_t f = 0; f < g.f; ++f)
        for_each_tap(g, n, f, c,
                     [&](std::int64_t in_base, std::int64_t out_row, std::int64_t k_off,
                         std::int64_t lo, std::int64_t hi, std::int64_t s) {
                       const double kv = k[static_cast<std::size_t>(k_off)];
                       if (kv == 0.0) return;
                       const double* grow = go + out_row;
                       double* irow = dxi + in_base;
                       if (s == 1) {
                         for (std::int64_t q = lo; q < hi; ++q) irow[q] += kv * grow[q];
                       } else {
                         for (std::int64_t q = lo; q < hi; ++q) irow[q * s] += kv * grow[q];
                       }
                     });
  return dx;
}

std::vector<double> conv_kernel_grad(const ConvGeometry& g, std::span<const double> x,
                                     std::span<const double> grad_out) {
  std::vector<double> dk(static_cast<std::size_t>(g.f * g.c * g.kd * g.kh * g.kw), 0.0);
  const double* xi = x.data();
  const double* go = grad_out.data();
  for (std::int64_t f = 0; f < g.f; ++f)
    for (std::int64_t c = 0; c < g.c; ++c)
      for (std::int64_t n = 0; n < g.n; ++n)
        for_each_tap(g, n, f, c,
                     [&](std::int64_t in_base, std::int64_t out_row, std::int64_t k_off,
                         std::int64_t lo, std::int64_t hi, std::int64_t s) {
                       const double* grow = go + out_row;
                       const double* irow = xi + in_base;
                       double acc = 0.0;
                       if (s == 1) {
                         for (std::int64_t q = lo; q < hi; ++q) acc += grow[q] * irow[q];
                       } else {
                         for (std::int64_t q = lo; q < hi; ++q) acc += grow[q] * irow[q * s];
                       }
                       dk[static_cast<std::size_t>(k_off)] += acc;
                     });
  return dk;
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& kernel, Int3 stride, Int3 padding) {
  const auto g = geometry(input.shape(), kernel.shape(), stride, padding);
  auto values = conv_forward(g, input.data(), kernel.data());
  return make_result(
      "conv3d", {g.n, g.f, g.od, g.oh, g.ow}, std::move(values), {input, kernel},
      [input, kernel, stride, padding](const Tensor& grad, const Tensor&) {
        Tensor gi, gk;
        if (input.requires_grad()) {
          gi = conv3d_input_grad(grad, kernel, input.shape(), stride, padding);
        }
        if (kernel.requires_grad()) {
          gk = conv3d_kernel_grad(input, grad, kernel.shape(), stride, padding);
        }
        return std::vector<Tensor>{gi, gk};
      });
}

Tensor conv3d_input_grad(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                         Int3 stride, Int3 padding) {
  const auto g = geometry(input_shape, kernel.shape(), stride, padding);
  const Shape expected{g.n, g.f, g.od, g.oh, g.ow};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv3d_input_grad: gradient " + to_string(grad_out.shape()) +
                     " does not match output " + to_string(expected));
  }
  auto values = conv_input_grad(g, grad_out.data(), kernel.data());
  // Bilinear in (grad_out, kernel).
  return make_result("conv3d_input_grad", input_shape, std::move(values), {grad_out, kernel},
                     [grad_out, kernel, stride, padding](const Tensor& gdx, const Tensor&) {
                       Tensor gg, gk;
                       if (grad_out.requires_grad()) gg = conv3d(gdx, kernel, stride, padding);
                       if (kernel.requires_grad()) {
                         gk = conv3d_kernel_grad(gdx, grad_out, kernel.shape(), stride, padding);
                       }
                       return std::vector<Tensor>{gg, gk};
                     });
}

Tensor conv3d_kernel_grad(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape,
                          Int3 stride, Int3 padding) {
  const auto g = geometry(input.shape(), kernel_shape, stride, padding);
  const Shape expected{g.n, g.f, g.od, g.oh, g.ow};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv3d_kernel_grad: gradient " + to_string(grad_out.shape()) +
                     " does not match output " + to_string(expected));
  }
  auto values = conv_kernel_grad(g, input.data(), grad_out.data());
  // Bilinear in (input, grad_out).
  return make_result("conv3d_kernel_grad", kernel_shape, std::move(values), {input, grad_out},
                     [input, grad_out, stride, padding](const Tensor& gdk, const Tensor&) {
                       Tensor gi, gg;
                       if (input.requires_grad()) {
                         gi = conv3d_input_grad(grad_out, gdk, input.shape(), stride, padding);
                       }
                       if (grad_out.requires_grad()) gg = conv3d(input, gdk, stride, padding);
                       return std::vector<Tensor>{gi, gg};
                     });
}

Tensor upsample3d_nearest(const Tensor& a, Int3 factor) {
  if (a.rank() != 5) throw ShapeError("upsample3d_nearest expects [N,C,D,H,W]");
  const auto n = a.dim(0), c = a.dim(1), d = a.dim(2), h = a.dim(3), w = a.dim(4);
  const auto [fd, fh, fw] = factor;
  if (fd < 1 || fh < 1 || fw < 1) throw ShapeError("upsample factor must be >= 1");
  const auto D = d * fd, H = h * fh, W = w * fw;
  std::vector<double> out(static_cast<std::size_t>(n * c * D * H * W));
  const auto src = a.data();
  std::size_t o = 0;
  for (std::int64_t nc = 0; nc < n * c; ++nc)
    for (std::int64_t z = 0; z < D; ++z)
      for (std::int64_t y = 0; y < H; ++y) {
        const auto row = ((nc * d + z / fd) * h + y / fh) * w;
        for (std::int64_t x = 0; x < W; ++x) out[o++] = src[static_cast<std::size_t>(row + x / fw)];
      }
  return make_result("upsample3d_nearest", {n, c, D, H, W}, std::move(out), {a},
                     [factor](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{downsample3d_sum(g, factor)};
                     });
}

Tensor downsample3d_sum(const Tensor& a, Int3 factor) {
  if (a.rank() != 5) throw ShapeError("downsample3d_sum expects [N,C,D,H,W]");
  const auto [fd, fh, fw] = factor;
  const auto n = a.dim(0), c = a.dim(1), D = a.dim(2), H = a.dim(3), W = a.dim(4);
  if (D % fd || H % fh || W % fw) {
    throw ShapeError("downsample3d_sum: " + to_string(a.shape()) + " not divisible by factor");
  }
  const auto d = D / fd, h = H / fh, w = W / fw;
  std::vector<double> out(static_cast<std::size_t>(n * c * d * h * w), 0.0);
  const auto src = a.data();
  std::size_t i = 0;
  for (std::int64_t nc = 0; nc < n * c; ++nc)
    for (std::int64_t z = 0; z < D; ++z)
      for (std::int64_t y = 0; y < H; ++y) {
        const auto row = ((nc * d + z / fd) * h + y / fh) * w;
        for (std::int64_t x = 0; x < W; ++x) out[static_cast<std::size_t>(row + x / fw)] += src[i++];
      }
  return make_result("downsample3d_sum", {n, c, d, h, w}, std::move(out), {a},
                     [factor](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{upsample3d_nearest(g, factor)};
                     });
}

}  // namespace wdgda
