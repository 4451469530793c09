#include "wdgda/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <random>
#include <cmath>
#include <numeric>
#include <sstream>

namespace wdgda {

namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local bool grad_mode_enabled = true;

double round_to(DType dtype, double v) {
  return dtype == DType::F32 ? static_cast<double>(static_cast<float>(v)) : v;
}

}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

bool grad_enabled() { return grad_mode_enabled; }

GradMode::GradMode(bool enabled) : previous_(grad_mode_enabled) { grad_mode_enabled = enabled; }
GradMode::~GradMode() { grad_mode_enabled = previous_; }

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from_data(Shape shape, std::vector<double> values, DType dtype,
                         bool requires_grad) {
  for (auto e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (wdgda::numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("shape " + to_string(shape) + " holds " + std::to_string(wdgda::numel(shape)) +
                     " values but " + std::to_string(values.size()) + " were given");
  }
  auto node = std::make_shared<Node>();
  node->id = next_node_id++;
  node->shape = std::move(shape);
  node->dtype = dtype;
  if (dtype == DType::F32) {
    for (auto& v : values) v = round_to(dtype, v);
  }
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, DType dtype, bool requires_grad) {
  auto n = static_cast<std::size_t>(wdgda::numel(shape));
  return from_data(std::move(shape), std::vector<double>(n, 0.0), dtype, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, DType dtype, bool requires_grad) {
  auto n = static_cast<std::size_t>(wdgda::numel(shape));
  return from_data(std::move(shape), std::vector<double>(n, value), dtype, requires_grad);
}

Tensor Tensor::scalar(double value, DType dtype) { return from_data({}, {value}, dtype); }

std::int64_t Tensor::dim(std::int64_t axis) const {
  auto r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(shape()));
  return node_->data[0];
}

Tensor Tensor::grad() const {
  if (!node_->grad) return {};
  return from_data(shape(), *node_->grad, dtype());
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->id = next_node_id++;
  node->shape = node_->shape;
  node->dtype = node_->dtype;
  node->data = node_->data;
  return Tensor(std::move(node));
}

Tensor Tensor::clone_leaf(bool requires_grad) const {
  return from_data(shape(), node_->data, dtype(), requires_grad);
}

Tensor Tensor::to(DType target) const { return from_data(shape(), node_->data, target); }

// ---------------------------------------------------------------------------
// Graph recording

Tensor make_result(std::string op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs, BackwardFn backward, bool second_order) {
  DType dtype = DType::F64;
  bool needs_grad = false;
  for (const auto& in : inputs) {
    if (!in.defined()) continue;
    if (in.dtype() == DType::F32) dtype = DType::F32;
    needs_grad = needs_grad || in.requires_grad();
  }
  for (auto& v : values) {
    v = round_to(dtype, v);
    if (!std::isfinite(v)) {
      throw NumericError("op '" + op + "' produced a non-finite value");
    }
  }
  auto node = std::make_shared<Node>();
  node->id = next_node_id++;
  node->shape = std::move(shape);
  node->dtype = dtype;
  node->data = std::move(values);
  node->op = std::move(op);
  node->second_order = second_order;
  if (needs_grad && grad_enabled() && backward) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const auto rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const auto da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const auto db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// Element strides of `shape` viewed inside `target` (left-padded), zero where
// the dimension broadcasts.
std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& target) {
  const auto rank = target.size();
  std::vector<std::int64_t> strides(rank, 0);
  std::int64_t step = 1;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    const auto src = shape.size() - 1 - k;
    const auto dst = rank - 1 - k;
    strides[dst] = shape[src] == 1 && target[dst] != 1 ? 0 : step;
    step *= shape[src];
  }
  return strides;
}

// Walks every index of `shape`, tracking linear offsets into two strided
// operands.
template <class F>
void for_each_index(const Shape& shape, const std::vector<std::int64_t>& sa,
                    const std::vector<std::int64_t>& sb, F&& f) {
  const auto rank = shape.size();
  const auto total = numel(shape);
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t i = 0; i < total; ++i) {
    f(i, oa, ob);
    for (auto ax = static_cast<std::ptrdiff_t>(rank) - 1; ax >= 0; --ax) {
      const auto a = static_cast<std::size_t>(ax);
      ++idx[a];
      oa += sa[a];
      ob += sb[a];
      if (idx[a] < shape[a]) break;
      oa -= sa[a] * shape[a];
      ob -= sb[a] * shape[a];
      idx[a] = 0;
    }
  }
}

template <class F>
std::pair<Shape, std::vector<double>> binary_values(const Tensor& a, const Tensor& b, F&& f) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    const auto da = a.data();
    const auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], db[i]);
    return {a.shape(), std::move(out)};
  }
  Shape shape = broadcast_shapes(a.shape(), b.shape());
  std::vector<double> out(static_cast<std::size_t>(numel(shape)));
  const auto da = a.data();
  const auto db = b.data();
  if (b.numel() == 1 && a.numel() == static_cast<std::int64_t>(out.size())) {
    const double bv = db[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], bv);
    return {std::move(shape), std::move(out)};
  }
  if (a.numel() == 1 && b.numel() == static_cast<std::int64_t>(out.size())) {
    const double av = da[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av, db[i]);
    return {std::move(shape), std::move(out)};
  }
  for_each_index(shape, broadcast_strides(a.shape(), shape), broadcast_strides(b.shape(), shape),
                 [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
                   out[static_cast<std::size_t>(i)] = f(da[static_cast<std::size_t>(oa)],
                                                        db[static_cast<std::size_t>(ob)]);
                 });
  return {std::move(shape), std::move(out)};
}

template <class F>
std::vector<double> unary_values(const Tensor& a, F&& f) {
  std::vector<double> out(static_cast<std::size_t>(a.numel()));
  const auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i]);
  return out;
}

// Constant (graph-free) tensor derived elementwise from `a`.
template <class F>
Tensor constant_like(const Tensor& a, F&& f) {
  return Tensor::from_data(a.shape(), unary_values(a, f), a.dtype());
}

Tensor reduce_grad(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  return sum_to(g, shape);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  auto [shape, values] = binary_values(a, b, [](double x, double y) { return x + y; });
  return make_result("add", std::move(shape), std::move(values), {a, b},
                     [sa = a.shape(), sb = b.shape()](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{reduce_grad(g, sa), reduce_grad(g, sb)};
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto [shape, values] = binary_values(a, b, [](double x, double y) { return x - y; });
  return make_result("sub", std::move(shape), std::move(values), {a, b},
                     [sa = a.shape(), sb = b.shape()](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{reduce_grad(g, sa), reduce_grad(neg(g), sb)};
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto [shape, values] = binary_values(a, b, [](double x, double y) { return x * y; });
  return make_result("mul", std::move(shape), std::move(values), {a, b},
                     [a, b](const Tensor& g, const Tensor&) {
                       Tensor ga, gb;
                       if (a.requires_grad()) ga = reduce_grad(mul(g, b), a.shape());
                       if (b.requires_grad()) gb = reduce_grad(mul(g, a), b.shape());
                       return std::vector<Tensor>{ga, gb};
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw NumericError("division by zero in 'div'");
  }
  auto [shape, values] = binary_values(a, b, [](double x, double y) { return x / y; });
  return make_result("div", std::move(shape), std::move(values), {a, b},
                     [a, b](const Tensor& g, const Tensor&) {
                       Tensor ga, gb;
                       if (a.requires_grad()) ga = reduce_grad(div(g, b), a.shape());
                       if (b.requires_grad()) {
                         gb = reduce_grad(neg(div(mul(g, a), square(b))), b.shape());
                       }
                       return std::vector<Tensor>{ga, gb};
                     });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
  return make_result("scale", a.shape(), unary_values(a, [factor](double x) { return x * factor; }),
                     {a}, [factor](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{scale(g, factor)};
                     });
}

Tensor add_scalar(const Tensor& a, double value) {
  return make_result("add_scalar", a.shape(),
                     unary_values(a, [value](double x) { return x + value; }), {a},
                     [](const Tensor& g, const Tensor&) { return std::vector<Tensor>{g}; });
}

Tensor square(const Tensor& a) {
  return make_result("square", a.shape(), unary_values(a, [](double x) { return x * x; }), {a},
                     [a](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{mul(g, scale(a, 2.0))};
                     });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v < 0.0) throw NumericError("sqrt of a negative value");
  }
  return make_result("sqrt", a.shape(), unary_values(a, [](double x) { return std::sqrt(x); }),
                     {a}, [a](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{div(scale(g, 0.5), sqrt(a))};
                     });
}

Tensor rsqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v <= 0.0) throw NumericError("rsqrt of a non-positive value");
  }
  return make_result("rsqrt", a.shape(),
                     unary_values(a, [](double x) { return 1.0 / std::sqrt(x); }), {a},
                     [a](const Tensor& g, const Tensor&) {
                       // d/da a^{-1/2} = -1/2 a^{-3/2}; rebuilt from `a` so the
                       // result stays differentiable.
                       auto r = rsqrt(a);
                       return std::vector<Tensor>{mul(g, scale(mul(r, square(r)), -0.5))};
                     });
}

Tensor exp(const Tensor& a) {
  return make_result(
      "exp", a.shape(), unary_values(a, [](double x) { return std::exp(x); }), {a},
      [](const Tensor& g, const Tensor& out) { return std::vector<Tensor>{mul(g, out.detach())}; },
      false);
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw NumericError("log of a non-positive value");
  }
  return make_result(
      "log", a.shape(), unary_values(a, [](double x) { return std::log(x); }), {a},
      [a](const Tensor& g, const Tensor&) { return std::vector<Tensor>{div(g, a)}; }, false);
}

Tensor abs(const Tensor& a) {
  return make_result(
      "abs", a.shape(), unary_values(a, [](double x) { return std::fabs(x); }), {a},
      [a](const Tensor& g, const Tensor&) {
        auto sign = constant_like(a, [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
        return std::vector<Tensor>{mul(g, sign)};
      },
      false);
}

Tensor tanh(const Tensor& a) {
  return make_result(
      "tanh", a.shape(), unary_values(a, [](double x) { return std::tanh(x); }), {a},
      [](const Tensor& g, const Tensor& out) {
        auto d = constant_like(out, [](double y) { return 1.0 - y * y; });
        return std::vector<Tensor>{mul(g, d)};
      },
      false);
}

Tensor sigmoid(const Tensor& a) {
  return make_result(
      "sigmoid", a.shape(),
      unary_values(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }), {a},
      [](const Tensor& g, const Tensor& out) {
        auto d = constant_like(out, [](double y) { return y * (1.0 - y); });
        return std::vector<Tensor>{mul(g, d)};
      },
      false);
}

Tensor relu(const Tensor& a) {
  return make_result("relu", a.shape(), unary_values(a, [](double x) { return x > 0 ? x : 0.0; }),
                     {a}, [a](const Tensor& g, const Tensor&) {
                       auto mask = constant_like(a, [](double x) { return x > 0 ? 1.0 : 0.0; });
                       return std::vector<Tensor>{mul(g, mask)};
                     });
}

// The derivative is piecewise constant, so its own derivative is zero away
// from the kink and the backward is linear in the incoming gradient.
Tensor leaky_relu(const Tensor& a, double slope) {
  return make_result("leaky_relu", a.shape(),
                     unary_values(a, [slope](double x) { return x > 0 ? x : slope * x; }), {a},
                     [a, slope](const Tensor& g, const Tensor&) {
                       auto mask =
                           constant_like(a, [slope](double x) { return x > 0 ? 1.0 : slope; });
                       return std::vector<Tensor>{mul(g, mask)};
                     });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return make_result(
      "clamp", a.shape(),
      unary_values(a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); }), {a},
      [a, lo, hi](const Tensor& g, const Tensor&) {
        auto mask = constant_like(a, [lo, hi](double x) { return x >= lo && x <= hi ? 1.0 : 0.0; });
        return std::vector<Tensor>{mul(g, mask)};
      },
      false);
}

Tensor lerp(const Tensor& a, const Tensor& b, const Tensor& t) { return add(a, mul(t, sub(b, a))); }

Tensor lerp(const Tensor& a, const Tensor& b, double t) {
  return lerp(a, b, Tensor::scalar(t, a.dtype()));
}

// ---------------------------------------------------------------------------
// Reductions and shape

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("sum", {}, {total}, {a}, [s = a.shape()](const Tensor& g, const Tensor&) {
    return std::vector<Tensor>{broadcast_to(g, s)};
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_to(const Tensor& a, const Shape& target) {
  if (a.shape() == target) return a;
  if (target.size() > a.shape().size()) {
    throw ShapeError("sum_to cannot raise rank from " + to_string(a.shape()) + " to " +
                     to_string(target));
  }
  const auto& src = a.shape();
  const auto pad = src.size() - target.size();
  Shape padded(src.size(), 1);
  for (std::size_t i = 0; i < target.size(); ++i) padded[pad + i] = target[i];
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (padded[i] != 1 && padded[i] != src[i]) {
      throw ShapeError("sum_to: " + to_string(src) + " does not reduce to " + to_string(target));
    }
  }
  std::vector<double> out(static_cast<std::size_t>(numel(target)), 0.0);
  const auto strides = broadcast_strides(padded, src);
  const std::vector<std::int64_t> unit(src.size(), 0);
  const auto da = a.data();
  for_each_index(src, strides, unit, [&](std::int64_t i, std::int64_t o, std::int64_t) {
    out[static_cast<std::size_t>(o)] += da[static_cast<std::size_t>(i)];
  });
  return make_result("sum_to", target, std::move(out), {a},
                     [s = src](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{broadcast_to(g, s)};
                     });
}

Tensor broadcast_to(const Tensor& a, const Shape& target) {
  if (a.shape() == target) return a;
  if (broadcast_shapes(a.shape(), target) != target) {
    throw ShapeError("cannot broadcast " + to_string(a.shape()) + " to " + to_string(target));
  }
  std::vector<double> out(static_cast<std::size_t>(numel(target)));
  const auto da = a.data();
  if (a.numel() == 1) {
    std::fill(out.begin(), out.end(), da[0]);
  } else {
    const auto strides = broadcast_strides(a.shape(), target);
    const std::vector<std::int64_t> unit(target.size(), 0);
    for_each_index(target, strides, unit, [&](std::int64_t i, std::int64_t o, std::int64_t) {
      out[static_cast<std::size_t>(i)] = da[static_cast<std::size_t>(o)];
    });
  }
  return make_result("broadcast_to", target, std::move(out), {a},
                     [s = a.shape()](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{sum_to(g, s)};
                     });
}

Tensor sum_over(const Tensor& a, const std::vector<std::int64_t>& axes) {
  Shape target = a.shape();
  for (auto ax : axes) {
    if (ax < 0) ax += a.rank();
    if (ax < 0 || ax >= a.rank()) throw ShapeError("sum_over: axis out of range");
    target[static_cast<std::size_t>(ax)] = 1;
  }
  return sum_to(a, target);
}

Tensor mean_over(const Tensor& a, const std::vector<std::int64_t>& axes) {
  auto s = sum_over(a, axes);
  return scale(s, static_cast<double>(s.numel()) / static_cast<double>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape " + to_string(a.shape()) + " -> " + to_string(shape) +
                     " changes element count");
  }
  if (shape == a.shape()) return a;
  return make_result("reshape", std::move(shape), a.to_vector(), {a},
                     [s = a.shape()](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{reshape(g, s)};
                     });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + to_string(a.shape()));
  const auto rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(a.numel()));
  const auto da = a.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c)
      out[static_cast<std::size_t>(c * rows + r)] = da[static_cast<std::size_t>(r * cols + c)];
  return make_result("transpose", {cols, rows}, std::move(out), {a},
                     [](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{transpose(g)};
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  const auto da = a.data();
  const auto db = b.data();
  for (std::int64_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = da[static_cast<std::size_t>(i * k + p)];
      const double* brow = db.data() + p * n;
      for (std::int64_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_result("matmul", {m, n}, std::move(out), {a, b},
                     [a, b](const Tensor& g, const Tensor&) {
                       Tensor ga, gb;
                       if (a.requires_grad()) ga = matmul(g, transpose(b));
                       if (b.requires_grad()) gb = matmul(transpose(a), g);
                       return std::vector<Tensor>{ga, gb};
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight.shape()));
  }
  auto y = matmul(x, transpose(weight));
  if (!bias.defined()) return y;
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match weight rows");
  }
  return add(y, bias);
}

Tensor slice(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t length) {
  if (axis < 0) axis += a.rank();
  if (axis < 0 || axis >= a.rank() || start < 0 || length <= 0 || start + length > a.dim(axis)) {
    throw ShapeError("slice out of range on " + to_string(a.shape()));
  }
  const auto& s = a.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::int64_t i = axis + 1; i < a.rank(); ++i) inner *= s[static_cast<std::size_t>(i)];
  const auto full = s[static_cast<std::size_t>(axis)];
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = length;
  std::vector<double> out(static_cast<std::size_t>(outer * length * inner));
  const auto da = a.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(da.begin() + (o * full + start) * inner, length * inner,
                out.begin() + o * length * inner);
  }
  return make_result("slice", std::move(out_shape), std::move(out), {a},
                     [axis, start, full](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{embed(g, axis, start, full)};
                     });
}

Tensor embed(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t full) {
  if (axis < 0) axis += a.rank();
  const auto length = a.dim(axis);
  if (start < 0 || start + length > full) throw ShapeError("embed out of range");
  const auto& s = a.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::int64_t i = axis + 1; i < a.rank(); ++i) inner *= s[static_cast<std::size_t>(i)];
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = full;
  std::vector<double> out(static_cast<std::size_t>(outer * full * inner), 0.0);
  const auto da = a.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(da.begin() + o * length * inner, length * inner,
                out.begin() + (o * full + start) * inner);
  }
  return make_result("embed", std::move(out_shape), std::move(out), {a},
                     [axis, start, length](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{slice(g, axis, start, length)};
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  if (parts.size() == 1) return parts.front();
  const auto rank = parts.front().rank();
  if (axis < 0) axis += rank;
  Shape out_shape = parts.front().shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat rank mismatch");
    for (std::int64_t i = 0; i < rank; ++i) {
      if (i != axis && p.dim(i) != out_shape[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat extent mismatch: " + to_string(p.shape()) + " vs " +
                         to_string(parts.front().shape()));
      }
    }
    total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (std::int64_t i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<std::size_t>(i)];
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const auto len = p.dim(axis);
    const auto dp = p.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(dp.begin() + o * len * inner, len * inner,
                  out.begin() + (o * total + offset) * inner);
    }
    offsets.push_back(offset);
    offset += len;
  }
  std::vector<std::int64_t> lengths;
  for (const auto& p : parts) lengths.push_back(p.dim(axis));
  return make_result("concat", std::move(out_shape), std::move(out), parts,
                     [axis, offsets, lengths](const Tensor& g, const Tensor&) {
                       std::vector<Tensor> grads;
                       for (std::size_t i = 0; i < offsets.size(); ++i) {
                         grads.push_back(slice(g, axis, offsets[i], lengths[i]));
                       }
                       return grads;
                     });
}

// ---------------------------------------------------------------------------
// Composites

Tensor instance_norm(const Tensor& x, double eps) {
  if (x.rank() < 3) throw ShapeError("instance_norm expects [N,C,...], got " + to_string(x.shape()));
  std::vector<std::int64_t> spatial;
  for (std::int64_t ax = 2; ax < x.rank(); ++ax) spatial.push_back(ax);
  auto centered = sub(x, mean_over(x, spatial));
  auto var = mean_over(square(centered), spatial);
  return mul(centered, rsqrt(add_scalar(var, eps)));
}

Tensor adaptive_instance_norm(const Tensor& x, const Tensor& scale_nc, const Tensor& shift_nc,
                              double eps) {
  if (x.rank() != 5) throw ShapeError("adaptive_instance_norm expects [N,C,D,H,W]");
  const Shape param_shape{x.dim(0), x.dim(1)};
  if (scale_nc.shape() != param_shape || shift_nc.shape() != param_shape) {
    throw ShapeError("adaptive_instance_norm: scale/shift must be " + to_string(param_shape) +
                     ", got " + to_string(scale_nc.shape()) + " and " +
                     to_string(shift_nc.shape()));
  }
  const Shape bshape{x.dim(0), x.dim(1), 1, 1, 1};
  return add(mul(instance_norm(x, eps), reshape(scale_nc, bshape)), reshape(shift_nc, bshape));
}

Tensor log_softmax_over_channels(const Tensor& logits) {
  if (logits.rank() < 2) throw ShapeError("softmax_over_channels expects [N,C,...]");
  // Per-position max over channels, held constant for stability.
  Shape reduced = logits.shape();
  reduced[1] = 1;
  std::vector<double> peak(static_cast<std::size_t>(numel(reduced)),
                           -std::numeric_limits<double>::infinity());
  const auto n = logits.dim(0), c = logits.dim(1);
  const auto inner = logits.numel() / (n * c);
  const auto d = logits.data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < inner; ++i) {
        auto& p = peak[static_cast<std::size_t>(b * inner + i)];
        p = std::max(p, d[static_cast<std::size_t>((b * c + ch) * inner + i)]);
      }
  auto shifted = sub(logits, Tensor::from_data(reduced, std::move(peak), logits.dtype()));
  auto lse = log(sum_over(exp(shifted), {1}));
  return sub(shifted, lse);
}

Tensor softmax_over_channels(const Tensor& logits) { return exp(log_softmax_over_channels(logits)); }

Tensor l1_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("l1_distance shape mismatch: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  return mean(abs(sub(a, b)));
}

Tensor random_uniform(const Shape& shape, std::uint64_t seed, DType dtype) {
  std::mt19937_64 rng(seed);
  std::vector<double> values(static_cast<std::size_t>(numel(shape)));
  // 53 random mantissa bits; independent of the standard library's
  // distribution implementation.
  for (auto& v : values) v = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return Tensor::from_data(shape, std::move(values), dtype);
}

}  // namespace wdgda
