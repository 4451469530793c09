#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wdgda/errors.hpp"

namespace wdgda {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Codes match the on-disk snapshot format.
enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

class Tensor;
struct Node;

// Receives the upstream gradient and the op's own output; returns one
// gradient per input (an undefined Tensor for inputs that need none).
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out, const Tensor& out)>;

/// Shared storage and graph record behind a Tensor handle.
///
/// Values are kept in double precision; an F32 node has every value rounded
/// to the nearest float when it is created, so the visible arithmetic is that
/// of 32-bit storage.
struct Node {
  std::uint64_t id = 0;
  Shape shape;
  DType dtype = DType::F64;
  std::vector<double> data;
  bool requires_grad = false;

  std::string op = "leaf";
  bool second_order = true;
  std::vector<Tensor> inputs;
  BackwardFn backward;
  bool freed = false;

  std::shared_ptr<std::vector<double>> grad;
};

/// Immutable dense tensor handle (row-major, N,C,D,H,W for volumes).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor from_data(Shape shape, std::vector<double> values, DType dtype = DType::F64,
                          bool requires_grad = false);
  static Tensor zeros(Shape shape, DType dtype = DType::F64, bool requires_grad = false);
  static Tensor full(Shape shape, double value, DType dtype = DType::F64,
                     bool requires_grad = false);
  static Tensor scalar(double value, DType dtype = DType::F64);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }
  DType dtype() const { return node_->dtype; }
  std::uint64_t id() const { return node_->id; }
  const std::string& op() const { return node_->op; }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return !node_->backward && !node_->freed; }

  std::span<const double> data() const { return node_->data; }
  double operator[](std::int64_t i) const { return node_->data[static_cast<std::size_t>(i)]; }
  double item() const;
  std::vector<double> to_vector() const { return node_->data; }

  // Gradient buffer populated for leaves by backward().
  bool has_grad() const { return node_->grad != nullptr; }
  Tensor grad() const;

  // Same values, cut from the graph.
  Tensor detach() const;
  // Fresh leaf sharing nothing with this tensor.
  Tensor clone_leaf(bool requires_grad) const;
  Tensor to(DType dtype) const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Whether ops record graph edges on the current thread.
bool grad_enabled();

class GradMode {
 public:
  explicit GradMode(bool enabled);
  ~GradMode();
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool previous_;
};

struct NoGrad : GradMode {
  NoGrad() : GradMode(false) {}
};

// Builds a node from computed values and wires it into the graph when any
// input requires a gradient and recording is enabled.
Tensor make_result(std::string op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs, BackwardFn backward, bool second_order = true);

Shape broadcast_shapes(const Shape& a, const Shape& b);

// ---- elementwise (numpy-style broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor rsqrt(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor clamp(const Tensor& a, double lo, double hi);
// a + t * (b - a); t broadcasts against a and b.
Tensor lerp(const Tensor& a, const Tensor& b, const Tensor& t);
Tensor lerp(const Tensor& a, const Tensor& b, double t);

// ---- reductions and shape ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sums over the axes where `shape` has extent 1 (numpy broadcast inverse).
Tensor sum_to(const Tensor& a, const Shape& shape);
Tensor broadcast_to(const Tensor& a, const Shape& shape);
// Mean over the listed axes, keeping them as extent 1.
Tensor mean_over(const Tensor& a, const std::vector<std::int64_t>& axes);
Tensor sum_over(const Tensor& a, const std::vector<std::int64_t>& axes);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
// x[N,in] * weight[out,in]^T + bias[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
Tensor slice(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t length);
// Places `a` at [start, start+len) of a zero tensor whose `axis` extent is `full`.
Tensor embed(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t full);

// ---- volumetric ----
using Int3 = std::array<std::int64_t, 3>;

Tensor conv3d(const Tensor& input, const Tensor& kernel, Int3 stride = {1, 1, 1},
              Int3 padding = {0, 0, 0});
// Gradient of conv3d with respect to its input / its kernel; both are
// themselves differentiable so conv3d supports double backward.
Tensor conv3d_input_grad(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                         Int3 stride, Int3 padding);
Tensor conv3d_kernel_grad(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape,
                          Int3 stride, Int3 padding);
Tensor upsample3d_nearest(const Tensor& a, Int3 factor);
// Block sum, the adjoint of nearest upsampling.
Tensor downsample3d_sum(const Tensor& a, Int3 factor);

// ---- normalization and composites ----
inline constexpr double kInstanceNormEps = 1e-5;
Tensor instance_norm(const Tensor& x, double eps = kInstanceNormEps);
// Per-channel normalization followed by scale[N,C] and shift[N,C].
Tensor adaptive_instance_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                              double eps = kInstanceNormEps);
Tensor softmax_over_channels(const Tensor& logits);
Tensor log_softmax_over_channels(const Tensor& logits);
// mean |a - b|
Tensor l1_distance(const Tensor& a, const Tensor& b);

// Uniform [0,1) values from a 64-bit Mersenne Twister seeded with `seed`.
Tensor random_uniform(const Shape& shape, std::uint64_t seed, DType dtype = DType::F64);

}  // namespace wdgda
