#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "wdgda/tensor.hpp"

namespace wdgda {

// Leaf gradients keyed by Tensor::id().
using GradientMap = std::map<std::uint64_t, Tensor>;

/// Reverse-mode sweep from a scalar `loss` to every leaf that requires a
/// gradient. With `retain_secondary` the sweep is itself recorded: the
/// returned gradients are graph nodes and may be differentiated again, and
/// the forward graph stays usable. Otherwise the traversed graph is released
/// and a second sweep over it raises GraphError.
GradientMap backward(const Tensor& loss, bool retain_secondary = false);

/// Gradients of a scalar `output` with respect to `inputs` (which may be
/// interior nodes). Undefined entries mean the input does not influence the
/// output.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph = false);

/// max_i |analytic_i - central_i| / max(1, |analytic_i|) for a scalar
/// function, evaluated at `point`. Coordinates that miss at step `eps` are
/// retried at eps/10 and eps/100 and keep the best match, so a kink of a
/// piecewise-linear op next to the point does not register as an error.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                         double eps = 1e-5);

}  // namespace wdgda
