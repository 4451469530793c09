#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace wdgda {

struct GradcheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_error < tolerance; }
};

// First-order check of every registered op against central differences, at
// `points` random evaluation points each (64-bit, tolerance 1e-6).
std::vector<GradcheckResult> check_op_gradients(int points = 10, std::uint64_t seed = 1);

// Same harness with 32-bit storage (tolerance 1e-3) over the smooth ops.
std::vector<GradcheckResult> check_op_gradients_f32(int points = 10, std::uint64_t seed = 1);

// For every op certified for double backward, compares the derivative of
// the squared input-gradient norm (second-order path) against central
// differences of that norm (tolerance 1e-3).
std::vector<GradcheckResult> check_second_order(int points = 10, std::uint64_t seed = 1);

// Every loss term against central differences (64-bit, tolerance 1e-6),
// differentiated w.r.t. its tensor inputs and, for network-backed terms, the
// parameters of a small model.
std::vector<GradcheckResult> check_loss_gradients(int points = 10, std::uint64_t seed = 1);

// Gradient penalty and the full critic objective w.r.t. critic parameters,
// which runs through double backward (tolerance 1e-3).
std::vector<GradcheckResult> check_penalty_gradients(int points = 10, std::uint64_t seed = 1);

}  // namespace wdgda
