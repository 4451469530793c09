#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wdgda/networks.hpp"
#include "wdgda/tensor.hpp"

namespace wdgda {

struct LossWeights {
  double lambda_wgan = 1.0;
  double lambda_recon = 10.0;
  double lambda_cyc = 0.1;
  double lambda_latent = 10.0;
  double lambda_content = 1.0;
  double alpha = 10.0;  // gradient penalty coefficient

  void validate() const;
};

// Scalar values of every objective term for one iteration.
struct LossReport {
  std::int64_t step = 0;
  double recon_x = 0, recon_y = 0;
  double latent_c = 0, latent_s = 0;
  double cyc = 0;
  double wgan_x = 0, wgan_y = 0;
  double content_adv = 0;
  double total = 0;
  // groups stepped in this iteration, '+'-joined; empty for no update
  std::string updated;

  static std::string csv_header();
  std::string csv_row() const;
};

double total_loss(const LossWeights& w, const LossReport& terms);

// L1 terms, all mean absolute error.
Tensor self_reconstruction_loss(const Tensor& x, const Tensor& x_recon);
Tensor latent_content_loss(const Tensor& zc_original, const Tensor& zc_recovered);
Tensor latent_style_loss(const Tensor& zs_original, const Tensor& zs_recovered);

// Encoders and decoders seen through plain callables so test doubles can
// stand in for the networks.
struct Translator {
  std::function<Tensor(Domain, const Tensor&)> content;
  std::function<Tensor(Domain, const Tensor&)> style;
  std::function<Tensor(Domain, const Tensor&, const Tensor&)> decode;

  static Translator of(const ModelBundle& bundle);
};

// Everything the generator objective needs from one (x, y) pair.
//   fake_x = G_X(E^c_Y(y), E^s_X(x))   y's anatomy in X's appearance
//   fake_y = G_Y(E^c_X(x), E^s_Y(y))
//   cycle_x = G_X(E^c_Y(fake_y), E^s_X(fake_x)), cycle_y likewise
struct AdaptationForward {
  Tensor zc_x, zs_x, zc_y, zs_y;
  Tensor recon_x, recon_y;
  Tensor fake_x, fake_y;
  Tensor zc_fake_y, zs_fake_y, zc_fake_x, zs_fake_x;
  Tensor cycle_x, cycle_y;

  Tensor loss_recon_x, loss_recon_y;
  Tensor loss_latent_c, loss_latent_s;
  Tensor loss_cyc;
};

// With `mirror_latent` false only the Y-decoder direction of the latent
// terms is used.
AdaptationForward adaptation_forward(const Translator& t, const Tensor& x, const Tensor& y,
                                     bool mirror_latent = true);

Tensor cross_cycle_loss(const Translator& t, const Tensor& x, const Tensor& y);
Tensor cross_cycle_loss(const ModelBundle& bundle, const Tensor& x, const Tensor& y);

// Per-sample interpolation coefficients in [0,1), shape [N,1,...,1].
Tensor penalty_coefficients(const Tensor& real, std::uint64_t seed);

// Batch mean of (||grad D(t*real + (1-t)*fake)||_2 - 1)^2. Differentiable
// in the critic parameters; no gradient reaches real or fake.
Tensor gradient_penalty(const ModelBundle& bundle, Domain domain, const Tensor& real,
                        const Tensor& fake, std::uint64_t seed);

struct CriticLosses {
  Tensor critic_objective;  // mean D(real) - mean D(fake) + alpha*penalty
  Tensor critic_loss;       // minimized by the critic: mean D(fake) - mean D(real) + alpha*penalty
  Tensor generator_term;    // -mean D(fake)
  Tensor penalty;
  double wasserstein = 0.0;  // mean D(real) - mean D(fake)
};

// The critic terms see `fake` detached; generator_term does not.
CriticLosses wgan_critic_loss(const ModelBundle& bundle, Domain domain, const Tensor& real,
                              const Tensor& fake, double alpha, std::uint64_t seed);

Tensor wgan_generator_term(const ModelBundle& bundle, Domain domain, const Tensor& fake);

inline constexpr double kProbabilityClamp = 1e-7;

struct ContentAdversarial {
  Tensor disc_objective;     // BCE, label 1 for X codes and 0 for Y codes (codes detached)
  Tensor encoder_objective;  // BCE against target 1/2 over both domains
};

ContentAdversarial content_adversarial_loss(const ModelBundle& bundle, const Tensor& zc_x,
                                            const Tensor& zc_y);

// 1/max(frequency, 0.05) for background and foreground of a 0/1 mask tensor.
std::array<double, 2> inverse_frequency_weights(const Tensor& mask);

inline constexpr double kSoftDiceEps = 1.0;

// logits [N,2,D,H,W]; mask [N,1,D,H,W] or [N,D,H,W] holding 0/1.
// Soft Dice on the foreground channel plus class-weighted cross-entropy.
Tensor soft_dice_weighted_ce(const Tensor& logits, const Tensor& mask,
                             std::array<double, 2> class_weights);

double dice_metric(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);
double jaccard_metric(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

}  // namespace wdgda
