#include <algorithm>
#include <functional>
#include <random>

#include "wdgda/autograd.hpp"
#include "wdgda/gradcheck.hpp"
#include "wdgda/losses.hpp"

namespace wdgda {

namespace {

using ScalarFn = std::function<Tensor(const Tensor&)>;

Tensor uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = u(rng);
  return Tensor::from_data(shape, std::move(v));
}

Tensor binary_mask(const Shape& shape, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.4);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = b(rng) ? 1.0 : 0.0;
  return Tensor::from_data(shape, std::move(v));
}

NetConfig tiny_config(std::uint64_t seed) {
  NetConfig c;
  c.patch_depth = 1;
  c.patch_height = 4;
  c.patch_width = 4;
  c.content_channels = 2;
  c.style_dim = 2;
  c.width = 2;
  c.res_blocks = 1;
  c.mlp_hidden = 3;
  c.critic_width = 2;
  c.critic_stages = 2;
  c.content_disc_width = 2;
  c.init_std = 0.5;
  c.init_seed = seed;
  return c;
}

ModelBundle replace(ModelBundle b, const std::string& group, const std::string& name,
                    const Tensor& value) {
  b.groups.at(group).at(name) = value;
  return b;
}

struct Case {
  std::string name;
  double tolerance;
  // builds (function, evaluation point) for one random draw
  std::function<std::pair<ScalarFn, Tensor>(std::mt19937_64&, std::uint64_t)> make;
};

std::vector<GradcheckResult> run(const std::vector<Case>& cases, int points, std::uint64_t seed) {
  std::vector<GradcheckResult> results;
  for (const auto& c : cases) {
    std::mt19937_64 rng(seed ^ std::hash<std::string>{}(c.name));
    GradcheckResult r{c.name, 0.0, c.tolerance};
    for (int p = 0; p < points; ++p) {
      auto [f, point] = c.make(rng, seed * 1000 + static_cast<std::uint64_t>(p));
      r.max_error = std::max(r.max_error, finite_diff_check(f, point));
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace

std::vector<GradcheckResult> check_loss_gradients(int points, std::uint64_t seed) {
  const Shape img{2, 1, 1, 4, 4};
  std::vector<Case> cases;

  cases.push_back({"self_reconstruction", 1e-6, [img](std::mt19937_64& rng, std::uint64_t) {
                     auto x = uniform(img, rng);
                     return std::make_pair(
                         ScalarFn([x](const Tensor& r) { return self_reconstruction_loss(x, r); }),
                         uniform(img, rng));
                   }});
  cases.push_back({"latent_content", 1e-6, [](std::mt19937_64& rng, std::uint64_t) {
                     auto z = uniform({2, 3, 1, 2, 2}, rng);
                     return std::make_pair(
                         ScalarFn([z](const Tensor& r) { return latent_content_loss(z, r); }),
                         uniform(z.shape(), rng));
                   }});
  cases.push_back({"latent_style", 1e-6, [](std::mt19937_64& rng, std::uint64_t) {
                     auto z = uniform({2, 4}, rng);
                     return std::make_pair(
                         ScalarFn([z](const Tensor& r) { return latent_style_loss(z, r); }),
                         uniform(z.shape(), rng));
                   }});
  cases.push_back({"adaptation_terms_wrt_x", 1e-6, [img](std::mt19937_64& rng, std::uint64_t s) {
                     auto bundle = make_bundle(tiny_config(s));
                     auto y = uniform(img, rng);
                     ScalarFn f = [bundle, y](const Tensor& x) {
                       auto fw = adaptation_forward(Translator::of(bundle), x, y);
                       return add(add(add(fw.loss_recon_x, fw.loss_latent_c),
                                      add(fw.loss_latent_s, fw.loss_cyc)),
                                  fw.loss_recon_y);
                     };
                     return std::make_pair(f, uniform(img, rng));
                   }});
  cases.push_back({"cross_cycle_wrt_y", 1e-6, [img](std::mt19937_64& rng, std::uint64_t s) {
                     auto bundle = make_bundle(tiny_config(s));
                     auto x = uniform(img, rng);
                     ScalarFn f = [bundle, x](const Tensor& y) {
                       return cross_cycle_loss(bundle, x, y);
                     };
                     return std::make_pair(f, uniform(img, rng));
                   }});
  cases.push_back({"cross_cycle_wrt_decoder", 1e-6, [img](std::mt19937_64& rng, std::uint64_t s) {
                     auto bundle = make_bundle(tiny_config(s));
                     auto x = uniform(img, rng);
                     auto y = uniform(img, rng);
                     ScalarFn f = [bundle, x, y](const Tensor& w) {
                       return cross_cycle_loss(replace(bundle, "dec_Y", "up1.w", w), x, y);
                     };
                     return std::make_pair(f, bundle.param("dec_Y", "up1.w").detach());
                   }});
  cases.push_back({"wgan_critic_without_penalty", 1e-6,
                   [img](std::mt19937_64& rng, std::uint64_t s) {
                     auto bundle = make_bundle(tiny_config(s));
                     auto real = uniform(img, rng);
                     auto fake = uniform(img, rng);
                     ScalarFn f = [bundle, real, fake, s](const Tensor& w) {
                       auto b = replace(bundle, "critic_X", "conv0.w", w);
                       return wgan_critic_loss(b, Domain::X, real, fake, 0.0, s).critic_loss;
                     };
                     return std::make_pair(f, bundle.param("critic_X", "conv0.w").detach());
                   }});
  cases.push_back({"wgan_generator_term", 1e-6, [img](std::mt19937_64& rng, std::uint64_t s) {
                     auto bundle = make_bundle(tiny_config(s));
                     ScalarFn f = [bundle](const Tensor& fake) {
                       return wgan_generator_term(bundle, Domain::Y, fake);
                     };
                     return std::make_pair(f, uniform(img, rng));
                   }});
  cases.push_back({"content_adversarial_disc", 1e-6, [](std::mt19937_64& rng, std::uint64_t s) {
                     auto bundle = make_bundle(tiny_config(s));
                     const auto shape = bundle.config.content_shape(2);
                     auto zx = uniform(shape, rng);
                     auto zy = uniform(shape, rng);
                     ScalarFn f = [bundle, zx, zy](const Tensor& w) {
                       auto b = replace(bundle, "content_disc", "conv0.w", w);
                       return content_adversarial_loss(b, zx, zy).disc_objective;
                     };
                     return std::make_pair(f, bundle.param("content_disc", "conv0.w").detach());
                   }});
  cases.push_back({"content_adversarial_encoder", 1e-6, [](std::mt19937_64& rng, std::uint64_t s) {
                     auto bundle = make_bundle(tiny_config(s));
                     const auto shape = bundle.config.content_shape(2);
                     auto zy = uniform(shape, rng);
                     ScalarFn f = [bundle, zy](const Tensor& zx) {
                       return content_adversarial_loss(bundle, zx, zy).encoder_objective;
                     };
                     return std::make_pair(f, uniform(shape, rng, -3.0, 3.0));
                   }});
  cases.push_back({"soft_dice_weighted_ce", 1e-6, [](std::mt19937_64& rng, std::uint64_t) {
                     auto mask = binary_mask({2, 1, 2, 3, 3}, rng);
                     auto w = inverse_frequency_weights(mask);
                     ScalarFn f = [mask, w](const Tensor& logits) {
                       return soft_dice_weighted_ce(logits, mask, w);
                     };
                     return std::make_pair(f, uniform({2, 2, 2, 3, 3}, rng, -3.0, 3.0));
                   }});
  return run(cases, points, seed);
}

std::vector<GradcheckResult> check_penalty_gradients(int points, std::uint64_t seed) {
  const Shape img{2, 1, 1, 4, 4};
  std::vector<Case> cases;
  for (const char* param : {"conv0.w", "conv0.b", "conv1.w"}) {
    cases.push_back({std::string("gradient_penalty_wrt_") + param, 1e-3,
                     [img, param](std::mt19937_64& rng, std::uint64_t s) {
                       auto bundle = make_bundle(tiny_config(s));
                       auto real = uniform(img, rng);
                       auto fake = uniform(img, rng);
                       ScalarFn f = [=](const Tensor& w) {
                         auto b = replace(bundle, "critic_Y", param, w);
                         return gradient_penalty(b, Domain::Y, real, fake, s);
                       };
                       auto start = add(bundle.param("critic_Y", param).detach(),
                                        uniform(bundle.param("critic_Y", param).shape(), rng,
                                                -0.2, 0.2));
                       return std::make_pair(f, start);
                     }});
  }
  cases.push_back({"wgan_critic_loss_with_penalty", 1e-3,
                   [img](std::mt19937_64& rng, std::uint64_t s) {
                     auto bundle = make_bundle(tiny_config(s));
                     auto real = uniform(img, rng);
                     auto fake = uniform(img, rng);
                     ScalarFn f = [bundle, real, fake, s](const Tensor& w) {
                       auto b = replace(bundle, "critic_X", "conv0.w", w);
                       return wgan_critic_loss(b, Domain::X, real, fake, 10.0, s).critic_loss;
                     };
                     return std::make_pair(f, bundle.param("critic_X", "conv0.w").detach());
                   }});
  cases.push_back({"gradient_penalty_linear_critic", 1e-3,
                   [img](std::mt19937_64& rng, std::uint64_t s) {
                     auto c = tiny_config(s);
                     c.critic_kind = CriticKind::Linear;
                     auto bundle = make_bundle(c);
                     auto real = uniform(img, rng);
                     auto fake = uniform(img, rng);
                     ScalarFn f = [bundle, real, fake, s](const Tensor& w) {
                       return gradient_penalty(replace(bundle, "critic_X", "w", w), Domain::X,
                                               real, fake, s);
                     };
                     return std::make_pair(f, uniform(bundle.param("critic_X", "w").shape(), rng));
                   }});
  return run(cases, points, seed);
}

}  // namespace wdgda
