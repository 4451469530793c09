#include "wdgda/losses.hpp"

#include <cmath>
#include <cstdio>

#include "wdgda/autograd.hpp"

namespace wdgda {

void LossWeights::validate() const {
  const std::pair<const char*, double> fields[] = {
      {"lambda_wgan", lambda_wgan},     {"lambda_recon", lambda_recon},
      {"lambda_cyc", lambda_cyc},       {"lambda_latent", lambda_latent},
      {"lambda_content", lambda_content}, {"alpha", alpha}};
  for (const auto& [name, v] : fields) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError(std::string(name) + " must be finite and >= 0");
    }
  }
}

std::string LossReport::csv_header() {
  return "step,recon_x,recon_y,latent_c,latent_s,cyc,wgan_x,wgan_y,content_adv,total,updated";
}

std::string LossReport::csv_row() const {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,",
                static_cast<long long>(step), recon_x, recon_y, latent_c, latent_s, cyc, wgan_x,
                wgan_y, content_adv, total);
  return buf + updated;
}

double total_loss(const LossWeights& w, const LossReport& t) {
  const std::pair<const char*, double> terms[] = {
      {"recon_x", t.recon_x},   {"recon_y", t.recon_y}, {"latent_c", t.latent_c},
      {"latent_s", t.latent_s}, {"cyc", t.cyc},         {"wgan_x", t.wgan_x},
      {"wgan_y", t.wgan_y},     {"content_adv", t.content_adv}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw NumericError(std::string("loss term '") + name + "' is not finite");
  }
  return w.lambda_wgan * (t.wgan_x + t.wgan_y) + w.lambda_recon * (t.recon_x + t.recon_y) +
         w.lambda_cyc * t.cyc + w.lambda_latent * (t.latent_c + t.latent_s) +
         w.lambda_content * t.content_adv;
}

namespace {

Tensor mae(const char* what, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
  return l1_distance(a, b);
}

template <class F>
Tensor term(const char* name, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string("loss term '") + name + "': " + e.what());
  }
}

}  // namespace

Tensor self_reconstruction_loss(const Tensor& x, const Tensor& x_recon) {
  return mae("self_reconstruction_loss", x, x_recon);
}

Tensor latent_content_loss(const Tensor& zc_original, const Tensor& zc_recovered) {
  return mae("latent_content_loss", zc_original, zc_recovered);
}

Tensor latent_style_loss(const Tensor& zs_original, const Tensor& zs_recovered) {
  return mae("latent_style_loss", zs_original, zs_recovered);
}

Translator Translator::of(const ModelBundle& bundle) {
  const ModelBundle* b = &bundle;
  return Translator{
      [b](Domain d, const Tensor& x) { return encode_content(*b, d, x); },
      [b](Domain d, const Tensor& x) { return encode_style(*b, d, x); },
      [b](Domain d, const Tensor& c, const Tensor& s) { return wdgda::decode(*b, d, c, s); },
  };
}

AdaptationForward adaptation_forward(const Translator& t, const Tensor& x, const Tensor& y,
                                     bool mirror_latent) {
  if (x.shape() != y.shape()) {
    throw ShapeError("adaptation_forward: x " + to_string(x.shape()) + " and y " +
                     to_string(y.shape()) + " differ");
  }
  AdaptationForward f;
  f.zc_x = t.content(Domain::X, x);
  f.zs_x = t.style(Domain::X, x);
  f.zc_y = t.content(Domain::Y, y);
  f.zs_y = t.style(Domain::Y, y);

  f.recon_x = t.decode(Domain::X, f.zc_x, f.zs_x);
  f.recon_y = t.decode(Domain::Y, f.zc_y, f.zs_y);
  f.loss_recon_x = term("recon_x", [&] { return self_reconstruction_loss(x, f.recon_x); });
  f.loss_recon_y = term("recon_y", [&] { return self_reconstruction_loss(y, f.recon_y); });

  f.fake_x = t.decode(Domain::X, f.zc_y, f.zs_x);
  f.fake_y = t.decode(Domain::Y, f.zc_x, f.zs_y);

  f.zc_fake_y = t.content(Domain::Y, f.fake_y);
  f.zs_fake_y = t.style(Domain::Y, f.fake_y);
  f.zc_fake_x = t.content(Domain::X, f.fake_x);
  f.zs_fake_x = t.style(Domain::X, f.fake_x);

  f.loss_latent_c = term("latent_c", [&] {
    auto l = latent_content_loss(f.zc_x, f.zc_fake_y);
    return mirror_latent ? add(l, latent_content_loss(f.zc_y, f.zc_fake_x)) : l;
  });
  f.loss_latent_s = term("latent_s", [&] {
    auto l = latent_style_loss(f.zs_y, f.zs_fake_y);
    return mirror_latent ? add(l, latent_style_loss(f.zs_x, f.zs_fake_x)) : l;
  });

  f.cycle_x = t.decode(Domain::X, f.zc_fake_y, f.zs_fake_x);
  f.cycle_y = t.decode(Domain::Y, f.zc_fake_x, f.zs_fake_y);
  f.loss_cyc = term("cyc", [&] {
    return add(mae("cross_cycle_loss", f.cycle_x, x), mae("cross_cycle_loss", f.cycle_y, y));
  });
  return f;
}

Tensor cross_cycle_loss(const Translator& t, const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) {
    throw ShapeError("cross_cycle_loss: x " + to_string(x.shape()) + " and y " +
                     to_string(y.shape()) + " differ");
  }
  auto zc_y = t.content(Domain::Y, y);
  auto zs_x = t.style(Domain::X, x);
  auto fake_x = t.decode(Domain::X, zc_y, zs_x);
  auto zc_x = t.content(Domain::X, x);
  auto zs_y = t.style(Domain::Y, y);
  auto fake_y = t.decode(Domain::Y, zc_x, zs_y);
  auto zc_fake_y = t.content(Domain::Y, fake_y);
  auto zs_fake_x = t.style(Domain::X, fake_x);
  auto cycle_x = t.decode(Domain::X, zc_fake_y, zs_fake_x);
  auto zc_fake_x = t.content(Domain::X, fake_x);
  auto zs_fake_y = t.style(Domain::Y, fake_y);
  auto cycle_y = t.decode(Domain::Y, zc_fake_x, zs_fake_y);
  return add(mae("cross_cycle_loss", cycle_x, x), mae("cross_cycle_loss", cycle_y, y));
}

Tensor cross_cycle_loss(const ModelBundle& bundle, const Tensor& x, const Tensor& y) {
  return cross_cycle_loss(Translator::of(bundle), x, y);
}

Tensor penalty_coefficients(const Tensor& real, std::uint64_t seed) {
  Shape shape(real.shape().size(), 1);
  shape[0] = real.dim(0);
  return random_uniform(shape, seed, real.dtype());
}

Tensor gradient_penalty(const ModelBundle& bundle, Domain domain, const Tensor& real,
                        const Tensor& fake, std::uint64_t seed) {
  if (real.shape() != fake.shape()) {
    throw ShapeError("gradient_penalty: real " + to_string(real.shape()) + " and fake " +
                     to_string(fake.shape()) + " differ");
  }
  Tensor mixed;
  {
    NoGrad ng;
    mixed = lerp(fake, real, penalty_coefficients(real, seed));
  }
  mixed = mixed.clone_leaf(true);
  auto scores = critic(bundle, domain, mixed);
  auto g = grad(sum(scores), {mixed}, true).front();
  if (!g.defined()) g = Tensor::zeros(mixed.shape(), mixed.dtype());

  std::vector<std::int64_t> axes;
  for (std::int64_t a = 1; a < g.rank(); ++a) axes.push_back(a);
  auto norm = sqrt(add_scalar(sum_over(square(g), axes), 1e-12));
  return mean(square(add_scalar(norm, -1.0)));
}

CriticLosses wgan_critic_loss(const ModelBundle& bundle, Domain domain, const Tensor& real,
                              const Tensor& fake, double alpha, std::uint64_t seed) {
  if (real.shape() != fake.shape()) {
    throw ShapeError("wgan_critic_loss: real " + to_string(real.shape()) + " and fake " +
                     to_string(fake.shape()) + " differ");
  }
  CriticLosses out;
  auto d_real = mean(critic(bundle, domain, real.detach()));
  auto d_fake = mean(critic(bundle, domain, fake.detach()));
  out.penalty = gradient_penalty(bundle, domain, real, fake, seed);
  auto gap = sub(d_real, d_fake);
  out.wasserstein = gap.item();
  out.critic_objective = add(gap, scale(out.penalty, alpha));
  out.critic_loss = add(neg(gap), scale(out.penalty, alpha));
  out.generator_term = wgan_generator_term(bundle, domain, fake);
  return out;
}

Tensor wgan_generator_term(const ModelBundle& bundle, Domain domain, const Tensor& fake) {
  return neg(mean(critic(bundle, domain, fake)));
}

namespace {

Tensor clamped_log(const Tensor& p) {
  return log(clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp));
}

Tensor clamped_log1m(const Tensor& p) {
  return log(clamp(add_scalar(neg(p), 1.0), kProbabilityClamp, 1.0 - kProbabilityClamp));
}

}  // namespace

ContentAdversarial content_adversarial_loss(const ModelBundle& bundle, const Tensor& zc_x,
                                            const Tensor& zc_y) {
  if (zc_x.shape() != zc_y.shape()) {
    throw ShapeError("content_adversarial_loss: code shapes " + to_string(zc_x.shape()) +
                     " and " + to_string(zc_y.shape()) + " differ");
  }
  ContentAdversarial out;
  {
    auto px = content_discriminate(bundle, zc_x.detach());
    auto py = content_discriminate(bundle, zc_y.detach());
    out.disc_objective =
        scale(add(mean(clamped_log(px)), mean(clamped_log1m(py))), -0.5);
  }
  auto px = content_discriminate(bundle, zc_x);
  auto py = content_discriminate(bundle, zc_y);
  auto confusion = [](const Tensor& p) {
    return scale(add(mean(clamped_log(p)), mean(clamped_log1m(p))), -0.5);
  };
  out.encoder_objective = scale(add(confusion(px), confusion(py)), 0.5);
  return out;
}

namespace {

Tensor mask_as_nchw(const Tensor& mask, const Shape& logits_shape) {
  Shape want = logits_shape;
  want[1] = 1;
  Shape bare = want;
  bare.erase(bare.begin() + 1);
  if (mask.shape() != want && mask.shape() != bare) {
    throw ShapeError("soft_dice_weighted_ce: mask " + to_string(mask.shape()) +
                     " does not match logits " + to_string(logits_shape));
  }
  for (double v : mask.data()) {
    if (v != 0.0 && v != 1.0) throw ShapeError("soft_dice_weighted_ce: mask is not binary");
  }
  return reshape(mask.detach(), want);
}

}  // namespace

std::array<double, 2> inverse_frequency_weights(const Tensor& mask) {
  double fg = 0.0;
  for (double v : mask.data()) fg += v;
  const double n = static_cast<double>(mask.numel());
  const double f1 = fg / n;
  return {1.0 / std::max(1.0 - f1, 0.05), 1.0 / std::max(f1, 0.05)};
}

Tensor soft_dice_weighted_ce(const Tensor& logits, const Tensor& mask,
                             std::array<double, 2> class_weights) {
  if (logits.rank() != 5 || logits.dim(1) != 2) {
    throw ShapeError("soft_dice_weighted_ce: logits must be [N,2,D,H,W], got " +
                     to_string(logits.shape()));
  }
  for (double w : class_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError("soft_dice_weighted_ce: class weights must be finite and >= 0");
    }
  }
  auto g = mask_as_nchw(mask, logits.shape());
  auto p_fg = slice(softmax_over_channels(logits), 1, 1, 1);
  auto inter = sum(mul(p_fg, g));
  auto denom = add_scalar(add(sum(p_fg), sum(g)), kSoftDiceEps);
  auto dice = sub(Tensor::scalar(1.0, logits.dtype()),
                  div(add_scalar(scale(inter, 2.0), kSoftDiceEps), denom));

  // weighted one-hot target
  auto bg = add_scalar(neg(g), 1.0);
  auto target = concat({scale(bg, class_weights[0]), scale(g, class_weights[1])}, 1);
  const double voxels = static_cast<double>(g.numel());
  auto ce = scale(sum(mul(target, log_softmax_over_channels(logits))), -1.0 / voxels);
  return add(dice, ce);
}

namespace {

struct Overlap {
  std::int64_t a = 0, b = 0, both = 0;
};

Overlap count_overlap(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("mask sizes differ: " + std::to_string(pred.size()) + " vs " +
                     std::to_string(truth.size()));
  }
  Overlap o;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] > 1 || truth[i] > 1) {
      throw ShapeError("mask value " + std::to_string(std::max(pred[i], truth[i])) +
                       " at index " + std::to_string(i) + " is not binary");
    }
    o.a += pred[i];
    o.b += truth[i];
    o.both += pred[i] & truth[i];
  }
  return o;
}

}  // namespace

double dice_metric(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  auto o = count_overlap(pred, truth);
  if (o.a + o.b == 0) return 1.0;
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

double jaccard_metric(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  auto o = count_overlap(pred, truth);
  const auto uni = o.a + o.b - o.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.both) / static_cast<double>(uni);
}

}  // namespace wdgda
