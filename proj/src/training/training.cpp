#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "wdgda/training.hpp"

namespace wdgda {

// ---------------------------------------------------------------------------
// Adam

void adam_step(ModelBundle& bundle, const std::vector<std::string>& groups,
               const GradientMap& grads, AdamState& state, const AdamConfig& cfg) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& gname : groups) {
    auto it = bundle.groups.find(gname);
    if (it == bundle.groups.end()) throw InvariantError("adam_step: unknown group '" + gname + "'");
    for (auto& [pname, param] : it->second) {
      const auto key = gname + "/" + pname;
      const auto n = static_cast<std::size_t>(param.numel());
      std::vector<double> g(n, 0.0);
      if (auto gi = grads.find(param.id()); gi != grads.end() && gi->second.defined()) {
        g = gi->second.to_vector();
        if (g.size() != n) throw InvariantError("adam_step: gradient shape mismatch for " + key);
      }
      for (double v : g)
        if (!std::isfinite(v)) throw NumericError("non-finite gradient for parameter " + key);

      std::vector<double> m(n, 0.0), v(n, 0.0);
      if (auto mi = state.m.find(key); mi != state.m.end()) m = mi->second.to_vector();
      if (auto vi = state.v.find(key); vi != state.v.end()) v = vi->second.to_vector();
      if (m.size() != n || v.size() != n) throw InvariantError("adam_step: moment shape mismatch for " + key);

      auto p = param.to_vector();
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        if (!std::isfinite(p[i])) throw NumericError("non-finite update for parameter " + key);
      }
      state.m[key] = Tensor::from_data(param.shape(), std::move(m));
      state.v[key] = Tensor::from_data(param.shape(), std::move(v));
      param = Tensor::from_data(param.shape(), std::move(p), param.dtype(), true);
    }
  }
}

// ---------------------------------------------------------------------------
// Streams

PatchStream::PatchStream(std::vector<Case> cases, Dims3 patch, std::uint64_t seed, bool augment,
                         DType dtype, std::optional<std::int64_t> limit, bool fixed)
    : cases_(std::move(cases)),
      patch_(patch),
      seed_(seed),
      augment_(augment),
      dtype_(dtype),
      limit_(limit),
      fixed_(fixed) {
  if (cases_.empty()) throw ConfigError("patch stream needs at least one case");
  for (const auto& c : cases_) {
    c.volume.validate();
    for (int a = 0; a < 3; ++a)
      if (c.volume.dims[a] < patch_[a])
        throw ShapeError("case " + c.id + " has dims " + to_string(Shape(c.volume.dims.begin(), c.volume.dims.end())) +
                         ", smaller than the patch " + to_string(Shape(patch_.begin(), patch_.end())));
    if (!c.mask.labels.empty() && c.mask.dims != c.volume.dims)
      throw ShapeError("case " + c.id + ": mask dims differ from volume dims");
  }
}

std::optional<Batch> PatchStream::batch(std::int64_t iteration, std::int64_t size) const {
  if (limit_ && iteration >= *limit_) return std::nullopt;
  const auto index = fixed_ ? 0 : iteration;
  const bool labelled = std::all_of(cases_.begin(), cases_.end(),
                                    [](const Case& c) { return !c.mask.labels.empty(); });
  std::vector<std::vector<double>> voxels(static_cast<std::size_t>(size));
  std::vector<std::vector<std::uint8_t>> labels(static_cast<std::size_t>(size));
  Dims3 out_dims = patch_;
  for (std::int64_t b = 0; b < size; ++b) {
    const auto s = mix_seed(mix_seed(seed_, static_cast<std::uint64_t>(index)), static_cast<std::uint64_t>(b));
    const auto& c = cases_[mix_seed(s, 0) % cases_.size()];
    Dims3 origin{};
    for (int a = 0; a < 3; ++a)
      origin[a] = static_cast<std::int64_t>(mix_seed(s, 1 + a) % static_cast<std::uint64_t>(c.volume.dims[a] - patch_[a] + 1));
    const auto [D, H, W] = c.volume.dims;
    (void)D;
    auto& vx = voxels[static_cast<std::size_t>(b)];
    auto& lb = labels[static_cast<std::size_t>(b)];
    for (std::int64_t z = 0; z < patch_[0]; ++z)
      for (std::int64_t y = 0; y < patch_[1]; ++y) {
        const auto row = ((origin[0] + z) * H + (origin[1] + y)) * W + origin[2];
        vx.insert(vx.end(), c.volume.voxels.begin() + row, c.volume.voxels.begin() + row + patch_[2]);
        if (labelled)
          lb.insert(lb.end(), c.mask.labels.begin() + row, c.mask.labels.begin() + row + patch_[2]);
      }
    if (augment_) {
      auto choice = choose_augment(mix_seed(s, 4));
      if (patch_[1] != patch_[2]) choice.rotations &= 2;
      Dims3 dims = patch_;
      apply_augment(choice, dims, vx, lb);
      out_dims = dims;
    }
  }
  std::vector<const std::vector<double>*> vp;
  std::vector<const std::vector<std::uint8_t>*> lp;
  for (std::size_t b = 0; b < voxels.size(); ++b) {
    vp.push_back(&voxels[b]);
    lp.push_back(&labels[b]);
  }
  Batch out;
  out.images = patches_to_tensor(vp, out_dims, dtype_);
  if (labelled) out.masks = labels_to_tensor(lp, out_dims, dtype_);
  return out;
}

int prefetch_threads() {
  const char* env = std::getenv("WDGDA_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 0 || v > 64) throw ConfigError(std::string("WDGDA_THREADS must be an integer in [0, 64], got '") + env + "'");
  return static_cast<int>(v);
}

struct Prefetcher::Impl {
  const PatchStream& stream;
  std::int64_t end, size, capacity;
  std::int64_t next_consumed;
  std::int64_t next_claim;
  std::map<std::int64_t, std::optional<Batch>> ready;
  std::exception_ptr error;
  bool stop = false;
  std::mutex mu;
  std::condition_variable cv;
  std::vector<std::thread> workers;

  Impl(const PatchStream& s, std::int64_t b, std::int64_t e, std::int64_t n, std::int64_t cap)
      : stream(s), end(e), size(n), capacity(cap), next_consumed(b), next_claim(b) {}

  void work() {
    for (;;) {
      std::int64_t k;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return stop || (next_claim < end && next_claim < next_consumed + capacity); });
        if (stop) return;
        k = next_claim++;
      }
      std::optional<Batch> b;
      std::exception_ptr err;
      try {
        b = stream.batch(k, size);
      } catch (...) {
        err = std::current_exception();
      }
      {
        std::lock_guard lock(mu);
        if (err && !error) error = err;
        ready.emplace(k, std::move(b));
      }
      cv.notify_all();
    }
  }
};

Prefetcher::Prefetcher(const PatchStream& stream, std::int64_t begin, std::int64_t end,
                       std::int64_t size, int threads, std::int64_t capacity)
    : impl_(new Impl(stream, begin, end, size, std::max<std::int64_t>(1, capacity))) {
  for (int t = 0; t < threads; ++t) impl_->workers.emplace_back([this] { impl_->work(); });
}

Prefetcher::~Prefetcher() {
  {
    std::lock_guard lock(impl_->mu);
    impl_->stop = true;
  }
  impl_->cv.notify_all();
  for (auto& w : impl_->workers) w.join();
  delete impl_;
}

std::optional<Batch> Prefetcher::next() {
  auto& s = *impl_;
  if (s.workers.empty()) {
    if (s.next_consumed >= s.end) return std::nullopt;
    return s.stream.batch(s.next_consumed++, s.size);
  }
  std::unique_lock lock(s.mu);
  if (s.next_consumed >= s.end) return std::nullopt;
  s.cv.wait(lock, [&] { return s.error || s.ready.count(s.next_consumed); });
  if (s.error) std::rethrow_exception(s.error);
  auto node = s.ready.extract(s.next_consumed);
  ++s.next_consumed;
  lock.unlock();
  s.cv.notify_all();
  return std::move(node.mapped());
}

// ---------------------------------------------------------------------------
// Adaptation

namespace {

AdamConfig adam_config(const TrainConfig& c, double lr) { return AdamConfig{lr, c.beta1, c.beta2, c.adam_eps}; }

std::vector<std::string> generator_groups() {
  return {content_encoder_group(Domain::X), content_encoder_group(Domain::Y),
          style_encoder_group(Domain::X),   style_encoder_group(Domain::Y),
          decoder_group(Domain::X),         decoder_group(Domain::Y)};
}

template <class F>
auto term(const char* name, F f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string("loss term '") + name + "': " + e.what());
  }
}

void fill_terms(LossReport& r, const AdaptationForward& f) {
  r.recon_x = f.loss_recon_x.item();
  r.recon_y = f.loss_recon_y.item();
  r.latent_c = f.loss_latent_c.item();
  r.latent_s = f.loss_latent_s.item();
  r.cyc = f.loss_cyc.item();
}

}  // namespace

std::vector<LossReport> train_adaptation(const TrainConfig& config, const PatchStream& stream_x,
                                         const PatchStream& stream_y, ModelBundle& bundle,
                                         TrainerState& state, std::int64_t until,
                                         const ReportSink& sink) {
  config.weights.validate();
  if (config.content_disc_period < 1) throw ConfigError("content_disc_period must be positive");
  const auto& w = config.weights;
  const auto cfg = adam_config(config, config.learning_rate);
  const auto translator = Translator::of(bundle);
  const int threads = prefetch_threads();
  Prefetcher px(stream_x, state.iteration, until, config.batch, threads);
  Prefetcher py(stream_y, state.iteration, until, config.batch, threads);

  std::vector<LossReport> rows;
  for (auto i = state.iteration; i < until; ++i) {
    auto bx = px.next();
    auto by = py.next();
    if (!bx || !by) break;
    const auto& x = bx->images;
    const auto& y = by->images;
    LossReport r;
    r.step = i;
    if (i % config.content_disc_period == 0) {
      AdaptationForward f;
      {
        NoGrad ng;
        f = adaptation_forward(translator, x, y, config.mirror_latent);
        fill_terms(r, f);
        r.wgan_x = term("wgan_x", [&] { return wgan_generator_term(bundle, Domain::X, f.fake_x).item(); });
        r.wgan_y = term("wgan_y", [&] { return wgan_generator_term(bundle, Domain::Y, f.fake_y).item(); });
      }
      const auto ca = term("content_adv", [&] { return content_adversarial_loss(bundle, f.zc_x, f.zc_y); });
      r.content_adv = ca.encoder_objective.item();
      r.total = total_loss(w, r);
      const auto grads = backward(ca.disc_objective);
      adam_step(bundle, {"content_disc"}, grads, state.optimizers["content_disc"], cfg);
      r.updated = "content_disc";
    } else {
      const auto f = adaptation_forward(translator, x, y, config.mirror_latent);

      const auto seed = mix_seed(config.seed, static_cast<std::uint64_t>(i));
      const auto cx = term("critic_x", [&] { return wgan_critic_loss(bundle, Domain::X, x, f.fake_x, w.alpha, mix_seed(seed, 0)); });
      const auto cy = term("critic_y", [&] { return wgan_critic_loss(bundle, Domain::Y, y, f.fake_y, w.alpha, mix_seed(seed, 1)); });
      {
        const auto grads = backward(add(cx.critic_loss, cy.critic_loss));
        adam_step(bundle, {critic_group(Domain::X), critic_group(Domain::Y)}, grads,
                  state.optimizers["critics"], cfg);
      }

      const auto wx = term("wgan_x", [&] { return wgan_generator_term(bundle, Domain::X, f.fake_x); });
      const auto wy = term("wgan_y", [&] { return wgan_generator_term(bundle, Domain::Y, f.fake_y); });
      const auto ca = term("content_adv", [&] { return content_adversarial_loss(bundle, f.zc_x, f.zc_y); });
      fill_terms(r, f);
      r.wgan_x = wx.item();
      r.wgan_y = wy.item();
      r.content_adv = ca.encoder_objective.item();
      r.total = total_loss(w, r);

      auto total = scale(add(f.loss_recon_x, f.loss_recon_y), w.lambda_recon);
      total = add(total, scale(add(f.loss_latent_c, f.loss_latent_s), w.lambda_latent));
      total = add(total, scale(f.loss_cyc, w.lambda_cyc));
      total = add(total, scale(add(wx, wy), w.lambda_wgan));
      total = add(total, scale(ca.encoder_objective, w.lambda_content));
      if (std::abs(total.item() - r.total) > 1e-9 * std::max(1.0, std::abs(r.total)))
        throw InvariantError("iteration " + std::to_string(i) + ": optimized total " +
                             std::to_string(total.item()) + " differs from reported total " +
                             std::to_string(r.total));
      const auto grads = backward(total);
      adam_step(bundle, generator_groups(), grads, state.optimizers["generators"], cfg);
      r.updated = "critics+generators";
    }
    state.iteration = i + 1;
    if (sink) sink(r);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Segmentation

namespace {

struct Tiles {
  std::vector<Dims3> origins;
  std::vector<Patch> patches;
};

Tiles tile(const Volume& volume, Dims3 patch) {
  for (int a = 0; a < 3; ++a)
    if (volume.dims[a] < patch[a]) throw ShapeError("volume is smaller than the patch");
  Tiles t;
  t.origins = patch_origins(volume.dims, patch, patch, true);
  t.patches = extract_patches(volume, nullptr, patch, patch, true);
  return t;
}

constexpr std::size_t kTileChunk = 4;

// Runs `f` on chunks of tiles as [n,1,D,H,W] tensors and collects one
// voxel vector per tile from the [n,1,D,H,W] result.
template <class F>
std::vector<std::vector<double>> map_tiles(const Tiles& t, Dims3 patch, DType dtype, F f) {
  std::vector<std::vector<double>> out;
  const auto per = static_cast<std::size_t>(patch[0] * patch[1] * patch[2]);
  for (std::size_t start = 0; start < t.patches.size(); start += kTileChunk) {
    const auto stop = std::min(t.patches.size(), start + kTileChunk);
    std::vector<const std::vector<double>*> ptrs;
    for (auto k = start; k < stop; ++k) ptrs.push_back(&t.patches[k].voxels);
    const Tensor result = f(patches_to_tensor(ptrs, patch, dtype));
    const auto data = result.data();
    for (std::size_t k = 0; k < stop - start; ++k)
      out.emplace_back(data.begin() + static_cast<std::ptrdiff_t>(k * per),
                       data.begin() + static_cast<std::ptrdiff_t>((k + 1) * per));
  }
  return out;
}

}  // namespace

std::vector<double> predict_volume(const ModelBundle& bundle, Domain domain, const Volume& volume) {
  NoGrad ng;
  const Dims3 patch{bundle.config.patch_depth, bundle.config.patch_height, bundle.config.patch_width};
  const auto t = tile(volume, patch);
  const auto probs = map_tiles(t, patch, bundle.config.dtype, [&](const Tensor& images) {
    const auto logits = segment(bundle, segmentation_features(bundle, domain, images));
    return slice(softmax_over_channels(logits), 1, 1, 1);
  });
  return reassemble(probs, t.origins, patch, volume.dims);
}

std::vector<CaseScore> evaluate_cases(const ModelBundle& bundle, Domain domain,
                                      const std::vector<Case>& cases) {
  std::vector<CaseScore> out;
  for (const auto& c : cases) {
    c.mask.validate();
    if (c.mask.dims != c.volume.dims) throw ShapeError("case " + c.id + ": mask dims differ from volume dims");
    const auto prob = predict_volume(bundle, domain, c.volume);
    std::vector<std::uint8_t> pred(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i) pred[i] = prob[i] >= 0.5 ? 1 : 0;
    out.push_back({c.id, dice_metric(pred, c.mask.labels), jaccard_metric(pred, c.mask.labels)});
  }
  return out;
}

std::vector<SegLogRow> train_segmentation(const TrainConfig& config,
                                          const std::vector<SegSource>& sources,
                                          ModelBundle& bundle, TrainerState& state,
                                          std::int64_t until, const std::vector<Case>* validation,
                                          Domain validation_domain) {
  if (sources.empty()) throw ConfigError("segmentation needs at least one labelled stream");
  const auto cfg = adam_config(config, config.seg_learning_rate);
  std::vector<SegLogRow> rows;
  auto validate_at = [&](SegLogRow& row) {
    if (!validation || config.eval_every <= 0 || row.step % config.eval_every != 0) return;
    const auto scores = evaluate_cases(bundle, validation_domain, *validation);
    row.dice = row.jaccard = 0.0;
    for (const auto& s : scores) {
      row.dice += s.dice / static_cast<double>(scores.size());
      row.jaccard += s.jaccard / static_cast<double>(scores.size());
    }
  };
  for (auto j = state.seg_iteration; j < until; ++j) {
    const auto& src = sources[static_cast<std::size_t>(j) % sources.size()];
    auto b = src.stream->batch(j, config.batch);
    if (!b) break;
    if (!b->masks.defined()) throw ConfigError("segmentation stream has unlabelled cases");
    SegLogRow row;
    row.step = j;
    validate_at(row);

    std::vector<std::string> groups{"seg_head"};
    Tensor features;
    if (config.seg_finetune_encoder && bundle.config.seg_input != SegInput::RawImage) {
      features = segmentation_features(bundle, src.domain, b->images);
      groups.push_back(content_encoder_group(src.domain));
    } else {
      NoGrad ng;
      features = segmentation_features(bundle, src.domain, b->images);
    }
    const auto logits = segment(bundle, features);
    const auto loss = soft_dice_weighted_ce(logits, b->masks, inverse_frequency_weights(b->masks));
    row.loss = loss.item();
    const auto grads = backward(loss);
    adam_step(bundle, groups, grads, state.optimizers["seg"], cfg);
    state.seg_iteration = j + 1;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Content export

Volume export_content(const ModelBundle& bundle, Domain domain, const Volume& volume) {
  NoGrad ng;
  const Dims3 patch{bundle.config.patch_depth, bundle.config.patch_height, bundle.config.patch_width};
  const auto t = tile(volume, patch);
  const auto images = map_tiles(t, patch, bundle.config.dtype, [&](const Tensor& x) {
    return content_only_image(bundle, domain, encode_content(bundle, domain, x));
  });
  Volume out;
  out.dims = volume.dims;
  out.spacing = volume.spacing;
  out.voxels = reassemble(images, t.origins, patch, volume.dims);
  return out;
}

ContentDistance content_distance(const ModelBundle& bundle, const std::vector<Case>& x_cases,
                                 const std::vector<Case>& y_cases) {
  if (x_cases.size() != y_cases.size() || x_cases.empty())
    throw ConfigError("content_distance needs equally many, non-zero, paired cases");
  NoGrad ng;
  const Dims3 patch{bundle.config.patch_depth, bundle.config.patch_height, bundle.config.patch_width};
  double l1 = 0.0, mag = 0.0;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < x_cases.size(); ++i) {
    if (x_cases[i].volume.dims != y_cases[i].volume.dims)
      throw ShapeError("content_distance: pair " + std::to_string(i) + " differs in dims");
    const auto tx = tile(x_cases[i].volume, patch);
    const auto ty = tile(y_cases[i].volume, patch);
    for (std::size_t k = 0; k < tx.patches.size(); ++k) {
      const auto cx = encode_content(bundle, Domain::X,
                                     patches_to_tensor({&tx.patches[k].voxels}, patch, bundle.config.dtype));
      const auto cy = encode_content(bundle, Domain::Y,
                                     patches_to_tensor({&ty.patches[k].voxels}, patch, bundle.config.dtype));
      for (std::int64_t e = 0; e < cx.numel(); ++e) {
        l1 += std::abs(cx[e] - cy[e]);
        mag += 0.5 * (std::abs(cx[e]) + std::abs(cy[e]));
      }
      count += cx.numel();
    }
  }
  return {l1 / static_cast<double>(count), mag / static_cast<double>(count)};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kModelPrefix = "model/";
constexpr const char* kAdamPrefix = "adam/";

Tensor text_tensor(const std::string& s) {
  const Shape shape{static_cast<std::int64_t>(s.size())};
  return Tensor::from_data(shape, std::vector<double>(s.begin(), s.end()));
}

std::string tensor_text(const Tensor& t) {
  std::string s;
  for (double c : t.data()) {
    if (c < 0 || c > 255 || c != std::floor(c)) throw ParseError("checkpoint text entry holds a non-byte value", 0);
    s.push_back(static_cast<char>(static_cast<unsigned char>(c)));
  }
  return s;
}

const Tensor& required(const NamedTensors& t, const std::string& name) {
  auto it = t.find(name);
  if (it == t.end()) throw ConfigError("checkpoint is missing entry '" + name + "'");
  return it->second;
}

bool starts_with(const std::string& s, const std::string& p) { return s.compare(0, p.size(), p) == 0; }

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelBundle& bundle, const TrainerState& state) {
  NamedTensors out;
  for (auto& [name, t] : bundle.flatten()) out[kModelPrefix + name] = t;
  for (const auto& [opt, s] : state.optimizers) {
    const auto base = kAdamPrefix + opt + "/";
    out[base + "step"] = Tensor::scalar(static_cast<double>(s.step));
    for (const auto& [k, t] : s.m) out[base + "m/" + k] = t;
    for (const auto& [k, t] : s.v) out[base + "v/" + k] = t;
  }
  out["meta/iteration"] = Tensor::scalar(static_cast<double>(state.iteration));
  out["meta/seg_iteration"] = Tensor::scalar(static_cast<double>(state.seg_iteration));
  TrainConfig c;
  c.net = bundle.config;
  out["meta/net"] = text_tensor(config_to_text(c));
  return encode_named_tensors(out);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const auto all = decode_named_tensors(bytes);
  const auto net = parse_config(tensor_text(required(all, "meta/net"))).net;
  Checkpoint ck{make_bundle(net), {}};
  NamedTensors model;
  for (const auto& [name, t] : all) {
    if (starts_with(name, kModelPrefix)) {
      model[name.substr(std::string(kModelPrefix).size())] = t;
    } else if (starts_with(name, kAdamPrefix)) {
      const auto rest = name.substr(std::string(kAdamPrefix).size());
      const auto slash = rest.find('/');
      if (slash == std::string::npos) throw ParseError("malformed optimizer entry '" + name + "'", 0);
      auto& s = ck.state.optimizers[rest.substr(0, slash)];
      const auto tail = rest.substr(slash + 1);
      if (tail == "step") s.step = static_cast<std::int64_t>(t.item());
      else if (starts_with(tail, "m/")) s.m[tail.substr(2)] = t;
      else if (starts_with(tail, "v/")) s.v[tail.substr(2)] = t;
      else throw ParseError("malformed optimizer entry '" + name + "'", 0);
    }
  }
  ck.bundle.assign_flat(model);
  ck.state.iteration = static_cast<std::int64_t>(required(all, "meta/iteration").item());
  ck.state.seg_iteration = static_cast<std::int64_t>(required(all, "meta/seg_iteration").item());
  return ck;
}

void save_checkpoint(const std::string& path, const ModelBundle& bundle, const TrainerState& state) {
  write_file_bytes(path, encode_checkpoint(bundle, state));
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const ParseError& e) {
    throw e.prefixed(path);
  }
}

}  // namespace wdgda
