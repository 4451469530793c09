#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>

#include "test_util.hpp"
#include "wdgda/training.hpp"

using namespace wdgda;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.net.patch_depth = 2;
  c.net.patch_height = 8;
  c.net.patch_width = 8;
  c.net.content_channels = 2;
  c.net.style_dim = 2;
  c.net.width = 2;
  c.net.res_blocks = 1;
  c.net.mlp_hidden = 3;
  c.net.critic_width = 2;
  c.net.critic_stages = 2;
  c.net.content_disc_width = 2;
  c.net.seg_width = 4;
  c.net.seg_growth = 2;
  c.net.seg_blocks = 1;
  c.net.seg_layers = 1;
  c.net.init_std = 0.2;
  c.learning_rate = 1e-3;
  c.batch = 2;
  c.cases_per_domain = 4;
  c.volume_dims = {3, 12, 12};
  c.folds = 2;
  c.adapt_iterations = 6;
  c.seg_iterations = 4;
  return c;
}

struct Fixture {
  TrainConfig config = small_config();
  PhantomSets data = make_phantom_sets(config);
  PatchStream sx{data.x, config.patch_dims(), 11, true, DType::F64};
  PatchStream sy{data.y, config.patch_dims(), 12, true, DType::F64};
};

bool same_bits(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (std::memcmp(&a.data()[static_cast<std::size_t>(i)], &b.data()[static_cast<std::size_t>(i)], sizeof(double)) != 0)
      return false;
  return true;
}

bool group_unchanged(const ParamGroup& a, const ParamGroup& b) {
  for (const auto& [name, t] : a)
    if (!same_bits(t, b.at(name))) return false;
  return true;
}

std::string csv(const std::vector<LossReport>& rows) {
  std::string s = LossReport::csv_header() + "\n";
  for (const auto& r : rows) s += r.csv_row() + "\n";
  return s;
}

}  // namespace

TEST_CASE("config text round-trips and rejects unknown keys") {
  auto c = small_config();
  c.mode = ExperimentMode::MultimodalTarget;
  c.net.critic_kind = CriticKind::Linear;
  c.net.seg_input = SegInput::ContentImage;
  c.net.dtype = DType::F32;
  c.weights.alpha = 7.25;
  c.seed = 0xffffffffffffffffull;
  const auto text = config_to_text(c);
  const auto back = parse_config(text);
  CHECK(config_to_text(back) == text);
  CHECK(back.seed == c.seed);
  CHECK(back.weights.alpha == 7.25);

  const auto p = parse_config("# comment\n  batch = 4   # trailing\n\nlearning_rate=0.5\n");
  CHECK(p.batch == 4);
  CHECK(p.learning_rate == 0.5);
  CHECK(p.adapt_iterations == 2000);

  CHECK_THROWS_AS(parse_config("bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("batch = two\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("batch 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("mode = nope\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("mirror_latent = maybe\n"), ConfigError);
  try {
    parse_config("batch = 1\nlambda_cycle = 2\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("lambda_cycle") != std::string::npos);
  }
}

TEST_CASE("spec defaults") {
  TrainConfig c;
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.beta1 == 0.9);
  CHECK(c.beta2 == 0.999);
  CHECK(c.adam_eps == 1e-8);
  CHECK(c.content_disc_period == 3);
  CHECK(c.adapt_iterations == 2000);
  CHECK(c.seg_iterations == 1000);
  CHECK(c.batch == 2);
  CHECK(c.folds == 5);
  CHECK_NOTHROW(c.validate());
  c.folds = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("adam matches a scalar reference over two steps") {
  NetConfig net;
  net.patch_depth = net.patch_height = net.patch_width = 1;
  net.critic_kind = CriticKind::Linear;
  auto bundle = make_bundle(net);
  const double w0 = 0.3;
  bundle.groups["critic_X"]["w"] = Tensor::full({1, 1, 1, 1, 1}, w0, DType::F64, true);
  AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  AdamState st;
  const double g1 = 0.7, g2 = -1.9;

  // reference
  double w = w0, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? g1 : g2;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    w -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    if (t == 1) CHECK(w == doctest::Approx(w0 - 0.01 * g1 / (std::abs(g1) + 1e-8)).epsilon(1e-14));
  }

  for (double g : {g1, g2}) {
    const auto& p = bundle.param("critic_X", "w");
    GradientMap grads;
    grads[p.id()] = Tensor::full(p.shape(), g);
    adam_step(bundle, {"critic_X"}, grads, st, cfg);
  }
  CHECK(std::abs(bundle.param("critic_X", "w").item() - w) < 1e-12);
  CHECK(st.step == 2);
  CHECK(std::abs(st.m.at("critic_X/w").item() - m) < 1e-15);
  CHECK(std::abs(st.v.at("critic_X/w").item() - v) < 1e-15);
}

TEST_CASE("adam: zero lr and missing gradients keep parameters bit-identical") {
  auto c = small_config();
  auto bundle = make_bundle(c.net);
  const auto before = bundle.flatten();
  AdamState st;
  GradientMap grads;
  for (const auto& [name, p] : bundle.group("dec_X")) grads[p.id()] = Tensor::full(p.shape(), 3.0);
  adam_step(bundle, {"dec_X"}, grads, st, AdamConfig{0.0});
  adam_step(bundle, {"critic_Y"}, {}, st, AdamConfig{0.1});
  for (const auto& [name, t] : bundle.flatten()) CHECK_MESSAGE(same_bits(t, before.at(name)), name);
  CHECK_THROWS_AS(adam_step(bundle, {"no_such_group"}, {}, st, AdamConfig{}), InvariantError);
}

TEST_CASE("adam: a NaN gradient aborts naming the parameter") {
  auto bundle = make_bundle(small_config().net);
  const auto& p = bundle.param("dec_Y", "up1.w");
  GradientMap grads;
  std::vector<double> g(static_cast<std::size_t>(p.numel()), 0.0);
  g[3] = std::numeric_limits<double>::quiet_NaN();
  grads[p.id()] = Tensor::from_data(p.shape(), g);
  AdamState st;
  try {
    adam_step(bundle, {"dec_Y"}, grads, st, AdamConfig{});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("dec_Y/up1.w") != std::string::npos);
  }
}

TEST_CASE("patch streams are pure in the iteration and honour limits") {
  Fixture f;
  const auto a = f.sx.batch(5, 3).value();
  const auto b = f.sx.batch(5, 3).value();
  CHECK(same_bits(a.images, b.images));
  CHECK(same_bits(a.masks, b.masks));
  CHECK(a.images.shape() == Shape{3, 1, 2, 8, 8});
  CHECK_FALSE(same_bits(a.images, f.sx.batch(6, 3)->images));

  PatchStream limited(f.data.x, f.config.patch_dims(), 11, true, DType::F64, 4);
  CHECK(limited.batch(3, 2).has_value());
  CHECK_FALSE(limited.batch(4, 2).has_value());

  PatchStream fixed(f.data.x, f.config.patch_dims(), 11, true, DType::F64, std::nullopt, true);
  CHECK(same_bits(fixed.batch(0, 2)->images, fixed.batch(9, 2)->images));

  for (std::int64_t i = 0; i < 10; ++i) {
    const auto batch = f.sx.batch(i, 2).value();
    for (double m : batch.masks.data()) CHECK((m == 0.0 || m == 1.0));
  }

  std::vector<Case> too_small{f.data.x[0]};
  CHECK_THROWS_AS(PatchStream(too_small, {4, 8, 8}, 1, false), ShapeError);
  CHECK_THROWS_AS(PatchStream({}, {2, 8, 8}, 1, false), ConfigError);
}

TEST_CASE("prefetch yields the single-threaded sequence") {
  Fixture f;
  for (int threads : {0, 1, 3}) {
    Prefetcher p(f.sy, 2, 9, 2, threads, 2);
    for (std::int64_t i = 2; i < 9; ++i) {
      auto got = p.next();
      REQUIRE(got.has_value());
      CHECK(same_bits(got->images, f.sy.batch(i, 2)->images));
    }
    CHECK_FALSE(p.next().has_value());
  }
  PatchStream limited(f.data.y, f.config.patch_dims(), 3, false, DType::F64, 3);
  Prefetcher p(limited, 0, 10, 1, 2);
  int n = 0;
  while (p.next()) ++n;
  CHECK(n == 3);
}

TEST_CASE("WDGDA_THREADS is validated") {
  ::setenv("WDGDA_THREADS", "3", 1);
  CHECK(prefetch_threads() == 3);
  ::setenv("WDGDA_THREADS", "many", 1);
  CHECK_THROWS_AS(prefetch_threads(), ConfigError);
  ::unsetenv("WDGDA_THREADS");
  CHECK(prefetch_threads() == 1);
}

TEST_CASE("schedule: content discriminator alone on multiples of the period") {
  Fixture f;
  auto bundle = make_bundle(f.config.net);
  TrainerState st;
  for (std::int64_t i = 0; i < 9; ++i) {
    const auto before = bundle.groups;
    const auto rows = train_adaptation(f.config, f.sx, f.sy, bundle, st, i + 1);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].step == i);
    for (const auto& [gname, group] : bundle.groups) {
      const bool changed = !group_unchanged(before.at(gname), group);
      bool expected;
      if (i % 3 == 0) expected = gname == "content_disc";
      else expected = gname != "content_disc" && gname != "seg_head";
      CHECK_MESSAGE(changed == expected, "iteration " << i << " group " << gname);
    }
    CHECK(rows[0].updated == (i % 3 == 0 ? "content_disc" : "critics+generators"));
    CHECK(rows[0].total == total_loss(f.config.weights, rows[0]));
  }
  CHECK(st.optimizers.at("content_disc").step == 3);
  CHECK(st.optimizers.at("critics").step == 6);
  CHECK(st.optimizers.at("generators").step == 6);
}

TEST_CASE("zero learning rate on a fixed batch logs constant losses") {
  auto c = small_config();
  c.learning_rate = 0.0;
  const auto data = make_phantom_sets(c);
  PatchStream sx(data.x, c.patch_dims(), 1, true, DType::F64, std::nullopt, true);
  PatchStream sy(data.y, c.patch_dims(), 2, true, DType::F64, std::nullopt, true);
  auto bundle = make_bundle(c.net);
  const auto before = bundle.flatten();
  TrainerState st;
  const auto rows = train_adaptation(c, sx, sy, bundle, st, 7);
  REQUIRE(rows.size() == 7);
  for (const auto& r : rows) {
    CHECK(r.recon_x == rows[0].recon_x);
    CHECK(r.recon_y == rows[0].recon_y);
    CHECK(r.latent_c == rows[0].latent_c);
    CHECK(r.latent_s == rows[0].latent_s);
    CHECK(r.cyc == rows[0].cyc);
    CHECK(r.wgan_x == rows[0].wgan_x);
    CHECK(r.wgan_y == rows[0].wgan_y);
    CHECK(r.content_adv == rows[0].content_adv);
    CHECK(r.total == rows[0].total);
  }
  for (const auto& [name, t] : bundle.flatten()) CHECK_MESSAGE(same_bits(t, before.at(name)), name);
}

TEST_CASE("adaptation reduces reconstruction error") {
  auto c = small_config();
  c.learning_rate = 3e-3;
  const auto data = make_phantom_sets(c);
  PatchStream sx(data.x, c.patch_dims(), 1, false, DType::F64, std::nullopt, true);
  PatchStream sy(data.y, c.patch_dims(), 2, false, DType::F64, std::nullopt, true);
  auto bundle = make_bundle(c.net);
  TrainerState st;
  const auto rows = train_adaptation(c, sx, sy, bundle, st, 60);
  CHECK(rows.back().recon_x + rows.back().recon_y < 0.8 * (rows.front().recon_x + rows.front().recon_y));
}

TEST_CASE("determinism and bit-identical resume") {
  Fixture f;
  auto run = [&](bool split) {
    auto bundle = make_bundle(f.config.net);
    TrainerState st;
    auto rows = train_adaptation(f.config, f.sx, f.sy, bundle, st, split ? 10 : 22);
    if (split) {
      auto ck = decode_checkpoint(encode_checkpoint(bundle, st));
      CHECK(ck.state.iteration == 10);
      auto more = train_adaptation(f.config, f.sx, f.sy, ck.bundle, ck.state, 22);
      rows.insert(rows.end(), more.begin(), more.end());
      bundle = ck.bundle;
    }
    return std::make_pair(csv(rows), bundle.flatten());
  };
  const auto a = run(false);
  const auto b = run(false);
  const auto r = run(true);
  CHECK(a.first == b.first);
  CHECK(a.first == r.first);
  for (const auto& [name, t] : a.second) CHECK_MESSAGE(same_bits(t, r.second.at(name)), name);
}

TEST_CASE("checkpoint round trip and structured errors") {
  Fixture f;
  auto bundle = make_bundle(f.config.net);
  TrainerState st;
  train_adaptation(f.config, f.sx, f.sy, bundle, st, 3);
  st.seg_iteration = 7;
  const auto bytes = encode_checkpoint(bundle, st);
  const auto ck = decode_checkpoint(bytes);
  CHECK(ck.state.iteration == 3);
  CHECK(ck.state.seg_iteration == 7);
  CHECK(ck.state.optimizers.at("critics").step == 2);
  CHECK(ck.bundle.config.patch_height == 8);
  CHECK(ck.bundle.config.seg_width == 4);
  for (const auto& [name, t] : bundle.flatten()) CHECK(same_bits(t, ck.bundle.flatten().at(name)));
  for (const auto& [k, t] : st.optimizers.at("generators").m)
    CHECK(same_bits(t, ck.state.optimizers.at("generators").m.at(k)));

  auto entries = decode_named_tensors(bytes);
  entries.erase("model/dec_X/up0.w");
  try {
    decode_checkpoint(encode_named_tensors(entries));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("dec_X/up0.w") != std::string::npos);
  }
  entries = decode_named_tensors(bytes);
  entries.erase("meta/iteration");
  CHECK_THROWS_AS(decode_checkpoint(encode_named_tensors(entries)), ConfigError);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);
  auto cut = bytes;
  cut.resize(cut.size() / 2);
  CHECK_THROWS_AS(decode_checkpoint(cut), ParseError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/ck.wdgc"), IoError);
}

TEST_CASE("critic alone converges to the soft-penalty optimum 3 + 9/(2 alpha)") {
  // one-voxel point masses at 3 (real) and 0 (fake): maximizing
  // 3g - alpha (g - 1)^2 over the critic slope g gives g = 1 + 3/(2 alpha)
  for (double alpha : {10.0, 20.0}) {
    NetConfig net;
    net.patch_depth = net.patch_height = net.patch_width = 1;
    auto bundle = make_bundle(net);
    AdamState st;
    const auto real = Tensor::full({4, 1, 1, 1, 1}, 3.0);
    const auto fake = Tensor::zeros({4, 1, 1, 1, 1});
    double gap = 0.0;
    for (int s = 0; s < 500; ++s) {
      const auto c = wgan_critic_loss(bundle, Domain::X, real, fake, alpha, static_cast<std::uint64_t>(s));
      adam_step(bundle, {"critic_X"}, backward(c.critic_loss), st, AdamConfig{1e-2});
      gap = c.wasserstein;
    }
    CHECK(gap == doctest::Approx(3.0 + 9.0 / (2.0 * alpha)).epsilon(1e-3));
  }
}

TEST_CASE("segmentation training lowers the loss and scores volumes") {
  auto c = small_config();
  c.seg_learning_rate = 1e-2;
  c.eval_every = 20;
  const auto data = make_phantom_sets(c);
  PatchStream sx(data.x, c.patch_dims(), 5, true);
  auto bundle = make_bundle(c.net);
  TrainerState st;
  const auto rows = train_segmentation(c, {{&sx, Domain::X}}, bundle, st, 41, &data.x, Domain::X);
  REQUIRE(rows.size() == 41);
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) {
    first += rows[static_cast<std::size_t>(i)].loss;
    last += rows[rows.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  CHECK(last < first);
  CHECK(rows[0].dice >= 0.0);
  CHECK(rows[20].dice >= 0.0);
  CHECK(rows[1].dice < 0.0);
  CHECK(st.seg_iteration == 41);

  const auto prob = predict_volume(bundle, Domain::X, data.x[0].volume);
  CHECK(static_cast<std::int64_t>(prob.size()) == data.x[0].volume.size());
  for (double p : prob) CHECK((p >= 0.0 && p <= 1.0));
  const auto scores = evaluate_cases(bundle, Domain::X, data.x);
  CHECK(scores.size() == data.x.size());
  for (const auto& s : scores) CHECK(s.jaccard == doctest::Approx(s.dice / (2.0 - s.dice)).epsilon(1e-12));

  PatchStream unlabelled({Case{"u", data.x[0].volume, Mask{}}}, c.patch_dims(), 1, false);
  TrainerState st2;
  CHECK_THROWS_AS(train_segmentation(c, {{&unlabelled, Domain::X}}, bundle, st2, 1), ConfigError);
}

TEST_CASE("content export and content distance") {
  auto c = small_config();
  const auto data = make_phantom_sets(c);
  auto bundle = make_bundle(c.net);
  const auto out = export_content(bundle, Domain::Y, data.y[0].volume);
  CHECK(out.dims == data.y[0].volume.dims);
  CHECK_NOTHROW(out.validate());

  // identical encoders on identical volumes give zero distance
  bundle.groups["enc_content_Y"] = bundle.groups["enc_content_X"];
  const auto d = content_distance(bundle, {data.x[0]}, {data.x[0]});
  CHECK(d.l1 == 0.0);
  CHECK(d.magnitude > 0.0);
  const auto e = content_distance(bundle, {data.x[0]}, {data.y[0]});
  CHECK(e.l1 > 0.0);
  CHECK_THROWS_AS(content_distance(bundle, {data.x[0]}, {}), ConfigError);
}

TEST_CASE("experiment report and phantom sets") {
  auto c = small_config();
  const auto sets = make_phantom_sets(c);
  REQUIRE(sets.x.size() == 4);
  CHECK(sets.x[0].id == "x000");
  CHECK(sets.y[3].id == "y003");
  CHECK(sets.x[1].mask.labels != sets.y[1].mask.labels);  // unpaired geometry
  const auto again = make_phantom_sets(c);
  CHECK(again.y[2].volume.voxels == sets.y[2].volume.voxels);

  ExperimentReport r;
  r.folds = {{0, 0.5, 1.0 / 3.0, {}}, {1, 0.7, 0.5, {}}};
  CHECK(r.mean_dice() == doctest::Approx(0.6));
  CHECK(r.std_dice() == doctest::Approx(std::sqrt(0.02)));
  const auto text = r.to_csv();
  CHECK(text.rfind("fold,split,dice,jaccard\n0,target_test,0.5,", 0) == 0);
  CHECK(text.find("\nmean,target_test,0.59999999999999998,") != std::string::npos);

  c.adapt_iterations = 2;
  c.seg_iterations = 2;
  for (auto mode : {ExperimentMode::BaselineUnadapted, ExperimentMode::AdaptThenSegJoint}) {
    c.mode = mode;
    const auto report = run_experiment(c, make_phantom_sets(c));
    REQUIRE(report.folds.size() == 2);
    std::size_t tested = 0;
    for (const auto& fold : report.folds) tested += fold.cases.size();
    CHECK(tested == 4);
  }
  CHECK(parse_mode("multimodal_target") == ExperimentMode::MultimodalTarget);
  CHECK(std::string(mode_name(ExperimentMode::BaselineUnadapted)) == "baseline_unadapted");
}
