#include "wdgda/networks.hpp"

#include <cmath>
#include <random>

namespace wdgda {

const char* domain_name(Domain d) { return d == Domain::X ? "X" : "Y"; }

std::string content_encoder_group(Domain d) { return std::string("enc_content_") + domain_name(d); }
std::string style_encoder_group(Domain d) { return std::string("enc_style_") + domain_name(d); }
std::string decoder_group(Domain d) { return std::string("dec_") + domain_name(d); }
std::string critic_group(Domain d) { return std::string("critic_") + domain_name(d); }

void NetConfig::validate() const {
  auto positive = [](std::int64_t v, const char* what) {
    if (v <= 0) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(patch_depth, "patch_depth");
  positive(patch_height, "patch_height");
  positive(patch_width, "patch_width");
  positive(content_channels, "content_channels");
  positive(style_dim, "style_dim");
  positive(width, "width");
  positive(mlp_hidden, "mlp_hidden");
  positive(critic_width, "critic_width");
  positive(critic_stages, "critic_stages");
  positive(content_disc_width, "content_disc_width");
  positive(seg_width, "seg_width");
  positive(seg_growth, "seg_growth");
  positive(seg_blocks, "seg_blocks");
  positive(seg_layers, "seg_layers");
  if (res_blocks < 0) throw ConfigError("res_blocks must be >= 0");
  if (width > 16 || critic_width > 16 || content_disc_width > 32 || seg_width > 32) {
    // widest layers are 2*width
    throw ConfigError("network widths are capped at 32 channels");
  }
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
  if (!(decoder_output_scale > 0.0)) throw ConfigError("decoder_output_scale must be positive");
}

// ---------------------------------------------------------------------------
// Bundle

const ParamGroup& ModelBundle::group(const std::string& name) const {
  auto it = groups.find(name);
  if (it == groups.end()) throw InvariantError("model bundle has no group '" + name + "'");
  return it->second;
}

const Tensor& ModelBundle::param(const std::string& group_name, const std::string& name) const {
  const auto& g = group(group_name);
  auto it = g.find(name);
  if (it == g.end()) {
    throw InvariantError("parameter '" + group_name + "/" + name + "' does not exist");
  }
  return it->second;
}

NamedTensors ModelBundle::flatten() const {
  NamedTensors flat;
  for (const auto& [gname, g] : groups)
    for (const auto& [pname, t] : g) flat.emplace(gname + "/" + pname, t);
  return flat;
}

void ModelBundle::assign_flat(const NamedTensors& flat) {
  std::vector<std::string> missing;
  for (auto& [gname, g] : groups) {
    for (auto& [pname, t] : g) {
      auto it = flat.find(gname + "/" + pname);
      if (it == flat.end()) {
        missing.push_back(gname + "/" + pname);
        continue;
      }
      if (it->second.shape() != t.shape()) {
        throw ShapeError("parameter '" + gname + "/" + pname + "' has shape " +
                         to_string(it->second.shape()) + ", expected " + to_string(t.shape()));
      }
    }
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw ConfigError("checkpoint is missing parameters: " + names);
  }
  for (auto& [gname, g] : groups)
    for (auto& [pname, t] : g) t = flat.at(gname + "/" + pname).to(config.dtype).clone_leaf(true);
}

std::int64_t ModelBundle::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [gname, g] : groups)
    for (const auto& [pname, t] : g) n += t.numel();
  return n;
}

void ModelBundle::check_finite() const {
  for (const auto& [gname, g] : groups)
    for (const auto& [pname, t] : g)
      for (double v : t.data()) {
        if (!std::isfinite(v)) {
          throw NumericError("parameter '" + gname + "/" + pname + "' is not finite");
        }
      }
}

void zero_group(ModelBundle& bundle, const std::string& group) {
  auto it = bundle.groups.find(group);
  if (it == bundle.groups.end()) throw InvariantError("no group '" + group + "'");
  for (auto& [name, t] : it->second) {
    t = Tensor::zeros(t.shape(), t.dtype(), true);
  }
}

namespace {

class ParamBuilder {
 public:
  ParamBuilder(std::mt19937_64& rng, double stddev, DType dtype)
      : rng_(rng), stddev_(stddev), dtype_(dtype) {}

  void conv(ParamGroup& g, const std::string& name, std::int64_t out, std::int64_t in,
            Int3 k = {3, 3, 3}) {
    g[name + ".w"] = normal({out, in, k[0], k[1], k[2]});
    g[name + ".b"] = Tensor::zeros({out}, dtype_, true);
  }

  void linear(ParamGroup& g, const std::string& name, std::int64_t out, std::int64_t in) {
    g[name + ".w"] = normal({out, in});
    g[name + ".b"] = Tensor::zeros({out}, dtype_, true);
  }

  Tensor normal(const Shape& shape) {
    std::normal_distribution<double> dist(0.0, stddev_);
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) {
      do {
        x = dist(rng_);
      } while (std::fabs(x) > 2.0 * stddev_);
    }
    return Tensor::from_data(shape, std::move(v), dtype_, true);
  }

 private:
  std::mt19937_64& rng_;
  double stddev_;
  DType dtype_;
};

std::int64_t seg_in_channels(const NetConfig& c) {
  return c.seg_input == SegInput::ContentCode ? c.content_channels : 1;
}

std::int64_t seg_upsample_stages(const NetConfig& c) {
  return c.seg_input == SegInput::ContentCode ? 2 : 0;
}

ParamGroup build_content_encoder(const NetConfig& c, ParamBuilder& pb) {
  ParamGroup g;
  const auto w1 = c.width, w2 = 2 * c.width;
  pb.conv(g, "down0", w1, 1);
  pb.conv(g, "down1", w2, w1);
  pb.conv(g, "down2", w2, w2);
  for (std::int64_t r = 0; r < c.res_blocks; ++r) {
    pb.conv(g, "res" + std::to_string(r) + ".a", w2, w2);
    pb.conv(g, "res" + std::to_string(r) + ".b", w2, w2);
  }
  pb.conv(g, "out", c.content_channels, w2, {1, 1, 1});
  return g;
}

ParamGroup build_style_encoder(const NetConfig& c, ParamBuilder& pb) {
  ParamGroup g;
  const auto w1 = c.width, w2 = 2 * c.width;
  pb.conv(g, "down0", w1, 1);
  pb.conv(g, "down1", w2, w1);
  pb.conv(g, "down2", w2, w2);
  pb.linear(g, "fc", c.style_dim, w2);
  return g;
}

std::int64_t adain_layers(const NetConfig& c) { return 2 * c.res_blocks; }

ParamGroup build_decoder(const NetConfig& c, ParamBuilder& pb) {
  ParamGroup g;
  const auto w1 = c.width, w2 = 2 * c.width;
  pb.conv(g, "in", w2, c.content_channels, {1, 1, 1});
  for (std::int64_t r = 0; r < c.res_blocks; ++r) {
    pb.conv(g, "res" + std::to_string(r) + ".a", w2, w2);
    pb.conv(g, "res" + std::to_string(r) + ".b", w2, w2);
  }
  pb.linear(g, "mlp0", c.mlp_hidden, c.style_dim);
  pb.linear(g, "mlp1", std::max<std::int64_t>(1, 2 * adain_layers(c) * w2), c.mlp_hidden);
  pb.conv(g, "up0", w1, w2);
  pb.conv(g, "up1", w1, w1);
  pb.conv(g, "out", 1, w1);
  return g;
}

ParamGroup build_critic(const NetConfig& c, ParamBuilder& pb) {
  ParamGroup g;
  if (c.critic_kind == CriticKind::Linear) {
    g["w"] = pb.normal({1, 1, c.patch_depth, c.patch_height, c.patch_width});
    return g;
  }
  std::int64_t in = 1, width = c.critic_width;
  for (std::int64_t s = 0; s + 1 < c.critic_stages; ++s) {
    pb.conv(g, "conv" + std::to_string(s), width, in);
    in = width;
    width = std::min<std::int64_t>(2 * width, 32);
  }
  pb.conv(g, "conv" + std::to_string(c.critic_stages - 1), 1, in);
  return g;
}

ParamGroup build_content_disc(const NetConfig& c, ParamBuilder& pb) {
  ParamGroup g;
  pb.conv(g, "conv0", c.content_disc_width, c.content_channels);
  pb.conv(g, "conv1", c.content_disc_width, c.content_disc_width);
  pb.conv(g, "out", 1, c.content_disc_width, {1, 1, 1});
  return g;
}

ParamGroup build_seg_head(const NetConfig& c, ParamBuilder& pb) {
  ParamGroup g;
  pb.conv(g, "stem", c.seg_width, seg_in_channels(c));
  for (std::int64_t b = 0; b < c.seg_blocks; ++b) {
    std::int64_t channels = c.seg_width;
    for (std::int64_t l = 0; l < c.seg_layers; ++l) {
      pb.conv(g, "block" + std::to_string(b) + ".layer" + std::to_string(l), c.seg_growth,
              channels);
      channels += c.seg_growth;
    }
    pb.conv(g, "block" + std::to_string(b) + ".transition", c.seg_width, channels, {1, 1, 1});
  }
  pb.conv(g, "out", 2, c.seg_width, {1, 1, 1});
  return g;
}

// ---------------------------------------------------------------------------
// Forward helpers

Tensor conv(const ParamGroup& g, const std::string& name, const Tensor& x, Int3 stride = {1, 1, 1}) {
  const auto& w = g.at(name + ".w");
  const Int3 pad{w.dim(2) / 2, w.dim(3) / 2, w.dim(4) / 2};
  auto y = conv3d(x, w, stride, pad);
  const auto& b = g.at(name + ".b");
  return add(y, reshape(b, {1, b.dim(0), 1, 1, 1}));
}

Tensor fc(const ParamGroup& g, const std::string& name, const Tensor& x) {
  return linear(x, g.at(name + ".w"), g.at(name + ".b"));
}

constexpr Int3 kDown{1, 2, 2};
constexpr Int3 kUp{1, 2, 2};

void check_patch(const NetConfig& c, const Tensor& x, const char* who) {
  if (x.rank() != 5 || x.dim(1) != 1 || x.dim(2) != c.patch_depth ||
      x.dim(3) != c.patch_height || x.dim(4) != c.patch_width) {
    throw ShapeError(std::string(who) + ": expected patch [N,1," + std::to_string(c.patch_depth) +
                     "," + std::to_string(c.patch_height) + "," + std::to_string(c.patch_width) +
                     "], got " + to_string(x.shape()));
  }
}

void check_translatable(const NetConfig& c, const char* who) {
  if (c.patch_height % 4 || c.patch_width % 4) {
    throw ShapeError(std::string(who) + ": patch height and width must be multiples of 4, got " +
                     std::to_string(c.patch_height) + "x" + std::to_string(c.patch_width));
  }
}

void check_content(const NetConfig& c, const Tensor& z, const char* who) {
  if (z.rank() != 5 || z.shape() != c.content_shape(z.dim(0))) {
    throw ShapeError(std::string(who) + ": expected content " + to_string(c.content_shape(1)) +
                     " (any batch), got " + to_string(z.shape()));
  }
}

Tensor global_mean(const Tensor& x) {
  return reshape(mean_over(x, {1, 2, 3, 4}), {x.dim(0)});
}

}  // namespace

ModelBundle make_bundle(const NetConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.init_seed);
  ParamBuilder pb(rng, config.init_std, config.dtype);
  ModelBundle bundle;
  bundle.config = config;
  for (Domain d : {Domain::X, Domain::Y}) {
    bundle.groups[content_encoder_group(d)] = build_content_encoder(config, pb);
  }
  for (Domain d : {Domain::X, Domain::Y}) {
    bundle.groups[style_encoder_group(d)] = build_style_encoder(config, pb);
  }
  for (Domain d : {Domain::X, Domain::Y}) bundle.groups[decoder_group(d)] = build_decoder(config, pb);
  for (Domain d : {Domain::X, Domain::Y}) bundle.groups[critic_group(d)] = build_critic(config, pb);
  bundle.groups["content_disc"] = build_content_disc(config, pb);
  bundle.groups["seg_head"] = build_seg_head(config, pb);
  return bundle;
}

Tensor encode_content(const ModelBundle& bundle, Domain domain, const Tensor& x) {
  const auto& c = bundle.config;
  check_translatable(c, "encode_content");
  check_patch(c, x, "encode_content");
  const auto& g = bundle.group(content_encoder_group(domain));
  auto h = relu(instance_norm(conv(g, "down0", x)));
  h = relu(instance_norm(conv(g, "down1", h, kDown)));
  h = relu(instance_norm(conv(g, "down2", h, kDown)));
  for (std::int64_t r = 0; r < c.res_blocks; ++r) {
    const auto p = "res" + std::to_string(r);
    auto y = relu(instance_norm(conv(g, p + ".a", h)));
    y = instance_norm(conv(g, p + ".b", y));
    h = add(h, y);
  }
  return conv(g, "out", h);
}

Tensor encode_style(const ModelBundle& bundle, Domain domain, const Tensor& x) {
  const auto& c = bundle.config;
  check_translatable(c, "encode_style");
  check_patch(c, x, "encode_style");
  const auto& g = bundle.group(style_encoder_group(domain));
  auto h = relu(conv(g, "down0", x));
  h = relu(conv(g, "down1", h, kDown));
  h = relu(conv(g, "down2", h, kDown));
  auto pooled = reshape(mean_over(h, {2, 3, 4}), {h.dim(0), h.dim(1)});
  return fc(g, "fc", pooled);
}

Tensor decode(const ModelBundle& bundle, Domain domain, const Tensor& content, const Tensor& style) {
  const auto& c = bundle.config;
  check_translatable(c, "decode");
  check_content(c, content, "decode");
  const auto n = content.dim(0);
  if (style.shape() != Shape{n, c.style_dim}) {
    throw ShapeError("decode: style must be [" + std::to_string(n) + "," +
                     std::to_string(c.style_dim) + "], got " + to_string(style.shape()));
  }
  const auto& g = bundle.group(decoder_group(domain));
  const auto w2 = 2 * c.width;

  // style -> per-layer AdaIN scale/shift
  auto ada = fc(g, "mlp1", relu(fc(g, "mlp0", style)));
  std::int64_t slot = 0;
  auto next_affine = [&]() {
    auto s = slice(ada, 1, slot * w2, w2);
    auto b = slice(ada, 1, (slot + 1) * w2, w2);
    slot += 2;
    return std::make_pair(add_scalar(s, 1.0), b);
  };

  auto h = conv(g, "in", content);
  for (std::int64_t r = 0; r < c.res_blocks; ++r) {
    const auto p = "res" + std::to_string(r);
    auto [s1, b1] = next_affine();
    auto y = relu(adaptive_instance_norm(conv(g, p + ".a", h), s1, b1));
    auto [s2, b2] = next_affine();
    y = adaptive_instance_norm(conv(g, p + ".b", y), s2, b2);
    h = add(h, y);
  }
  h = relu(conv(g, "up0", upsample3d_nearest(h, kUp)));
  h = relu(conv(g, "up1", upsample3d_nearest(h, kUp)));
  return scale(tanh(conv(g, "out", h)), c.decoder_output_scale);
}

Tensor critic(const ModelBundle& bundle, Domain domain, const Tensor& image) {
  const auto& c = bundle.config;
  check_patch(c, image, "critic");
  const auto& g = bundle.group(critic_group(domain));
  if (c.critic_kind == CriticKind::Linear) {
    return reshape(sum_over(mul(image, g.at("w")), {1, 2, 3, 4}), {image.dim(0)});
  }
  auto h = image;
  for (std::int64_t s = 0; s + 1 < c.critic_stages; ++s) {
    h = leaky_relu(conv(g, "conv" + std::to_string(s), h, kDown), 0.2);
  }
  h = conv(g, "conv" + std::to_string(c.critic_stages - 1), h);
  return global_mean(h);
}

Tensor content_discriminate(const ModelBundle& bundle, const Tensor& content) {
  check_translatable(bundle.config, "content_discriminate");
  check_content(bundle.config, content, "content_discriminate");
  const auto& g = bundle.group("content_disc");
  auto h = leaky_relu(conv(g, "conv0", content), 0.2);
  h = leaky_relu(conv(g, "conv1", h, kDown), 0.2);
  return sigmoid(global_mean(conv(g, "out", h)));
}

Tensor content_only_image(const ModelBundle& bundle, Domain domain, const Tensor& content) {
  const auto n = content.dim(0);
  auto zero_style = Tensor::zeros({n, bundle.config.style_dim}, content.dtype());
  return decode(bundle, domain, content, zero_style);
}

Tensor segment(const ModelBundle& bundle, const Tensor& features,
               std::vector<std::int64_t>* layer_inputs) {
  const auto& c = bundle.config;
  const auto stages = seg_upsample_stages(c);
  const auto expected_in = seg_in_channels(c);
  const auto scale_hw = std::int64_t{1} << stages;
  if (features.rank() != 5 || features.dim(1) != expected_in ||
      features.dim(2) != c.patch_depth || features.dim(3) * scale_hw != c.patch_height ||
      features.dim(4) * scale_hw != c.patch_width) {
    throw ShapeError("segment: features " + to_string(features.shape()) +
                     " do not match the configured head input (" +
                     std::to_string(expected_in) + " channels, spatial /" +
                     std::to_string(scale_hw) + ")");
  }
  const auto& g = bundle.group("seg_head");
  auto h = conv(g, "stem", features);
  std::int64_t upsampled = 0;
  for (std::int64_t b = 0; b < c.seg_blocks; ++b) {
    const auto p = "block" + std::to_string(b);
    for (std::int64_t l = 0; l < c.seg_layers; ++l) {
      if (layer_inputs) layer_inputs->push_back(h.dim(1));
      auto fresh = conv(g, p + ".layer" + std::to_string(l), relu(instance_norm(h)));
      h = concat({h, fresh}, 1);
    }
    h = conv(g, p + ".transition", relu(instance_norm(h)));
    if (upsampled < stages) {
      h = upsample3d_nearest(h, kUp);
      ++upsampled;
    }
  }
  for (; upsampled < stages; ++upsampled) h = upsample3d_nearest(h, kUp);
  return conv(g, "out", relu(h));
}

Tensor segmentation_features(const ModelBundle& bundle, Domain domain, const Tensor& image) {
  switch (bundle.config.seg_input) {
    case SegInput::ContentCode:
      return encode_content(bundle, domain, image);
    case SegInput::ContentImage:
      return content_only_image(bundle, domain, encode_content(bundle, domain, image));
    case SegInput::RawImage:
      check_patch(bundle.config, image, "segmentation_features");
      return image;
  }
  throw InvariantError("unknown segmentation input mode");
}

}  // namespace wdgda
