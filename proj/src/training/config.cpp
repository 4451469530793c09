#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>
#include <string_view>

#include "wdgda/binary_io.hpp"
#include "wdgda/training.hpp"

namespace wdgda {

namespace {

struct ModeName {
  ExperimentMode mode;
  const char* name;
};

constexpr ModeName kModes[] = {
    {ExperimentMode::AdaptThenSegSourceOnly, "adapt_then_seg_source_only"},
    {ExperimentMode::AdaptThenSegJoint, "adapt_then_seg_joint"},
    {ExperimentMode::MultimodalTarget, "multimodal_target"},
    {ExperimentMode::BaselineUnadapted, "baseline_unadapted"},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) throw ConfigError("not a number: '" + v + "'");
  return out;
}

std::int64_t to_int(const std::string& v) {
  std::int64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("not an integer: '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("not an unsigned integer: '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("not a boolean: '" + v + "'");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Key {
  const char* name;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define WDGDA_INT(key, field)                                                        \
  Key {                                                                              \
    key, [](TrainConfig& c, const std::string& v) { c.field = to_int(v); },          \
        [](const TrainConfig& c) { return std::to_string(c.field); }                 \
  }
#define WDGDA_DBL(key, field)                                                        \
  Key {                                                                              \
    key, [](TrainConfig& c, const std::string& v) { c.field = to_double(v); },       \
        [](const TrainConfig& c) { return fmt(c.field); }                            \
  }
#define WDGDA_BOOL(key, field)                                                       \
  Key {                                                                              \
    key, [](TrainConfig& c, const std::string& v) { c.field = to_bool(v); },         \
        [](const TrainConfig& c) { return fmt_bool(c.field); }                       \
  }
#define WDGDA_UINT(key, field)                                                       \
  Key {                                                                              \
    key, [](TrainConfig& c, const std::string& v) { c.field = to_uint(v); },         \
        [](const TrainConfig& c) { return std::to_string(c.field); }                 \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      WDGDA_INT("patch_depth", net.patch_depth),
      WDGDA_INT("patch_height", net.patch_height),
      WDGDA_INT("patch_width", net.patch_width),
      WDGDA_INT("content_channels", net.content_channels),
      WDGDA_INT("style_dim", net.style_dim),
      WDGDA_INT("width", net.width),
      WDGDA_INT("res_blocks", net.res_blocks),
      WDGDA_INT("mlp_hidden", net.mlp_hidden),
      WDGDA_DBL("decoder_output_scale", net.decoder_output_scale),
      Key{"critic_kind",
          [](TrainConfig& c, const std::string& v) {
            if (v == "conv") c.net.critic_kind = CriticKind::Conv;
            else if (v == "linear") c.net.critic_kind = CriticKind::Linear;
            else throw ConfigError("critic_kind must be conv or linear, got '" + v + "'");
          },
          [](const TrainConfig& c) {
            return std::string(c.net.critic_kind == CriticKind::Conv ? "conv" : "linear");
          }},
      WDGDA_INT("critic_width", net.critic_width),
      WDGDA_INT("critic_stages", net.critic_stages),
      WDGDA_INT("content_disc_width", net.content_disc_width),
      Key{"seg_input",
          [](TrainConfig& c, const std::string& v) {
            if (v == "content_code") c.net.seg_input = SegInput::ContentCode;
            else if (v == "content_image") c.net.seg_input = SegInput::ContentImage;
            else if (v == "raw_image") c.net.seg_input = SegInput::RawImage;
            else throw ConfigError("seg_input must be content_code, content_image or raw_image, got '" + v + "'");
          },
          [](const TrainConfig& c) {
            switch (c.net.seg_input) {
              case SegInput::ContentCode: return std::string("content_code");
              case SegInput::ContentImage: return std::string("content_image");
              default: return std::string("raw_image");
            }
          }},
      WDGDA_INT("seg_width", net.seg_width),
      WDGDA_INT("seg_growth", net.seg_growth),
      WDGDA_INT("seg_blocks", net.seg_blocks),
      WDGDA_INT("seg_layers", net.seg_layers),
      WDGDA_DBL("init_std", net.init_std),
      WDGDA_UINT("init_seed", net.init_seed),
      Key{"dtype",
          [](TrainConfig& c, const std::string& v) {
            if (v == "f32") c.net.dtype = DType::F32;
            else if (v == "f64") c.net.dtype = DType::F64;
            else throw ConfigError("dtype must be f32 or f64, got '" + v + "'");
          },
          [](const TrainConfig& c) { return std::string(c.net.dtype == DType::F32 ? "f32" : "f64"); }},

      WDGDA_DBL("lambda_wgan", weights.lambda_wgan),
      WDGDA_DBL("lambda_recon", weights.lambda_recon),
      WDGDA_DBL("lambda_cyc", weights.lambda_cyc),
      WDGDA_DBL("lambda_latent", weights.lambda_latent),
      WDGDA_DBL("lambda_content", weights.lambda_content),
      WDGDA_DBL("alpha", weights.alpha),

      WDGDA_DBL("learning_rate", learning_rate),
      WDGDA_DBL("seg_learning_rate", seg_learning_rate),
      WDGDA_DBL("beta1", beta1),
      WDGDA_DBL("beta2", beta2),
      WDGDA_DBL("adam_eps", adam_eps),
      WDGDA_INT("content_disc_period", content_disc_period),
      WDGDA_INT("adapt_iterations", adapt_iterations),
      WDGDA_INT("seg_iterations", seg_iterations),
      WDGDA_INT("batch", batch),
      WDGDA_BOOL("mirror_latent", mirror_latent),
      WDGDA_BOOL("augment", augment),
      WDGDA_BOOL("fixed_batches", fixed_batches),
      WDGDA_BOOL("seg_finetune_encoder", seg_finetune_encoder),
      WDGDA_UINT("seed", seed),
      Key{"mode", [](TrainConfig& c, const std::string& v) { c.mode = parse_mode(v); },
          [](const TrainConfig& c) { return std::string(mode_name(c.mode)); }},
      WDGDA_INT("cases_per_domain", cases_per_domain),
      WDGDA_INT("volume_depth", volume_dims[0]),
      WDGDA_INT("volume_height", volume_dims[1]),
      WDGDA_INT("volume_width", volume_dims[2]),
      WDGDA_INT("folds", folds),
      WDGDA_INT("eval_every", eval_every),
  };
  return table;
}

#undef WDGDA_INT
#undef WDGDA_DBL
#undef WDGDA_BOOL
#undef WDGDA_UINT

}  // namespace

const char* mode_name(ExperimentMode m) {
  for (const auto& e : kModes)
    if (e.mode == m) return e.name;
  return "?";
}

ExperimentMode parse_mode(const std::string& s) {
  for (const auto& e : kModes)
    if (s == e.name) return e.mode;
  std::string known;
  for (const auto& e : kModes) known += std::string(known.empty() ? "" : ", ") + e.name;
  throw ConfigError("unknown mode '" + s + "' (expected one of " + known + ")");
}

void TrainConfig::validate() const {
  net.validate();
  weights.validate();
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0)) throw ConfigError(std::string(what) + " must be positive");
  };
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(seg_learning_rate >= 0.0)) throw ConfigError("seg_learning_rate must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  positive(adam_eps, "adam_eps");
  positive(static_cast<double>(content_disc_period), "content_disc_period");
  if (adapt_iterations < 0) throw ConfigError("adapt_iterations must be non-negative");
  if (seg_iterations < 0) throw ConfigError("seg_iterations must be non-negative");
  positive(static_cast<double>(batch), "batch");
  if (folds < 2) throw ConfigError("folds must be at least 2");
  if (cases_per_domain < folds) throw ConfigError("cases_per_domain must be at least folds");
  if (eval_every < 0) throw ConfigError("eval_every must be non-negative");
  for (int a = 0; a < 3; ++a)
    if (volume_dims[a] < patch_dims()[a])
      throw ConfigError("volume dims " + to_string(Shape(volume_dims.begin(), volume_dims.end())) +
                        " smaller than the patch");
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto value = trim(std::string_view(body).substr(eq + 1));
    const Key* match = nullptr;
    for (const auto& k : keys())
      if (key == k.name) match = &k;
    if (!match) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      match->set(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + key + ": " + e.what());
    }
  }
  return base;
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
  const auto bytes = read_file_bytes(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), std::move(base));
}

std::string config_to_text(const TrainConfig& c) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(c) + "\n";
  return out;
}

}  // namespace wdgda
