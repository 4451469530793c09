#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wdgda/serialize.hpp"
#include "wdgda/tensor.hpp"

namespace wdgda {

enum class Domain { X, Y };

const char* domain_name(Domain d);

enum class CriticKind {
  Conv,    // strided conv stack followed by a global mean
  Linear,  // D(y) = <w, y>, used to check the penalty analytically
};

enum class SegInput {
  ContentCode,   // segmentation head reads the content code directly
  ContentImage,  // reads the zero-style decode of the content code
  RawImage,      // reads the input image (unadapted baseline)
};

struct NetConfig {
  std::int64_t patch_depth = 5;
  std::int64_t patch_height = 32;
  std::int64_t patch_width = 32;

  std::int64_t content_channels = 8;
  std::int64_t style_dim = 8;
  // Encoder/decoder widths are (width, 2*width, 2*width).
  std::int64_t width = 8;
  std::int64_t res_blocks = 2;
  std::int64_t mlp_hidden = 16;
  // tanh output is multiplied by this so normalized intensities are reachable
  double decoder_output_scale = 3.0;

  CriticKind critic_kind = CriticKind::Conv;
  std::int64_t critic_width = 8;
  std::int64_t critic_stages = 3;
  std::int64_t content_disc_width = 16;

  SegInput seg_input = SegInput::ContentCode;
  std::int64_t seg_width = 16;
  std::int64_t seg_growth = 4;
  std::int64_t seg_blocks = 2;
  std::int64_t seg_layers = 3;

  double init_std = 0.02;
  std::uint64_t init_seed = 1;
  DType dtype = DType::F64;

  Shape patch_shape(std::int64_t batch) const {
    return {batch, 1, patch_depth, patch_height, patch_width};
  }
  Shape content_shape(std::int64_t batch) const {
    return {batch, content_channels, patch_depth, patch_height / 4, patch_width / 4};
  }
  void validate() const;
};

using ParamGroup = std::map<std::string, Tensor>;

inline const std::vector<std::string>& bundle_group_names() {
  static const std::vector<std::string> names = {
      "enc_content_X", "enc_content_Y", "enc_style_X", "enc_style_Y", "dec_X",
      "dec_Y",         "critic_X",      "critic_Y",    "content_disc", "seg_head"};
  return names;
}

/// Parameters of the whole model, grouped per network.
struct ModelBundle {
  NetConfig config;
  std::map<std::string, ParamGroup> groups;

  const Tensor& param(const std::string& group, const std::string& name) const;
  const ParamGroup& group(const std::string& name) const;

  // "group/name" -> tensor
  NamedTensors flatten() const;
  // Rebuilds from a flat map; every expected "group/name" must be present.
  void assign_flat(const NamedTensors& flat);

  std::int64_t parameter_count() const;
  void check_finite() const;
};

// Randomly initialized bundle (truncated normal conv/linear weights, zero
// biases), deterministic in config.init_seed.
ModelBundle make_bundle(const NetConfig& config);

// Replaces every parameter with a zero tensor of the same shape.
void zero_group(ModelBundle& bundle, const std::string& group);

std::string content_encoder_group(Domain d);
std::string style_encoder_group(Domain d);
std::string decoder_group(Domain d);
std::string critic_group(Domain d);

Tensor encode_content(const ModelBundle& bundle, Domain domain, const Tensor& x);
Tensor encode_style(const ModelBundle& bundle, Domain domain, const Tensor& x);
Tensor decode(const ModelBundle& bundle, Domain domain, const Tensor& content, const Tensor& style);
// Unbounded per-sample score, shape [N].
Tensor critic(const ModelBundle& bundle, Domain domain, const Tensor& image);
// P(content came from domain X), shape [N].
Tensor content_discriminate(const ModelBundle& bundle, const Tensor& content);

// Decode with a zero style vector.
Tensor content_only_image(const ModelBundle& bundle, Domain domain, const Tensor& content);

// DenseNet-style head: logits [N,2,D,H,W] at patch resolution. When
// `layer_inputs` is given it receives the channel count entering every
// dense layer, block by block.
Tensor segment(const ModelBundle& bundle, const Tensor& features,
               std::vector<std::int64_t>* layer_inputs = nullptr);

// Segmentation features for one image batch according to config.seg_input.
Tensor segmentation_features(const ModelBundle& bundle, Domain domain, const Tensor& image);

}  // namespace wdgda
