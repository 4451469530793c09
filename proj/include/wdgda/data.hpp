#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wdgda/networks.hpp"
#include "wdgda/tensor.hpp"

namespace wdgda {

using Dims3 = std::array<std::int64_t, 3>;  // D, H, W

struct Volume {
  Dims3 dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm
  std::vector<double> voxels;

  std::int64_t size() const { return dims[0] * dims[1] * dims[2]; }
  void validate() const;
};

struct Mask {
  Dims3 dims{0, 0, 0};
  std::vector<std::uint8_t> labels;  // 0 background, 1 foreground

  std::int64_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::int64_t foreground() const;
  void validate() const;
};

// SplitMix64 finalizer of seed + salt; used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

// ---------------------------------------------------------------------------
// Phantoms

struct PhantomSpec {
  std::uint64_t seed = 0;             // geometry: organs, texture, mask
  std::uint64_t appearance_seed = 0;  // noise and bias field
  Domain domain = Domain::X;
  Dims3 dims{10, 64, 64};

  std::int64_t min_organs = 1;
  std::int64_t max_organs = 3;
  // in-plane semi-axes as fractions of min(H, W); depth semi-axis as a
  // fraction of D
  double min_radius = 0.12;
  double max_radius = 0.28;
  double min_depth_radius = 0.5;
  double max_depth_radius = 0.9;

  // domain Y appearance; ignored for X except noise_sigma
  bool invert = true;
  double bias_strength = 0.3;
  double noise_sigma = 0.05;
  double gamma = 1.6;

  void validate() const;
};

// Default spec for a domain: X is bright organs on a dark textured
// background with light noise; Y is inverted, biased, gamma-warped and noisier.
PhantomSpec default_phantom_spec(Domain domain, std::uint64_t seed, Dims3 dims);

// One of several alternative Y parameterizations, chosen by `variant`.
PhantomSpec multimodal_phantom_spec(std::uint64_t variant, std::uint64_t seed, Dims3 dims);

std::pair<Volume, Mask> generate_phantom(const PhantomSpec& spec);

// ---------------------------------------------------------------------------
// Preprocessing

// Zero mean, unit population std; constant volumes map to zeros.
Volume normalize(const Volume& v);

struct Patch {
  Dims3 origin{0, 0, 0};
  std::vector<double> voxels;
  std::vector<std::uint8_t> labels;  // empty when no mask was given
};

// Raster-order sliding windows. With `cover_edges` a final window flush with
// the far edge is added on every axis the stride does not reach.
std::vector<Dims3> patch_origins(Dims3 dims, Dims3 patch, Dims3 stride, bool cover_edges = false);

std::vector<Patch> extract_patches(const Volume& volume, const Mask* mask, Dims3 patch,
                                   Dims3 stride, bool cover_edges = false);

// Averages overlapping windows back into a grid; voxels no window covers are
// zero and flagged in `covered` when given.
std::vector<double> reassemble(const std::vector<std::vector<double>>& patches,
                               const std::vector<Dims3>& origins, Dims3 patch, Dims3 dims,
                               std::vector<std::uint8_t>* covered = nullptr);

struct AugmentChoice {
  bool flip_w = false;  // mirror along W
  bool flip_h = false;  // mirror along H
  int rotations = 0;    // quarter turns in the H-W plane

  bool identity() const { return !flip_w && !flip_h && rotations == 0; }
};

AugmentChoice choose_augment(std::uint64_t seed);

// Applies flips then rotation to a [D,H,W] patch and its labels in place;
// `dims` is updated (H and W swap on odd rotations).
void apply_augment(const AugmentChoice& choice, Dims3& dims, std::vector<double>& voxels,
                   std::vector<std::uint8_t>& labels);

std::pair<Patch, Dims3> augment(const Patch& patch, Dims3 dims, std::uint64_t seed);

struct Fold {
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> test;
};

std::vector<Fold> kfold_split(const std::vector<std::int64_t>& ids, int k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Files

void write_volume(const std::string& path, const Volume& v);
Volume read_volume(const std::string& path);
void write_mask(const std::string& path, const Mask& m);
Mask read_mask(const std::string& path);

std::vector<std::uint8_t> encode_volume(const Volume& v);
Volume decode_volume(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_mask(const Mask& m);
Mask decode_mask(const std::vector<std::uint8_t>& bytes);

struct Case {
  std::string id;
  Volume volume;
  Mask mask;
};

// <dir>/<id>.wdgv and <dir>/<id>.wdgm
void save_case(const std::string& dir, const Case& c);
// Every *.wdgv in `dir` (sorted by id) with its mask; a missing mask is an
// IoError.
std::vector<Case> load_cases(const std::string& dir);

// ---------------------------------------------------------------------------
// Tensor helpers

// [N,1,D,H,W] from N patches of equal dims.
Tensor patches_to_tensor(const std::vector<const std::vector<double>*>& patches, Dims3 dims,
                         DType dtype = DType::F64);
Tensor labels_to_tensor(const std::vector<const std::vector<std::uint8_t>*>& labels, Dims3 dims,
                        DType dtype = DType::F64);

}  // namespace wdgda
