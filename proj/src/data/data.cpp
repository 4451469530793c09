#include "wdgda/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "wdgda/binary_io.hpp"

namespace wdgda {

namespace fs = std::filesystem;

void Volume::validate() const {
  for (auto d : dims) {
    if (d <= 0) throw ShapeError("volume dims must be positive");
  }
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ShapeError("volume spacing must be positive");
  }
  if (static_cast<std::int64_t>(voxels.size()) != size()) {
    throw ShapeError("volume has " + std::to_string(voxels.size()) + " voxels, dims need " +
                     std::to_string(size()));
  }
}

std::int64_t Mask::foreground() const {
  std::int64_t n = 0;
  for (auto l : labels) n += l;
  return n;
}

void Mask::validate() const {
  for (auto d : dims) {
    if (d <= 0) throw ShapeError("mask dims must be positive");
  }
  if (static_cast<std::int64_t>(labels.size()) != size()) {
    throw ShapeError("mask has " + std::to_string(labels.size()) + " labels, dims need " +
                     std::to_string(size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) {
      throw ShapeError("mask label " + std::to_string(labels[i]) + " at index " +
                       std::to_string(i) + " is not 0 or 1");
    }
  }
}

// ---------------------------------------------------------------------------
// Phantoms

namespace {

// Portable draws: the standard distributions are implementation-defined.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

double gaussian(std::mt19937_64& rng) {
  double u1 = unit(rng);
  while (u1 <= 0.0) u1 = unit(rng);
  const double u2 = unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) { return mix(seed, salt); }

namespace {

struct Organ {
  double cz, cy, cx;
  double rz, ry, rx;
  double cos_a, sin_a;
  double level;
};

struct Wave {
  double fz, fy, fx, phase, amplitude;

  double at(double z, double y, double x) const {
    return amplitude * std::sin(2.0 * std::numbers::pi * (fz * z + fy * y + fx * x) + phase);
  }
};

Wave random_wave(std::mt19937_64& rng, double amplitude, double fmin, double fmax) {
  return {uniform(rng, 0.0, 0.5), uniform(rng, fmin, fmax), uniform(rng, fmin, fmax),
          uniform(rng, 0.0, 2.0 * std::numbers::pi), amplitude};
}

}  // namespace

void PhantomSpec::validate() const {
  const auto [D, H, W] = dims;
  if (D < 1 || H < 8 || W < 8) {
    throw ConfigError("phantom dims " + std::to_string(D) + "," + std::to_string(H) + "," +
                      std::to_string(W) + " are too small for the organ size ranges (need D>=1, "
                      "H>=8, W>=8)");
  }
  if (min_organs < 1 || max_organs < min_organs) throw ConfigError("invalid organ count range");
  if (!(min_radius > 0.0) || max_radius < min_radius || max_radius > 0.5) {
    throw ConfigError("invalid in-plane radius range");
  }
  if (!(min_depth_radius > 0.0) || max_depth_radius < min_depth_radius) {
    throw ConfigError("invalid depth radius range");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (!(bias_strength >= 0.0) || bias_strength >= 1.0) {
    throw ConfigError("bias_strength must be in [0, 1)");
  }
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
}

PhantomSpec default_phantom_spec(Domain domain, std::uint64_t seed, Dims3 dims) {
  PhantomSpec s;
  s.seed = seed;
  s.appearance_seed = mix(seed, 77);
  s.domain = domain;
  s.dims = dims;
  if (domain == Domain::X) {
    s.invert = false;
    s.bias_strength = 0.0;
    s.noise_sigma = 0.02;
    s.gamma = 1.0;
  }
  return s;
}

PhantomSpec multimodal_phantom_spec(std::uint64_t variant, std::uint64_t seed, Dims3 dims) {
  auto s = default_phantom_spec(Domain::Y, seed, dims);
  switch (variant % 3) {
    case 0:
      break;
    case 1:
      s.gamma = 0.7;
      s.bias_strength = 0.45;
      s.noise_sigma = 0.08;
      break;
    case 2:
      s.gamma = 2.4;
      s.bias_strength = 0.15;
      s.noise_sigma = 0.03;
      break;
  }
  return s;
}

std::pair<Volume, Mask> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const auto [D, H, W] = spec.dims;
  std::mt19937_64 geo(mix(spec.seed, 1));
  std::mt19937_64 look(mix(spec.appearance_seed, 2));

  const double m = static_cast<double>(std::min(H, W));
  const auto count =
      spec.min_organs + static_cast<std::int64_t>(geo() % static_cast<std::uint64_t>(
                                                               spec.max_organs - spec.min_organs + 1));
  std::vector<Organ> organs;
  for (std::int64_t i = 0; i < count; ++i) {
    Organ o;
    o.cz = uniform(geo, 0.3, 0.7) * static_cast<double>(D - 1);
    o.cy = uniform(geo, 0.3, 0.7) * static_cast<double>(H - 1);
    o.cx = uniform(geo, 0.3, 0.7) * static_cast<double>(W - 1);
    o.rz = std::max(0.75, uniform(geo, spec.min_depth_radius, spec.max_depth_radius) *
                              static_cast<double>(D));
    o.ry = uniform(geo, spec.min_radius, spec.max_radius) * m;
    o.rx = uniform(geo, spec.min_radius, spec.max_radius) * m;
    const double angle = uniform(geo, 0.0, std::numbers::pi);
    o.cos_a = std::cos(angle);
    o.sin_a = std::sin(angle);
    o.level = uniform(geo, 0.75, 0.9);
    organs.push_back(o);
  }
  const Wave bg1 = random_wave(geo, 0.06, 1.0, 3.0);
  const Wave bg2 = random_wave(geo, 0.04, 3.0, 6.0);
  const Wave inner = random_wave(geo, 0.03, 2.0, 5.0);

  const bool y_domain = spec.domain == Domain::Y;
  const Wave bias1 = random_wave(look, 1.0, 0.2, 0.7);
  const Wave bias2 = random_wave(look, 0.5, 0.2, 0.7);

  Volume vol;
  vol.dims = spec.dims;
  vol.voxels.resize(static_cast<std::size_t>(D * H * W));
  Mask mask;
  mask.dims = spec.dims;
  mask.labels.resize(vol.voxels.size());

  std::size_t idx = 0;
  for (std::int64_t z = 0; z < D; ++z) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x, ++idx) {
        const double nz = static_cast<double>(z) / static_cast<double>(D);
        const double ny = static_cast<double>(y) / static_cast<double>(H);
        const double nx = static_cast<double>(x) / static_cast<double>(W);
        double member = 0.0, level = 0.0;
        bool inside = false;
        for (const auto& o : organs) {
          const double dz = (static_cast<double>(z) - o.cz) / o.rz;
          const double dy0 = static_cast<double>(y) - o.cy;
          const double dx0 = static_cast<double>(x) - o.cx;
          const double dy = (o.cos_a * dy0 + o.sin_a * dx0) / o.ry;
          const double dx = (-o.sin_a * dy0 + o.cos_a * dx0) / o.rx;
          const double rho = std::sqrt(dz * dz + dy * dy + dx * dx);
          inside = inside || rho <= 1.0;
          // soft edge about one voxel wide
          const double s = 1.0 / (1.0 + std::exp(-(1.0 - rho) * std::min(o.ry, o.rx) * 2.0));
          if (s > member) {
            member = s;
            level = o.level;
          }
        }
        const double background = 0.2 + bg1.at(nz, ny, nx) + bg2.at(nz, ny, nx);
        const double organ = level + inner.at(nz, ny, nx);
        double v = background * (1.0 - member) + organ * member;
        if (y_domain) {
          if (spec.invert) v = 1.0 - v;
          const double field = (bias1.at(nz, ny, nx) + bias2.at(nz, ny, nx)) / 1.5;
          v *= 1.0 + spec.bias_strength * field;
          v = std::pow(std::max(v, 0.0), spec.gamma);
        }
        v += spec.noise_sigma * gaussian(look);
        vol.voxels[idx] = static_cast<double>(static_cast<float>(v));
        mask.labels[idx] = inside ? 1 : 0;
      }
    }
  }
  return {std::move(vol), std::move(mask)};
}

// ---------------------------------------------------------------------------
// Preprocessing

Volume normalize(const Volume& v) {
  if (v.voxels.empty()) throw ShapeError("normalize: empty volume");
  const double n = static_cast<double>(v.voxels.size());
  double mean = 0.0;
  for (double x : v.voxels) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v.voxels) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  Volume out = v;
  for (auto& x : out.voxels) x = sd < 1e-8 ? 0.0 : (x - mean) / sd;
  return out;
}

std::vector<Dims3> patch_origins(Dims3 dims, Dims3 patch, Dims3 stride, bool cover_edges) {
  std::array<std::vector<std::int64_t>, 3> axes;
  for (int a = 0; a < 3; ++a) {
    if (patch[a] <= 0 || stride[a] <= 0) throw ShapeError("patch and stride must be positive");
    if (patch[a] > dims[a]) {
      throw ShapeError("patch " + std::to_string(patch[0]) + "x" + std::to_string(patch[1]) + "x" +
                       std::to_string(patch[2]) + " does not fit volume " +
                       std::to_string(dims[0]) + "x" + std::to_string(dims[1]) + "x" +
                       std::to_string(dims[2]));
    }
    for (std::int64_t o = 0; o + patch[a] <= dims[a]; o += stride[a]) axes[a].push_back(o);
    if (cover_edges && axes[a].back() + patch[a] < dims[a]) axes[a].push_back(dims[a] - patch[a]);
  }
  std::vector<Dims3> out;
  for (auto z : axes[0])
    for (auto y : axes[1])
      for (auto x : axes[2]) out.push_back({z, y, x});
  return out;
}

std::vector<Patch> extract_patches(const Volume& volume, const Mask* mask, Dims3 patch,
                                   Dims3 stride, bool cover_edges) {
  volume.validate();
  if (mask && mask->dims != volume.dims) throw ShapeError("mask dims differ from volume dims");
  const auto [D, H, W] = volume.dims;
  (void)D;
  std::vector<Patch> out;
  for (const auto& o : patch_origins(volume.dims, patch, stride, cover_edges)) {
    Patch p;
    p.origin = o;
    p.voxels.reserve(static_cast<std::size_t>(patch[0] * patch[1] * patch[2]));
    for (std::int64_t z = 0; z < patch[0]; ++z)
      for (std::int64_t y = 0; y < patch[1]; ++y) {
        const auto row = ((o[0] + z) * H + (o[1] + y)) * W + o[2];
        p.voxels.insert(p.voxels.end(), volume.voxels.begin() + row,
                        volume.voxels.begin() + row + patch[2]);
        if (mask) {
          p.labels.insert(p.labels.end(), mask->labels.begin() + row,
                          mask->labels.begin() + row + patch[2]);
        }
      }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<double> reassemble(const std::vector<std::vector<double>>& patches,
                               const std::vector<Dims3>& origins, Dims3 patch, Dims3 dims,
                               std::vector<std::uint8_t>* covered) {
  if (patches.size() != origins.size()) throw ShapeError("reassemble: patch/origin count mismatch");
  const auto [D, H, W] = dims;
  const auto n = static_cast<std::size_t>(D * H * W);
  std::vector<double> sum(n, 0.0), hits(n, 0.0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& o = origins[i];
    if (static_cast<std::int64_t>(patches[i].size()) != patch[0] * patch[1] * patch[2]) {
      throw ShapeError("reassemble: patch " + std::to_string(i) + " has wrong size");
    }
    for (int a = 0; a < 3; ++a) {
      if (o[a] < 0 || o[a] + patch[a] > dims[a]) throw ShapeError("reassemble: origin out of range");
    }
    std::size_t k = 0;
    for (std::int64_t z = 0; z < patch[0]; ++z)
      for (std::int64_t y = 0; y < patch[1]; ++y)
        for (std::int64_t x = 0; x < patch[2]; ++x, ++k) {
          const auto at = static_cast<std::size_t>(((o[0] + z) * H + (o[1] + y)) * W + o[2] + x);
          sum[at] += patches[i][k];
          hits[at] += 1.0;
        }
  }
  if (covered) covered->assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (hits[i] > 0.0) {
      sum[i] /= hits[i];
      if (covered) (*covered)[i] = 1;
    }
  }
  return sum;
}

AugmentChoice choose_augment(std::uint64_t seed) {
  const auto r = mix(seed, 3);
  AugmentChoice c;
  c.flip_w = r & 1u;
  c.flip_h = (r >> 1) & 1u;
  c.rotations = static_cast<int>((r >> 2) & 3u);
  return c;
}

namespace {

template <class T>
void flip_axis(std::vector<T>& v, Dims3 dims, bool along_w) {
  const auto [D, H, W] = dims;
  for (std::int64_t z = 0; z < D; ++z)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const auto a = (z * H + y) * W + x;
        const auto b = along_w ? (z * H + y) * W + (W - 1 - x) : (z * H + (H - 1 - y)) * W + x;
        if (a < b) std::swap(v[a], v[b]);
      }
}

// one counter-clockwise quarter turn: out[i][j] = in[j][W-1-i], out is W x H
template <class T>
std::vector<T> quarter_turn(const std::vector<T>& v, Dims3 dims) {
  const auto [D, H, W] = dims;
  std::vector<T> out(v.size());
  for (std::int64_t z = 0; z < D; ++z)
    for (std::int64_t i = 0; i < W; ++i)
      for (std::int64_t j = 0; j < H; ++j) out[(z * W + i) * H + j] = v[(z * H + j) * W + (W - 1 - i)];
  return out;
}

}  // namespace

void apply_augment(const AugmentChoice& choice, Dims3& dims, std::vector<double>& voxels,
                   std::vector<std::uint8_t>& labels) {
  const auto n = static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
  if (voxels.size() != n || (!labels.empty() && labels.size() != n)) {
    throw ShapeError("augment: buffer sizes do not match dims");
  }
  if ((choice.rotations & 1) && dims[1] != dims[2]) {
    throw ShapeError("augment: odd quarter turns need a square H-W plane, got " +
                     std::to_string(dims[1]) + "x" + std::to_string(dims[2]));
  }
  if (choice.flip_w) {
    flip_axis(voxels, dims, true);
    if (!labels.empty()) flip_axis(labels, dims, true);
  }
  if (choice.flip_h) {
    flip_axis(voxels, dims, false);
    if (!labels.empty()) flip_axis(labels, dims, false);
  }
  for (int r = 0; r < (choice.rotations & 3); ++r) {
    voxels = quarter_turn(voxels, dims);
    if (!labels.empty()) labels = quarter_turn(labels, dims);
    std::swap(dims[1], dims[2]);
  }
}

std::pair<Patch, Dims3> augment(const Patch& patch, Dims3 dims, std::uint64_t seed) {
  Patch out = patch;
  apply_augment(choose_augment(seed), dims, out.voxels, out.labels);
  return {std::move(out), dims};
}

std::vector<Fold> kfold_split(const std::vector<std::int64_t>& ids, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("kfold_split: k must be >= 2");
  if (static_cast<std::size_t>(k) > ids.size()) {
    throw ConfigError("kfold_split: k=" + std::to_string(k) + " exceeds " +
                      std::to_string(ids.size()) + " ids");
  }
  auto order = ids;
  std::mt19937_64 rng(mix(seed, 4));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng() % i]);
  }
  std::vector<Fold> folds(static_cast<std::size_t>(k));
  const std::size_t n = order.size(), base = n / k, extra = n % k;
  std::size_t start = 0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
      (i >= start && i < start + len ? folds[f].test : folds[f].train).push_back(order[i]);
    }
    start += len;
  }
  return folds;
}

// ---------------------------------------------------------------------------
// Files

namespace {

constexpr std::string_view kVolumeMagic = "WDGV1";
constexpr std::string_view kMaskMagic = "WDGM1";
constexpr std::uint64_t kMaxVoxels = 1ull << 32;

Dims3 read_dims(ByteReader& in) {
  Dims3 dims{};
  std::uint64_t count = 1;
  for (auto& d : dims) {
    const auto at = in.offset();
    const auto v = in.u32("dimension");
    if (v == 0) throw ParseError("zero dimension", at);
    count *= v;
    if (count > kMaxVoxels) throw ParseError("dimensions overflow the voxel limit", at);
    d = v;
  }
  return dims;
}

bool exact_in_f32(const std::vector<double>& v) {
  for (double x : v) {
    if (static_cast<double>(static_cast<float>(x)) != x) return false;
  }
  return true;
}

}  // namespace

std::vector<std::uint8_t> encode_volume(const Volume& v) {
  v.validate();
  ByteWriter out;
  out.magic(kVolumeMagic);
  const bool f32 = exact_in_f32(v.voxels);
  out.u8(f32 ? 0 : 1);
  for (auto d : v.dims) out.u32(static_cast<std::uint32_t>(d));
  for (double s : v.spacing) out.f32(static_cast<float>(s));
  for (double x : v.voxels) {
    if (f32) {
      out.f32(static_cast<float>(x));
    } else {
      out.f64(x);
    }
  }
  return out.release();
}

Volume decode_volume(const std::vector<std::uint8_t>& bytes) {
  ByteReader in(bytes);
  in.expect_magic(kVolumeMagic);
  const auto code_at = in.offset();
  const auto code = in.u8("dtype code");
  if (code > 1) throw ParseError("unknown voxel dtype code " + std::to_string(code), code_at);
  Volume v;
  v.dims = read_dims(in);
  for (auto& s : v.spacing) {
    const auto at = in.offset();
    s = in.scalar<float>("spacing");
    if (!(s > 0.0) || !std::isfinite(s)) throw ParseError("spacing must be positive", at);
  }
  const std::uint64_t n = static_cast<std::uint64_t>(v.size());
  in.need(n * (code == 0 ? 4 : 8), "voxel data");
  v.voxels.resize(n);
  for (auto& x : v.voxels) {
    x = code == 0 ? static_cast<double>(in.scalar<float>("voxel")) : in.scalar<double>("voxel");
  }
  if (in.remaining() != 0) {
    throw ParseError(std::to_string(in.remaining()) + " trailing bytes after voxel data",
                     in.offset());
  }
  return v;
}

std::vector<std::uint8_t> encode_mask(const Mask& m) {
  m.validate();
  ByteWriter out;
  out.magic(kMaskMagic);
  for (auto d : m.dims) out.u32(static_cast<std::uint32_t>(d));
  out.bytes(m.labels.data(), m.labels.size());
  return out.release();
}

Mask decode_mask(const std::vector<std::uint8_t>& bytes) {
  ByteReader in(bytes);
  in.expect_magic(kMaskMagic);
  Mask m;
  m.dims = read_dims(in);
  const auto n = static_cast<std::uint64_t>(m.size());
  const auto start = in.offset();
  const auto* p = in.take(n, "mask labels");
  m.labels.assign(p, p + n);
  for (std::uint64_t i = 0; i < n; ++i) {
    if (m.labels[i] > 1) {
      throw ParseError("mask label " + std::to_string(m.labels[i]) + " is not 0 or 1", start + i);
    }
  }
  if (in.remaining() != 0) {
    throw ParseError(std::to_string(in.remaining()) + " trailing bytes after labels", in.offset());
  }
  return m;
}

void write_volume(const std::string& path, const Volume& v) {
  write_file_bytes(path, encode_volume(v));
}

Volume read_volume(const std::string& path) {
  try {
    return decode_volume(read_file_bytes(path));
  } catch (const ParseError& e) {
    throw e.prefixed(path);
  }
}

void write_mask(const std::string& path, const Mask& m) { write_file_bytes(path, encode_mask(m)); }

Mask read_mask(const std::string& path) {
  try {
    return decode_mask(read_file_bytes(path));
  } catch (const ParseError& e) {
    throw e.prefixed(path);
  }
}

void save_case(const std::string& dir, const Case& c) {
  write_volume((fs::path(dir) / (c.id + ".wdgv")).string(), c.volume);
  write_mask((fs::path(dir) / (c.id + ".wdgm")).string(), c.mask);
}

std::vector<Case> load_cases(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("data directory '" + dir + "' does not exist");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".wdgv") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  std::vector<Case> cases;
  for (const auto& id : ids) {
    Case c;
    c.id = id;
    c.volume = read_volume((fs::path(dir) / (id + ".wdgv")).string());
    const auto mask_path = fs::path(dir) / (id + ".wdgm");
    if (!fs::exists(mask_path)) throw IoError("mask '" + mask_path.string() + "' is missing");
    c.mask = read_mask(mask_path.string());
    if (c.mask.dims != c.volume.dims) {
      throw ShapeError("case '" + id + "': mask dims differ from volume dims");
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

Tensor patches_to_tensor(const std::vector<const std::vector<double>*>& patches, Dims3 dims,
                         DType dtype) {
  const auto per = dims[0] * dims[1] * dims[2];
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(per) * patches.size());
  for (const auto* p : patches) {
    if (static_cast<std::int64_t>(p->size()) != per) throw ShapeError("patch size mismatch");
    v.insert(v.end(), p->begin(), p->end());
  }
  return Tensor::from_data({static_cast<std::int64_t>(patches.size()), 1, dims[0], dims[1], dims[2]},
                           std::move(v), dtype);
}

Tensor labels_to_tensor(const std::vector<const std::vector<std::uint8_t>*>& labels, Dims3 dims,
                        DType dtype) {
  const auto per = dims[0] * dims[1] * dims[2];
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(per) * labels.size());
  for (const auto* l : labels) {
    if (static_cast<std::int64_t>(l->size()) != per) throw ShapeError("label patch size mismatch");
    for (auto x : *l) v.push_back(x);
  }
  return Tensor::from_data({static_cast<std::int64_t>(labels.size()), 1, dims[0], dims[1], dims[2]},
                           std::move(v), dtype);
}

}  // namespace wdgda
