#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wdgda/autograd.hpp"
#include "wdgda/data.hpp"
#include "wdgda/losses.hpp"
#include "wdgda/networks.hpp"

namespace wdgda {

enum class ExperimentMode {
  AdaptThenSegSourceOnly,
  AdaptThenSegJoint,
  MultimodalTarget,
  BaselineUnadapted,
};

const char* mode_name(ExperimentMode m);
ExperimentMode parse_mode(const std::string& s);

struct TrainConfig {
  NetConfig net;
  LossWeights weights;

  double learning_rate = 1e-4;
  double seg_learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  std::int64_t content_disc_period = 3;
  std::int64_t adapt_iterations = 2000;
  std::int64_t seg_iterations = 1000;
  std::int64_t batch = 2;
  bool mirror_latent = true;
  bool augment = true;
  // every iteration draws the batch of iteration 0
  bool fixed_batches = false;
  bool seg_finetune_encoder = false;

  std::uint64_t seed = 1;

  // experiment protocol
  ExperimentMode mode = ExperimentMode::AdaptThenSegSourceOnly;
  std::int64_t cases_per_domain = 20;
  Dims3 volume_dims{10, 64, 64};
  int folds = 5;
  std::int64_t eval_every = 0;  // segmentation validation period, 0 = off

  void validate() const;
  Dims3 patch_dims() const { return {net.patch_depth, net.patch_height, net.patch_width}; }
};

// Flat "key = value" text, '#' comments. Unknown keys and malformed values
// raise ConfigError naming the line.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::string& path, TrainConfig base = {});
std::string config_to_text(const TrainConfig& c);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  NamedTensors m, v;  // keyed "group/name", always 64-bit
};

// One Adam update of every parameter in `groups`. Parameters the gradient
// map does not mention take a zero gradient. Replaces the parameters with
// fresh leaves.
void adam_step(ModelBundle& bundle, const std::vector<std::string>& groups,
               const GradientMap& grads, AdamState& state, const AdamConfig& cfg);

struct TrainerState {
  std::int64_t iteration = 0;      // next adaptation iteration
  std::int64_t seg_iteration = 0;  // next segmentation iteration
  std::map<std::string, AdamState> optimizers;
};

// ---------------------------------------------------------------------------
// Streams

struct Batch {
  Tensor images;  // [N,1,D,H,W]
  Tensor masks;   // [N,1,D,H,W] 0/1, undefined when the cases carry none
};

// Random patches from normalized cases. batch(i) is a pure function of
// (seed, i), so any iteration can be regenerated, and the stream is
// exhausted after `limit` batches when one is set.
class PatchStream {
 public:
  PatchStream(std::vector<Case> cases, Dims3 patch, std::uint64_t seed, bool augment,
              DType dtype = DType::F64, std::optional<std::int64_t> limit = std::nullopt,
              bool fixed = false);

  std::optional<Batch> batch(std::int64_t iteration, std::int64_t size) const;
  const std::vector<Case>& cases() const { return cases_; }

 private:
  std::vector<Case> cases_;
  Dims3 patch_;
  std::uint64_t seed_;
  bool augment_;
  DType dtype_;
  std::optional<std::int64_t> limit_;
  bool fixed_;
};

// Bounded in-order prefetch of batches [begin, end) on `threads` workers
// (0 computes on the caller's thread). The consumer sees exactly the
// single-threaded sequence.
class Prefetcher {
 public:
  Prefetcher(const PatchStream& stream, std::int64_t begin, std::int64_t end, std::int64_t size,
             int threads, std::int64_t capacity = 4);
  ~Prefetcher();
  Prefetcher(const Prefetcher&) = delete;
  Prefetcher& operator=(const Prefetcher&) = delete;

  std::optional<Batch> next();

 private:
  struct Impl;
  Impl* impl_;
};

// WDGDA_THREADS, default 1.
int prefetch_threads();

// ---------------------------------------------------------------------------
// Phases

using ReportSink = std::function<void(const LossReport&)>;

// Runs adaptation iterations state.iteration .. `until` (exclusive) and
// returns the rows. Stops early, without error, when a stream runs dry.
std::vector<LossReport> train_adaptation(const TrainConfig& config, const PatchStream& stream_x,
                                         const PatchStream& stream_y, ModelBundle& bundle,
                                         TrainerState& state, std::int64_t until,
                                         const ReportSink& sink = {});

struct SegLogRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double dice = -1.0;  // < 0 when no validation ran at this step
  double jaccard = -1.0;
};

struct SegSource {
  const PatchStream* stream;
  Domain domain;
};

// Trains the segmentation head on features of the given labelled streams,
// cycling through `sources` one batch each. Content encoders are frozen.
std::vector<SegLogRow> train_segmentation(const TrainConfig& config,
                                          const std::vector<SegSource>& sources,
                                          ModelBundle& bundle, TrainerState& state,
                                          std::int64_t until,
                                          const std::vector<Case>* validation = nullptr,
                                          Domain validation_domain = Domain::Y);

// Foreground probability for a whole normalized volume, overlap-averaged.
std::vector<double> predict_volume(const ModelBundle& bundle, Domain domain, const Volume& volume);

struct CaseScore {
  std::string id;
  double dice = 0.0;
  double jaccard = 0.0;
};

std::vector<CaseScore> evaluate_cases(const ModelBundle& bundle, Domain domain,
                                      const std::vector<Case>& cases);

// Zero-style decode of the content code, reassembled over the volume.
Volume export_content(const ModelBundle& bundle, Domain domain, const Volume& volume);

struct ContentDistance {
  double l1 = 0.0;        // mean |E^c_X(x) - E^c_Y(y)|
  double magnitude = 0.0; // mean of (|E^c_X(x)| + |E^c_Y(y)|) / 2
  double relative() const { return magnitude > 0.0 ? l1 / magnitude : 0.0; }
};

// Content codes of paired volumes (x_cases[i] with y_cases[i]), over all tiles.
ContentDistance content_distance(const ModelBundle& bundle, const std::vector<Case>& x_cases,
                                 const std::vector<Case>& y_cases);

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& path, const ModelBundle& bundle,
                     const TrainerState& state);

struct Checkpoint {
  ModelBundle bundle;
  TrainerState state;
};

Checkpoint load_checkpoint(const std::string& path);
std::vector<std::uint8_t> encode_checkpoint(const ModelBundle& bundle, const TrainerState& state);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// ---------------------------------------------------------------------------
// Experiments

struct FoldResult {
  int fold = 0;
  double dice = 0.0;
  double jaccard = 0.0;
  std::vector<CaseScore> cases;
};

struct ExperimentReport {
  ExperimentMode mode = ExperimentMode::AdaptThenSegSourceOnly;
  std::vector<FoldResult> folds;

  double mean_dice() const;
  double std_dice() const;
  double mean_jaccard() const;
  double std_jaccard() const;
  std::string to_csv() const;
};

struct PhantomSets {
  std::vector<Case> x, y;
};

// Normalized phantom cases for the configured mode. X and Y use disjoint
// geometry seeds (unpaired).
PhantomSets make_phantom_sets(const TrainConfig& config);

using ProgressFn = std::function<void(const std::string&)>;
// Called once per fold after adaptation with the freshly initialized and
// the adapted model.
using AdaptedFn = std::function<void(int fold, const ModelBundle& initial, const ModelBundle& adapted)>;

ExperimentReport run_experiment(const TrainConfig& config, const PhantomSets& data,
                                const ProgressFn& progress = {}, const AdaptedFn& on_adapted = {});

// Normalizes every case volume.
std::vector<Case> normalized(std::vector<Case> cases);

}  // namespace wdgda
