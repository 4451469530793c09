#include <cmath>
#include <cstdio>

#include "wdgda/training.hpp"

namespace wdgda {

std::vector<Case> normalized(std::vector<Case> cases) {
  for (auto& c : cases) c.volume = normalize(c.volume);
  return cases;
}

PhantomSets make_phantom_sets(const TrainConfig& config) {
  config.validate();
  PhantomSets out;
  for (std::int64_t i = 0; i < config.cases_per_domain; ++i) {
    const auto u = static_cast<std::uint64_t>(i);
    const auto xs = default_phantom_spec(Domain::X, mix_seed(config.seed, 2 * u), config.volume_dims);
    auto ys = default_phantom_spec(Domain::Y, mix_seed(config.seed, 2 * u + 1), config.volume_dims);
    if (config.mode == ExperimentMode::MultimodalTarget && i % 3 != 0)
      ys = multimodal_phantom_spec(u % 3, ys.seed, config.volume_dims);
    char id[32];
    auto [vx, mx] = generate_phantom(xs);
    std::snprintf(id, sizeof id, "x%03lld", static_cast<long long>(i));
    out.x.push_back({id, normalize(vx), std::move(mx)});
    auto [vy, my] = generate_phantom(ys);
    std::snprintf(id, sizeof id, "y%03lld", static_cast<long long>(i));
    out.y.push_back({id, normalize(vy), std::move(my)});
  }
  return out;
}

namespace {

std::vector<Case> pick(const std::vector<Case>& all, const std::vector<std::int64_t>& ids) {
  std::vector<Case> out;
  for (auto i : ids) out.push_back(all.at(static_cast<std::size_t>(i)));
  return out;
}

double mean_of(const std::vector<FoldResult>& f, double FoldResult::*field) {
  double s = 0.0;
  for (const auto& r : f) s += r.*field;
  return f.empty() ? 0.0 : s / static_cast<double>(f.size());
}

double std_of(const std::vector<FoldResult>& f, double FoldResult::*field) {
  if (f.size() < 2) return 0.0;
  const double m = mean_of(f, field);
  double s = 0.0;
  for (const auto& r : f) s += (r.*field - m) * (r.*field - m);
  return std::sqrt(s / static_cast<double>(f.size() - 1));
}

}  // namespace

double ExperimentReport::mean_dice() const { return mean_of(folds, &FoldResult::dice); }
double ExperimentReport::std_dice() const { return std_of(folds, &FoldResult::dice); }
double ExperimentReport::mean_jaccard() const { return mean_of(folds, &FoldResult::jaccard); }
double ExperimentReport::std_jaccard() const { return std_of(folds, &FoldResult::jaccard); }

std::string ExperimentReport::to_csv() const {
  std::string out = "fold,split,dice,jaccard\n";
  char line[160];
  for (const auto& f : folds) {
    std::snprintf(line, sizeof line, "%d,target_test,%.17g,%.17g\n", f.fold, f.dice, f.jaccard);
    out += line;
  }
  std::snprintf(line, sizeof line, "mean,target_test,%.17g,%.17g\n", mean_dice(), mean_jaccard());
  out += line;
  std::snprintf(line, sizeof line, "std,target_test,%.17g,%.17g\n", std_dice(), std_jaccard());
  out += line;
  return out;
}

ExperimentReport run_experiment(const TrainConfig& config, const PhantomSets& data,
                                const ProgressFn& progress, const AdaptedFn& on_adapted) {
  config.validate();
  if (data.x.size() != data.y.size() || static_cast<int>(data.x.size()) < config.folds)
    throw ConfigError("experiment needs equally many X and Y cases, at least one per fold");
  std::vector<std::int64_t> ids;
  for (std::size_t i = 0; i < data.x.size(); ++i) ids.push_back(static_cast<std::int64_t>(i));
  const auto folds = kfold_split(ids, config.folds, mix_seed(config.seed, 5));
  const bool adapt = config.mode != ExperimentMode::BaselineUnadapted;
  const auto patch = config.patch_dims();

  ExperimentReport report;
  report.mode = config.mode;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto fu = static_cast<std::uint64_t>(f);
    const auto x_train = pick(data.x, folds[f].train);
    const auto y_train = pick(data.y, folds[f].train);
    const auto y_test = pick(data.y, folds[f].test);

    NetConfig net = config.net;
    net.init_seed = mix_seed(net.init_seed, fu);
    if (!adapt) net.seg_input = SegInput::RawImage;
    auto bundle = make_bundle(net);
    TrainerState state;

    if (adapt) {
      PatchStream sx(x_train, patch, mix_seed(config.seed, 10 + 4 * fu), config.augment, net.dtype,
                     std::nullopt, config.fixed_batches);
      PatchStream sy(y_train, patch, mix_seed(config.seed, 11 + 4 * fu), config.augment, net.dtype,
                     std::nullopt, config.fixed_batches);
      const auto initial = bundle;
      train_adaptation(config, sx, sy, bundle, state, config.adapt_iterations);
      if (on_adapted) on_adapted(static_cast<int>(f), initial, bundle);
      if (progress) progress("fold " + std::to_string(f) + ": adaptation done");
    }

    PatchStream seg_x(x_train, patch, mix_seed(config.seed, 12 + 4 * fu), config.augment, net.dtype);
    PatchStream seg_y(y_train, patch, mix_seed(config.seed, 13 + 4 * fu), config.augment, net.dtype);
    std::vector<SegSource> sources{{&seg_x, Domain::X}};
    if (config.mode == ExperimentMode::AdaptThenSegJoint) sources.push_back({&seg_y, Domain::Y});
    train_segmentation(config, sources, bundle, state, config.seg_iterations);

    FoldResult r;
    r.fold = static_cast<int>(f);
    r.cases = evaluate_cases(bundle, Domain::Y, y_test);
    for (const auto& c : r.cases) {
      r.dice += c.dice / static_cast<double>(r.cases.size());
      r.jaccard += c.jaccard / static_cast<double>(r.cases.size());
    }
    if (progress) {
      char msg[120];
      std::snprintf(msg, sizeof msg, "fold %zu: dice %.4f jaccard %.4f", f, r.dice, r.jaccard);
      progress(msg);
    }
    report.folds.push_back(std::move(r));
  }
  return report;
}

}  // namespace wdgda
