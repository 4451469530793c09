#include "cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "manifest.hpp"
#include "wdgda/errors.hpp"
#include "wdgda/gradcheck.hpp"
#include "wdgda/training.hpp"

namespace wdgda::cli {

namespace fs = std::filesystem;

namespace {

Domain parse_domain(const std::string& s) {
  if (s == "x" || s == "X") return Domain::X;
  if (s == "y" || s == "Y") return Domain::Y;
  throw ConfigError("domain must be x or y, got '" + s + "'");
}

Dims3 parse_dims(const std::string& s) {
  Dims3 d{};
  char tail = 0;
  long long a = 0, b = 0, c = 0;
  if (std::sscanf(s.c_str(), "%lld,%lld,%lld%c", &a, &b, &c, &tail) != 3 || a <= 0 || b <= 0 || c <= 0)
    throw ConfigError("--dims expects D,H,W with positive integers, got '" + s + "'");
  d = {a, b, c};
  return d;
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<Case> load_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("data directory '" + dir + "' does not exist");
  auto cases = load_cases(dir);
  if (cases.empty()) throw IoError("data directory '" + dir + "' holds no volumes");
  return cases;
}

struct ConfigOptions {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* app, bool required) {
    auto* o = app->add_option("--config", file, "flat key = value configuration file");
    if (required) o->required();
    app->add_option("--set", overrides, "extra key=value settings applied after the file");
  }

  TrainConfig load(RunManifest& m) const {
    TrainConfig c;
    if (!file.empty()) {
      c = load_config(file);
      m.add_input_file(file);
    }
    std::string extra;
    for (const auto& o : overrides) extra += o + "\n";
    return parse_config(extra, c);
  }
};

RunManifest start(const std::string& command, const std::vector<std::string>& args) {
  RunManifest m;
  m.command = command;
  m.argv = args;
  m.started = utc_timestamp();
  return m;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out, domain = "x", dims = "10,64,64";
  std::int64_t count = 0, start = 0;
  std::uint64_t seed = 1, variant = 0;
};

int synth_data(const SynthArgs& a, RunManifest& m, std::ostream& out) {
  const auto domain = parse_domain(a.domain);
  const auto dims = parse_dims(a.dims);
  if (a.count <= 0) throw ConfigError("--count must be positive");
  if (a.variant > 0 && domain != Domain::Y) throw ConfigError("--variant applies to domain y only");
  make_dir(a.out);
  m.output_dir = a.out;
  m.seeds["seed"] = a.seed;
  for (std::int64_t i = a.start; i < a.start + a.count; ++i) {
    const auto geo = mix_seed(a.seed, static_cast<std::uint64_t>(i));
    const auto spec = a.variant > 0 ? multimodal_phantom_spec(a.variant, geo, dims)
                                    : default_phantom_spec(domain, geo, dims);
    auto [vol, mask] = generate_phantom(spec);
    char id[32];
    std::snprintf(id, sizeof id, "%s%03lld", domain == Domain::X ? "x" : "y", static_cast<long long>(i));
    save_case(a.out, {id, std::move(vol), std::move(mask)});
    m.outputs.push_back((fs::path(a.out) / (std::string(id) + ".wdgv")).string());
    m.outputs.push_back((fs::path(a.out) / (std::string(id) + ".wdgm")).string());
  }
  const auto manifest = (fs::path(a.out) / "manifest.json").string();
  m.outputs.push_back(manifest);
  m.write(manifest);
  out << "wrote " << a.count << " cases to " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainDaArgs {
  ConfigOptions config;
  std::string data_x, data_y, out, resume;
  std::optional<std::int64_t> iterations;
};

int train_da(const TrainDaArgs& a, RunManifest& m, std::ostream& out) {
  auto cfg = a.config.load(m);
  if (a.iterations) cfg.adapt_iterations = *a.iterations;
  cfg.net.validate();
  cfg.weights.validate();
  if (cfg.adapt_iterations < 0) throw ConfigError("adapt_iterations must be non-negative");

  const auto xs = normalized(load_dir(a.data_x));
  const auto ys = normalized(load_dir(a.data_y));
  m.add_input_dir(a.data_x);
  m.add_input_dir(a.data_y);

  ModelBundle bundle;
  TrainerState state;
  if (!a.resume.empty()) {
    auto ck = load_checkpoint(a.resume);
    m.add_input_file(a.resume);
    bundle = std::move(ck.bundle);
    state = std::move(ck.state);
    cfg.net = bundle.config;
  } else {
    bundle = make_bundle(cfg.net);
  }
  m.config_text = config_to_text(cfg);
  m.seeds = {{"seed", cfg.seed}, {"init_seed", cfg.net.init_seed}};

  const auto patch = cfg.patch_dims();
  PatchStream sx(xs, patch, mix_seed(cfg.seed, 10), cfg.augment, cfg.net.dtype, std::nullopt, cfg.fixed_batches);
  PatchStream sy(ys, patch, mix_seed(cfg.seed, 11), cfg.augment, cfg.net.dtype, std::nullopt, cfg.fixed_batches);

  make_dir(a.out);
  m.output_dir = a.out;
  const auto csv_path = (fs::path(a.out) / "losses.csv").string();
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot open '" + csv_path + "' for writing");
  csv << LossReport::csv_header() << "\n";
  const auto until = cfg.adapt_iterations;
  const auto begin = state.iteration;
  const auto every = std::max<std::int64_t>(1, (until - begin) / 10);
  train_adaptation(cfg, sx, sy, bundle, state, until, [&](const LossReport& r) {
    csv << r.csv_row() << "\n" << std::flush;
    if (!csv) throw IoError("short write to '" + csv_path + "'");
    if ((r.step - begin + 1) % every == 0 || r.step + 1 == until)
      out << "iteration " << r.step + 1 << "/" << until << " total " << r.total << "\n" << std::flush;
  });

  const auto ck_path = (fs::path(a.out) / "checkpoint.wdgc").string();
  save_checkpoint(ck_path, bundle, state);
  const auto cfg_path = (fs::path(a.out) / "config.txt").string();
  write_text(cfg_path, m.config_text);
  const auto manifest = (fs::path(a.out) / "manifest.json").string();
  m.outputs = {csv_path, ck_path, cfg_path, manifest};
  m.write(manifest);
  out << "checkpoint " << ck_path << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct ExportArgs {
  std::string checkpoint, in, out, domain;
};

int export_content_cmd(const ExportArgs& a, RunManifest& m, std::ostream& out) {
  Domain domain;
  if (!a.domain.empty()) {
    domain = parse_domain(a.domain);
  } else {
    const auto stem = fs::path(a.in).filename().string();
    if (stem.empty() || (stem[0] != 'x' && stem[0] != 'y'))
      throw ConfigError("cannot infer the domain of '" + a.in + "'; pass --domain x|y");
    domain = stem[0] == 'x' ? Domain::X : Domain::Y;
  }
  const auto ck = load_checkpoint(a.checkpoint);
  m.add_input_file(a.checkpoint);
  const auto vol = read_volume(a.in);
  m.add_input_file(a.in);
  const auto exported = export_content(ck.bundle, domain, normalize(vol));
  write_volume(a.out, exported);
  const auto manifest = a.out + ".manifest.json";
  m.output_dir = fs::path(a.out).parent_path().string();
  m.outputs = {a.out, manifest};
  m.write(manifest);
  out << "exported " << domain_name(domain) << " content of " << a.in << " to " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainSegArgs {
  ConfigOptions config;
  std::string checkpoint, data, out, domain = "x", validation;
  std::optional<std::int64_t> iterations;
};

int train_seg(const TrainSegArgs& a, RunManifest& m, std::ostream& out) {
  auto cfg = a.config.load(m);
  if (a.iterations) cfg.seg_iterations = *a.iterations;
  const auto domain = parse_domain(a.domain);
  ModelBundle bundle;
  TrainerState state;
  if (!a.checkpoint.empty()) {
    auto ck = load_checkpoint(a.checkpoint);
    m.add_input_file(a.checkpoint);
    bundle = std::move(ck.bundle);
    state = std::move(ck.state);
    cfg.net = bundle.config;
  } else {
    cfg.net.validate();
    bundle = make_bundle(cfg.net);
  }
  m.config_text = config_to_text(cfg);
  m.seeds = {{"seed", cfg.seed}, {"init_seed", cfg.net.init_seed}};

  const auto cases = normalized(load_dir(a.data));
  m.add_input_dir(a.data);
  std::vector<Case> val;
  if (!a.validation.empty()) {
    val = normalized(load_dir(a.validation));
    m.add_input_dir(a.validation);
  }
  PatchStream stream(cases, cfg.patch_dims(), mix_seed(cfg.seed, 12), cfg.augment, cfg.net.dtype);

  make_dir(a.out);
  m.output_dir = a.out;
  const auto rows = train_segmentation(cfg, {{&stream, domain}}, bundle, state, cfg.seg_iterations,
                                       val.empty() ? nullptr : &val, Domain::Y);
  std::string log = "step,loss,dice,jaccard\n";
  for (const auto& r : rows) {
    log += std::to_string(r.step) + "," + fmt(r.loss) + "," + (r.dice < 0 ? "" : fmt(r.dice)) + "," +
           (r.jaccard < 0 ? "" : fmt(r.jaccard)) + "\n";
    if (r.dice >= 0) out << "step " << r.step << " validation dice " << r.dice << "\n";
  }
  const auto log_path = (fs::path(a.out) / "seg_log.csv").string();
  write_text(log_path, log);
  const auto ck_path = (fs::path(a.out) / "checkpoint.wdgc").string();
  save_checkpoint(ck_path, bundle, state);
  const auto manifest = (fs::path(a.out) / "manifest.json").string();
  m.outputs = {log_path, ck_path, manifest};
  m.write(manifest);
  out << "segmentation trained for " << rows.size() << " steps; checkpoint " << ck_path << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string checkpoint, data, out, domain = "y", pred;
};

int evaluate(const EvaluateArgs& a, RunManifest& m, std::ostream& out) {
  if (a.checkpoint.empty() == a.pred.empty())
    throw ConfigError("evaluate needs exactly one of --checkpoint or --pred");
  const auto cases = load_dir(a.data);
  m.add_input_dir(a.data);
  std::vector<CaseScore> scores;
  if (!a.pred.empty()) {
    m.add_input_dir(a.pred);
    for (const auto& c : cases) {
      const auto p = read_mask((fs::path(a.pred) / (c.id + ".wdgm")).string());
      if (p.dims != c.mask.dims) throw ShapeError("prediction for " + c.id + " differs in dims");
      scores.push_back({c.id, dice_metric(p.labels, c.mask.labels), jaccard_metric(p.labels, c.mask.labels)});
    }
  } else {
    const auto ck = load_checkpoint(a.checkpoint);
    m.add_input_file(a.checkpoint);
    scores = evaluate_cases(ck.bundle, parse_domain(a.domain), normalized(cases));
  }
  std::string csv = "case,dice,jaccard\n";
  double md = 0.0, mj = 0.0;
  for (const auto& s : scores) {
    csv += s.id + "," + fmt(s.dice) + "," + fmt(s.jaccard) + "\n";
    md += s.dice / static_cast<double>(scores.size());
    mj += s.jaccard / static_cast<double>(scores.size());
  }
  csv += "mean," + fmt(md) + "," + fmt(mj) + "\n";
  write_text(a.out, csv);
  const auto manifest = a.out + ".manifest.json";
  m.output_dir = fs::path(a.out).parent_path().string();
  m.outputs = {a.out, manifest};
  m.write(manifest);
  out << "mean dice " << md << " jaccard " << mj << " over " << scores.size() << " cases\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct ExperimentArgs {
  ConfigOptions config;
  std::string mode, out;
};

int experiment(const ExperimentArgs& a, RunManifest& m, std::ostream& out) {
  auto cfg = a.config.load(m);
  if (!a.mode.empty()) cfg.mode = parse_mode(a.mode);
  cfg.validate();
  m.config_text = config_to_text(cfg);
  m.seeds = {{"seed", cfg.seed}, {"init_seed", cfg.net.init_seed}};
  make_dir(a.out);
  m.output_dir = a.out;
  const auto data = make_phantom_sets(cfg);
  out << mode_name(cfg.mode) << ": " << cfg.folds << " folds over " << data.x.size() << " cases per domain\n";
  const auto report = run_experiment(cfg, data, [&](const std::string& msg) { out << msg << "\n" << std::flush; });
  const auto csv_path = (fs::path(a.out) / "report.csv").string();
  write_text(csv_path, report.to_csv());
  const auto cfg_path = (fs::path(a.out) / "config.txt").string();
  write_text(cfg_path, m.config_text);
  const auto manifest = (fs::path(a.out) / "manifest.json").string();
  m.outputs = {csv_path, cfg_path, manifest};
  m.write(manifest);
  out << "mean dice " << report.mean_dice() << " (std " << report.std_dice() << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string suite;
  int points = 10;
  std::uint64_t seed = 1;
};

int gradcheck(const GradcheckArgs& a, std::ostream& out) {
  std::vector<GradcheckResult> results;
  auto append = [&](std::vector<GradcheckResult> r) { results.insert(results.end(), r.begin(), r.end()); };
  if (a.suite == "ops") {
    append(check_op_gradients(a.points, a.seed));
    append(check_op_gradients_f32(a.points, a.seed));
    append(check_second_order(a.points, a.seed));
  } else if (a.suite == "losses") {
    append(check_loss_gradients(a.points, a.seed));
  } else if (a.suite == "penalty") {
    append(check_penalty_gradients(a.points, a.seed));
  } else {
    throw ConfigError("--suite must be ops, losses or penalty");
  }
  const GradcheckResult* worst = nullptr;
  int failed = 0;
  for (const auto& r : results) {
    char line[200];
    std::snprintf(line, sizeof line, "%-4s %-44s %.3e (tol %.0e)\n", r.passed() ? "ok" : "FAIL",
                  r.name.c_str(), r.max_error, r.tolerance);
    out << line;
    if (!r.passed()) ++failed;
    if (!worst || r.max_error / r.tolerance > worst->max_error / worst->tolerance) worst = &r;
  }
  if (worst) out << "worst: " << worst->name << " error " << worst->max_error << "\n";
  out << results.size() - static_cast<std::size_t>(failed) << "/" << results.size() << " checks passed\n";
  return failed == 0 ? kOk : kNumeric;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unpaired domain adaptation for volumetric segmentation", "wdgda"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "write synthetic phantom volumes and masks");
  s->add_option("--out", synth.out)->required();
  s->add_option("--domain", synth.domain, "x or y");
  s->add_option("--count", synth.count)->required();
  s->add_option("--seed", synth.seed);
  s->add_option("--dims", synth.dims, "D,H,W");
  s->add_option("--start", synth.start, "first case index");
  s->add_option("--variant", synth.variant, "alternative y appearance (1 or 2)");

  TrainDaArgs tda;
  auto* t = app.add_subcommand("train-da", "train the adaptation networks");
  tda.config.attach(t, false);
  t->add_option("--data-x", tda.data_x)->required();
  t->add_option("--data-y", tda.data_y)->required();
  t->add_option("--out", tda.out)->required();
  t->add_option("--resume", tda.resume, "checkpoint to continue from");
  t->add_option("--iterations", tda.iterations, "overrides adapt_iterations");

  ExportArgs ex;
  auto* e = app.add_subcommand("export-content", "write the content-only image of a volume");
  e->add_option("--checkpoint", ex.checkpoint)->required();
  e->add_option("--in", ex.in)->required();
  e->add_option("--out", ex.out)->required();
  e->add_option("--domain", ex.domain, "x or y; inferred from the file name when omitted");

  TrainSegArgs tseg;
  auto* ts = app.add_subcommand("train-seg", "train the segmentation head");
  tseg.config.attach(ts, false);
  ts->add_option("--checkpoint", tseg.checkpoint, "adapted model; a fresh model when omitted");
  ts->add_option("--data", tseg.data)->required();
  ts->add_option("--out", tseg.out)->required();
  ts->add_option("--domain", tseg.domain, "domain of --data");
  ts->add_option("--validation", tseg.validation, "labelled target-domain cases scored every eval_every steps");
  ts->add_option("--iterations", tseg.iterations, "overrides seg_iterations");

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "Dice and Jaccard per case");
  v->add_option("--checkpoint", ev.checkpoint);
  v->add_option("--pred", ev.pred, "directory of predicted masks named like the targets");
  v->add_option("--data", ev.data)->required();
  v->add_option("--out", ev.out)->required();
  v->add_option("--domain", ev.domain, "domain of --data");

  ExperimentArgs xp;
  auto* x = app.add_subcommand("experiment", "k-fold experiment on generated phantoms");
  xp.config.attach(x, false);
  x->add_option("--mode", xp.mode);
  x->add_option("--out", xp.out)->required();

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  g->add_option("--suite", gc.suite)->required();
  g->add_option("--points", gc.points);
  g->add_option("--seed", gc.seed);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << "\n";
    return kUsage;
  }

  try {
    auto m = start(app.get_subcommands().front()->get_name(), args);
    if (s->parsed()) return synth_data(synth, m, out);
    if (t->parsed()) return train_da(tda, m, out);
    if (e->parsed()) return export_content_cmd(ex, m, out);
    if (ts->parsed()) return train_seg(tseg, m, out);
    if (v->parsed()) return evaluate(ev, m, out);
    if (x->parsed()) return experiment(xp, m, out);
    if (g->parsed()) return gradcheck(gc, out);
    return kUsage;
  } catch (const ConfigError& ex2) {
    err << "config error: " << ex2.what() << "\n";
    return kUsage;
  } catch (const ShapeError& ex2) {
    err << "geometry error: " << ex2.what() << "\n";
    return kUsage;
  } catch (const IoError& ex2) {
    err << "i/o error: " << ex2.what() << "\n";
    return kIo;
  } catch (const ParseError& ex2) {
    err << "i/o error: " << ex2.what() << "\n";
    return kIo;
  } catch (const NumericError& ex2) {
    err << "numeric error: " << ex2.what() << "\n";
    return kNumeric;
  } catch (const std::exception& ex2) {
    err << "internal error: " << ex2.what() << "\n";
    return kInvariant;
  }
}

}  // namespace wdgda::cli
