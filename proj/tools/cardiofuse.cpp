// cardiofuse command line: cohort generation, training, evaluation,
// ablation and reports. Progress goes to stderr, results to stdout and files.
#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>

#include "cardiofuse/error.hpp"
#include "cardiofuse/train/artifacts.hpp"

using namespace cardiofuse;
using namespace cardiofuse::train;
namespace fs = std::filesystem;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kMissingCohort = 3,
  kCorruptModel = 4,
  kUnknownPatient = 5,
};

struct ExitError : std::runtime_error {
  int code;
  ExitError(int c, const std::string& what) : std::runtime_error(what), code(c) {}
};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_file;
  std::string preset;
  std::string out;
  std::vector<std::string> sets;
};

// Keys a config file may carry besides the RunConfig table.
struct CliPaths {
  std::string cohort, model, segmenter, out;
  std::optional<std::uint64_t> seed;  // resolved from --seed or the config file
};

RunConfig resolve_config(const Globals& g, CliPaths& paths) {
  std::map<std::string, std::string> file;
  if (!g.config_file.empty()) file = read_settings(g.config_file);
  std::optional<std::uint64_t> seed = g.seed;
  for (auto it = file.begin(); it != file.end();) {
    const std::string& k = it->first;
    bool taken = true;
    if (k == "cohort") {
      if (paths.cohort.empty()) paths.cohort = it->second;
    } else if (k == "model") {
      if (paths.model.empty()) paths.model = it->second;
    } else if (k == "segmenter") {
      if (paths.segmenter.empty()) paths.segmenter = it->second;
    } else if (k == "out") {
      if (paths.out.empty()) paths.out = it->second;
    } else if (k == "seed") {
      if (!seed) {
        try {
          seed = std::stoull(it->second);
        } catch (const std::exception&) {
          throw ExitError(kUsage, "config key 'seed': not an integer");
        }
      }
    } else {
      taken = false;
    }
    it = taken ? file.erase(it) : std::next(it);
  }
  if (!g.preset.empty()) file["preset"] = g.preset;
  RunConfig cfg;
  try {
    cfg = apply_settings(preset_config("desk"), file);
    if (seed) cfg.set_seed(*seed);
    for (const auto& kv : g.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
      apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
  } catch (const std::invalid_argument& e) {
    throw ExitError(kUsage, e.what());
  }
  if (paths.out.empty()) paths.out = g.out;
  paths.seed = seed;
  return cfg;
}

void log_run(const fs::path& dir, const std::string& what) {
  std::ofstream log(dir / "run.log", std::ios::app);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  log << buf << " " << what << "\n";
}

fs::path require_out(const CliPaths& p) {
  if (p.out.empty()) throw ExitError(kUsage, "--out is required");
  fs::create_directories(p.out);
  return p.out;
}

cohort::Cohort open_cohort(const std::string& dir) {
  if (dir.empty()) throw ExitError(kUsage, "--cohort is required");
  if (!fs::exists(fs::path(dir) / "manifest.json")) throw ExitError(kMissingCohort, "no cohort at " + dir);
  try {
    return cohort::load_cohort(dir);
  } catch (const FormatError& e) {
    throw ExitError(kMissingCohort, std::string("cohort unreadable: ") + e.what());
  }
}

ModelArtifacts open_model(const std::string& dir) {
  if (dir.empty()) throw ExitError(kUsage, "--model is required");
  try {
    return load_model(dir);
  } catch (const FormatError& e) {
    throw ExitError(kCorruptModel, std::string("model unreadable: ") + e.what());
  }
}

cine::Segmenter open_segmenter(const std::string& dir) {
  try {
    return load_segmenter(dir);
  } catch (const FormatError& e) {
    throw ExitError(kCorruptModel, std::string("segmenter unreadable: ") + e.what());
  }
}

void progress(const std::string& tag, const MetricRecord& r) {
  std::fprintf(stderr, "[%s] epoch %zu train_loss %.4f test_loss %.4f", tag.c_str(), r.epoch, r.train_loss, r.test_loss);
  if (r.acc_integrated) std::fprintf(stderr, " integrated %.1f%%", 100 * *r.acc_integrated);
  if (r.dsc) std::fprintf(stderr, " dsc %.4f hd95 %.2f", *r.dsc, *r.hd);
  std::fprintf(stderr, "\n");
}

void write_text(const fs::path& path, const std::string& s) {
  std::ofstream out(path, std::ios::binary);
  out << s;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void check_frame_size(const cohort::Cohort& c, const cine::SegmenterConfig& m) {
  if (c.spec.cine_height != m.height || c.spec.cine_width != m.width)
    throw ExitError(kUsage, "segmenter frames are " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                                " but the cohort cine is " + std::to_string(c.spec.cine_height) + "x" +
                                std::to_string(c.spec.cine_width) + "; set seg.height/seg.width");
}

// Text model and segmenter for a fusion run: the segmenter is loaded when a
// directory is given and trained otherwise.
struct Encoders {
  TextModel text;
  cine::Segmenter seg;
};

Encoders fit_encoders(const cohort::Cohort& c, const Split& split, const RunConfig& cfg, const std::string& seg_dir,
                      const fs::path& out) {
  Encoders e;
  if (!seg_dir.empty()) {
    e.seg = open_segmenter(seg_dir);
  } else {
    check_frame_size(c, cfg.seg.model);
    auto r = train_segmenter(c, split, cfg.seg, [](const MetricRecord& m) { progress("seg", m); });
    r.trace.write_csv(out / "seg_trace.csv");
    e.seg = std::move(r.model);
  }
  MetricTrace text_trace;
  e.text = pretrain_text(c, split, cfg.text, [&](const MetricRecord& m) {
    progress("text", m);
    text_trace.add(m);
  });
  text_trace.write_csv(out / "text_trace.csv");
  return e;
}

int cmd_cohort(std::size_t n, std::size_t n_cine, std::size_t h, std::size_t w, std::size_t d, const Globals& g,
               CliPaths& paths) {
  resolve_config(g, paths);
  cohort::CohortSpec spec;
  spec.n_clinical = n;
  spec.n_cine = n_cine;
  spec.cine_height = h;
  spec.cine_width = w;
  spec.cine_depth = d;
  if (paths.seed) spec.seed = *paths.seed;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ExitError(kUsage, e.what());
  }
  const fs::path out = require_out(paths);
  const auto c = cohort::generate_cohort(spec);
  cohort::save_cohort(c, out);
  std::printf("%-12s %12s %12s %12s %12s\n", "indicator", "mean", "target", "std", "target");
  for (const auto& r : cohort::calibration_summary(c))
    std::printf("%-12s %12.4f %12.4f %12.4f %12.4f\n", r.name.c_str(), r.sample_mean, r.target_mean, r.sample_std, r.target_std);
  std::printf("wrote %zu patients (%zu with cine) to %s\n", c.patients.size(), n_cine, out.c_str());
  return kOk;
}

int cmd_train_seg(const Globals& g, CliPaths& paths) {
  const RunConfig cfg = resolve_config(g, paths);
  const auto c = open_cohort(paths.cohort);
  check_frame_size(c, cfg.seg.model);
  const fs::path out = require_out(paths);
  const Split split = make_split(c, cfg.split_seed);
  const auto r = train_segmenter(c, split, cfg.seg, [](const MetricRecord& m) { progress("seg", m); });
  save_segmenter(out, r.model);
  r.trace.write_csv(out / "trace.csv");
  std::printf("test dice %.4f (pooled %.4f) hd95 %.3f over %zu volumes\n", r.final.dsc, r.final.dsc_pooled, r.final.hd95,
              r.final.volumes);
  log_run(out, "train seg cohort=" + paths.cohort);
  return kOk;
}

int cmd_train_fuse(const Globals& g, CliPaths& paths) {
  const RunConfig cfg = resolve_config(g, paths);
  const auto c = open_cohort(paths.cohort);
  const fs::path out = require_out(paths);
  const Split split = make_split(c, cfg.split_seed);
  auto enc = fit_encoders(c, split, cfg, paths.segmenter, out);
  const auto f = build_features(c, split, enc.text, enc.seg);
  auto r = train_fusion(c, split, f, cfg.fusion, cfg.strategy, cfg.subset, [](const MetricRecord& m) { progress("fuse", m); });
  r.trace.write_csv(out / "trace.csv");
  save_model(out, {cfg, std::move(enc.text), std::move(enc.seg), f.schema, std::move(r.model)});
  std::printf("test integrated accuracy %.2f%% (death %.2f%%, macces %.2f%%, risk %.2f%%, cause %.2f%%)\n",
              100 * r.final.integrated(), 100 * r.final.acc_death, 100 * r.final.acc_macces, 100 * r.final.acc_risk,
              100 * r.final.acc_cause);
  log_run(out, "train fuse cohort=" + paths.cohort);
  return kOk;
}

int cmd_eval(const Globals& g, CliPaths& paths) {
  resolve_config(g, paths);
  const auto a = open_model(paths.model);
  const auto c = open_cohort(paths.cohort);
  const Split split = make_split(c, a.config.split_seed);
  std::vector<const cohort::Patient*> all;
  for (const auto& p : c.patients) all.push_back(&p);
  const FeatureCache f = build_features(all, a.text, a.segmenter, a.schema);
  if (f.numeric.cols() != c.indicators.size() || a.schema.names != c.indicators)
    throw ExitError(kCorruptModel, "model schema does not match the cohort indicators");

  const auto e = evaluate(a.model, c, f, split.test, a.config.subset, a.config.strategy, a.config.fusion);
  std::printf("test patients %zu\n", split.test.size());
  std::printf("death      %6.2f%%\ncause      %6.2f%%\nmacces     %6.2f%%\nrisk       %6.2f%%\nintegrated %6.2f%%\n",
              100 * e.acc_death, 100 * e.acc_cause, 100 * e.acc_macces, 100 * e.acc_risk, 100 * e.integrated());
  std::printf("allocation text %.3f cine %.3f numeric %.3f\n", e.mean_allocation[0], e.mean_allocation[1],
              e.mean_allocation[2]);

  std::vector<std::size_t> rows(c.patients.size());
  std::iota(rows.begin(), rows.end(), 0);
  std::vector<bool> is_test(c.patients.size(), false);
  for (auto i : split.test) is_test[i] = true;
  RngStream unused(0);
  NoGradGuard guard;
  const auto out = a.model.forward(f, rows, a.config.subset, a.config.strategy, false, unused);
  const auto bs = fusion::bundles(out, a.config.fusion.thresholds);
  std::string jsonl;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& b = bs[i];
    nlohmann::json j{{"patient_id", c.patients[i].id},
                     {"split", is_test[i] ? "test" : "train"},
                     {"death_probability", b.death_probability},
                     {"cause", b.cause},
                     {"cause_probabilities", b.cause_probabilities},
                     {"days", b.days},
                     {"macces", b.macces},
                     {"macces_probabilities", b.macces_probabilities},
                     {"risk", std::string(fusion::risk_name(b.risk))},
                     {"allocation",
                      {{"text", b.allocation[0]}, {"cine", b.allocation[1]}, {"numeric", b.allocation[2]}}},
                     {"strategy", a.config.strategy.id()}};
    jsonl += j.dump() + "\n";
  }
  const fs::path pred = paths.out.empty() ? fs::path(paths.model) / "predictions.jsonl" : fs::path(paths.out);
  if (pred.has_parent_path()) fs::create_directories(pred.parent_path());
  write_text(pred, jsonl);
  std::printf("wrote %s\n", pred.c_str());
  return kOk;
}

int cmd_ablate(const Globals& g, CliPaths& paths) {
  const RunConfig cfg = resolve_config(g, paths);
  const auto c = open_cohort(paths.cohort);
  const fs::path out = require_out(paths);
  const Split split = make_split(c, cfg.split_seed);
  const auto enc = fit_encoders(c, split, cfg, paths.segmenter, out);
  const auto f = build_features(c, split, enc.text, enc.seg);
  const auto report = ablate(c, split, f, cfg.fusion, [](const AblationRow& r) {
    std::fprintf(stderr, "[ablate] %-32s %.2f%%\n", r.label.c_str(), r.accuracy_percent());
  });
  write_text(out / "ablation.json", report.json());
  std::printf("%-22s %-34s %9s %9s\n", "column", "row", "accuracy", "reference");
  for (const auto& r : report.rows)
    std::printf("%-22s %-34s %8.2f%% %8.1f%%\n", r.column.c_str(), r.label.c_str(), r.accuracy_percent(), r.reference);
  log_run(out, "ablate cohort=" + paths.cohort);
  return kOk;
}

const cohort::Patient& find_patient(const cohort::Cohort& c, const std::string& id) {
  for (const auto& p : c.patients)
    if (p.id == id) return p;
  throw ExitError(kUnknownPatient, "unknown patient id '" + id + "'");
}

int cmd_timeline(const std::string& patient, std::size_t observations, double horizon, double step, const Globals& g,
                 CliPaths& paths) {
  resolve_config(g, paths);
  const auto a = open_model(paths.model);
  const auto c = open_cohort(paths.cohort);
  const auto& p = find_patient(c, patient);
  if (observations == 0) observations = p.text.size();
  std::vector<fusion::TimelinePoint> tl;
  try {
    tl = patient_timeline(a.model, a.text, a.segmenter, a.schema, p, observations, a.config.subset, a.config.strategy,
                          a.config.fusion.thresholds, horizon, step);
  } catch (const std::invalid_argument& e) {
    throw ExitError(kUsage, e.what());
  }
  std::string csv = "time,probability,level,observed\n";
  for (const auto& t : tl) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%g,%.17g,%s,%d\n", t.time, t.probability, fusion::risk_name(t.level),
                  t.observed ? 1 : 0);
    csv += buf;
  }
  if (paths.out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    const fs::path path(paths.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text(path, csv);
    std::printf("wrote %s\n", path.c_str());
  }
  return kOk;
}

int cmd_importance(const Globals& g, CliPaths& paths) {
  resolve_config(g, paths);
  const auto a = open_model(paths.model);
  const auto c = open_cohort(paths.cohort);
  const Split split = make_split(c, a.config.split_seed);
  std::vector<const cohort::Patient*> all;
  for (const auto& p : c.patients) all.push_back(&p);
  const FeatureCache f = build_features(all, a.text, a.segmenter, a.schema);
  const auto r = permutation_importance(a.model, c, f, split.test, default_importance_groups(), a.config.strategy,
                                        a.config.fusion, a.config.importance_repeats, a.config.fusion.seed);
  for (std::size_t i = 0; i < r.groups.size(); ++i)
    std::printf("%-22s share %.3f (drop %.4f)\n", r.groups[i].name.c_str(), r.share[i], r.drop[i]);
  if (!paths.out.empty()) {
    const fs::path path(paths.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text(path, r.json());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cardiofuse: multimodal cardiac outcome prediction on synthetic cohorts"};
  app.require_subcommand(1);
  Globals g;
  CliPaths paths;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for generation, splits and training");
  app.add_option("--config", g.config_file, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "Training preset")->check(CLI::IsMember({"desk", "full"}));
  app.add_option("--out", g.out, "Output directory or file");
  app.add_option("--set", g.sets, "Override one config key (key=value), repeatable");
  app.fallthrough();

  std::size_t n = 688, n_cine = 136, h = 64, w = 64, d = 8;
  auto* cohort = app.add_subcommand("cohort", "Generate a synthetic cohort");
  cohort->add_option("--n", n, "Clinical patients")->check(CLI::PositiveNumber);
  cohort->add_option("--cine", n_cine, "Patients with cine volumes");
  cohort->add_option("--height", h)->check(CLI::PositiveNumber);
  cohort->add_option("--width", w)->check(CLI::PositiveNumber);
  cohort->add_option("--depth", d)->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Train a model");
  train->require_subcommand(1);
  auto* seg = train->add_subcommand("seg", "Train the cine segmenter");
  auto* fuse = train->add_subcommand("fuse", "Train text encoder, segmenter and fusion model");
  for (auto* s : {seg, fuse}) s->add_option("--cohort", paths.cohort, "Cohort directory");
  fuse->add_option("--segmenter", paths.segmenter, "Trained segmenter directory (skips segmenter training)");

  auto* eval = app.add_subcommand("eval", "Evaluate a fusion model and write predictions");
  eval->add_option("--model", paths.model, "Model directory");
  eval->add_option("--cohort", paths.cohort, "Cohort directory");

  auto* abl = app.add_subcommand("ablate", "Train the eight modality and allocation cells");
  abl->add_option("--cohort", paths.cohort, "Cohort directory");
  abl->add_option("--segmenter", paths.segmenter, "Trained segmenter directory");

  std::string patient;
  std::size_t observations = 0;
  double horizon = 180, step = 10;
  auto* report = app.add_subcommand("report", "Reports from a trained model");
  report->require_subcommand(1);
  auto* timeline = report->add_subcommand("timeline", "Risk timeline CSV for one patient");
  timeline->add_option("--patient", patient, "Patient id")->required();
  timeline->add_option("--observations", observations, "Use only the first k text stages (0 = all)");
  timeline->add_option("--horizon", horizon, "Last day of the grid");
  timeline->add_option("--step", step, "Grid step in days");
  auto* importance = report->add_subcommand("importance", "Permutation importance JSON");
  for (auto* s : {timeline, importance}) {
    s->add_option("--model", paths.model, "Model directory");
    s->add_option("--cohort", paths.cohort, "Cohort directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (*cohort) return cmd_cohort(n, n_cine, h, w, d, g, paths);
    if (*seg) return cmd_train_seg(g, paths);
    if (*fuse) return cmd_train_fuse(g, paths);
    if (*eval) return cmd_eval(g, paths);
    if (*abl) return cmd_ablate(g, paths);
    if (*timeline) return cmd_timeline(patient, observations, horizon, step, g, paths);
    if (*importance) return cmd_importance(g, paths);
  } catch (const ExitError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
