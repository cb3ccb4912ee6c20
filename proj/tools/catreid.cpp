// SPDX-License-Identifier: Apache-2.0
//
// catreid: dataset -> crops -> runs -> report, one subcommand per stage.
// Exit codes: 0 success, 1 user error, 2 environment error.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "catreid/detector.hpp"
#include "catreid/errors.hpp"
#include "catreid/evaluator.hpp"
#include "catreid/manifest.hpp"
#include "catreid/metriclearn.hpp"
#include "catreid/preprocess.hpp"
#include "catreid/report.hpp"
#include "catreid/runconfig.hpp"
#include "catreid/synth.hpp"
#include "catreid/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace catreid;

namespace {

void print_provenance(std::uint64_t seed, const json& effective_params) {
  std::cout << "seed=" << seed << " config_hash=" << config_hash(effective_params) << "\n";
}

struct SuiteConfig {
  json raw;
  std::string hash;
  fs::path manifest;
  fs::path work_dir = "runs";
  std::vector<RunConfig> runs;
};

SuiteConfig load_suite(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw UserError("cannot open config: " + file.string());
  SuiteConfig suite;
  try {
    in >> suite.raw;
  } catch (const json::parse_error& e) {
    throw UserError("bad config " + file.string() + ": " + e.what());
  }
  if (suite.raw.value("schema", "") != "catreid-config/1")
    throw UserError("config " + file.string() + " missing schema 'catreid-config/1'");
  suite.hash = config_hash(suite.raw);
  if (suite.raw.contains("paths")) {
    const auto& p = suite.raw["paths"];
    if (p.contains("manifest")) suite.manifest = p["manifest"].get<std::string>();
    if (p.contains("work_dir")) suite.work_dir = p["work_dir"].get<std::string>();
  }
  if (!suite.raw.contains("runs") || suite.raw["runs"].empty())
    throw UserError("config " + file.string() + " has no runs");
  // validate every run up front: a bad block fails before any work starts
  for (const auto& r : suite.raw["runs"]) {
    RunConfig cfg = run_config_from_json(r);
    cfg.suite_hash = suite.hash;
    suite.runs.push_back(std::move(cfg));
  }
  return suite;
}

int cmd_synth(const SynthOptions& opts, const fs::path& out_dir) {
  const SynthResult r = generate_synth_dataset(out_dir, opts);
  print_provenance(opts.seed, json{{"cmd", "synth"},
                                   {"classes", opts.classes},
                                   {"per_class", opts.per_class},
                                   {"seed", opts.seed}});
  std::cout << r.images << " images in " << opts.classes << " classes under " << r.root.string()
            << "\nstub detector boxes: " << r.boxes_json.string() << "\n";
  return 0;
}

int cmd_ingest(const fs::path& root, const fs::path& out, int min_images) {
  DatasetManifest m = ingest(root);
  const int total = static_cast<int>(m.records.size());
  int unreadable = 0;
  for (const auto& r : m.records)
    if (r.exclusion_reason == ExclusionReason::unreadable_file) unreadable++;
  m = filter_small_classes(m, min_images);
  int too_small_classes = 0;
  {
    std::set<std::string> small;
    for (const auto& r : m.records)
      if (r.exclusion_reason == ExclusionReason::class_too_small) small.insert(r.class_id);
    too_small_classes = static_cast<int>(small.size());
  }
  const json params{{"cmd", "ingest"}, {"root", root.string()}, {"min_images", min_images}};
  m.config_hash = config_hash(params);
  save_manifest(m, out);
  print_provenance(m.seed, params);
  std::cout << m.num_classes() << " classes, " << m.num_retained_images() << " images ("
            << total << " files scanned";
  if (unreadable > 0) std::cout << ", " << unreadable << " unreadable";
  if (too_small_classes > 0) std::cout << ", " << too_small_classes << " classes excluded as too small";
  std::cout << ")\nmanifest: " << out.string() << "\n";
  return 0;
}

int cmd_split(const fs::path& manifest_path, const fs::path& out, int val_per_class,
              int test_per_class, std::uint64_t seed) {
  DatasetManifest m = load_manifest(manifest_path);
  m = split_dataset(std::move(m), val_per_class, test_per_class, seed);
  const fs::path dest = out.empty() ? manifest_path : out;
  save_manifest(m, dest);
  print_provenance(seed, json{{"cmd", "split"},
                              {"val_per_class", val_per_class},
                              {"test_per_class", test_per_class},
                              {"seed", seed}});
  const int classes = m.num_classes();
  int train = 0, val = 0, test = 0;
  for (const auto& [cls, c] : m.stats()) {
    (void)cls;
    train += c.train;
    val += c.val;
    test += c.test;
  }
  std::cout << classes << " classes: " << train << " train, " << val << " val, " << test
            << " test\nmanifest: " << dest.string() << "\n";
  return 0;
}

int cmd_preprocess(const fs::path& manifest_path, const std::string& detector_spec,
                   const fs::path& out_dir, const PreprocessOptions& opts) {
  DatasetManifest m = load_manifest(manifest_path);
  const bool had_split = m.split_params.has_value();
  auto detector = make_detector(detector_spec);
  const PreprocessSummary s = preprocess_manifest(m, *detector, out_dir, opts);
  save_manifest(m, manifest_path);
  print_provenance(m.seed, json{{"cmd", "preprocess"},
                                {"detector", detector->describe()},
                                {"conf_threshold", opts.conf_threshold},
                                {"out_size", opts.out_size}});
  std::cout << s.cropped << " cropped, " << s.skipped << " skipped (already done), "
            << s.multi_subject << " multi-subject, " << s.no_detection << " without detection, "
            << s.unreadable << " unreadable, " << s.class_too_small
            << " excluded by the class-size filter\n";
  if (had_split && !m.split_params)
    std::cout << "note: new exclusions invalidated the split; run `catreid split` again\n";
  return 0;
}

int cmd_train(const fs::path& config_path, const std::string& run_name,
              const fs::path& manifest_override, const fs::path& workdir_override,
              bool allow_full_scale) {
  const SuiteConfig suite = load_suite(config_path);
  const RunConfig* chosen = nullptr;
  for (const auto& r : suite.runs)
    if (r.name == run_name) chosen = &r;
  if (!chosen) {
    std::string names;
    for (const auto& r : suite.runs) names += (names.empty() ? "" : ", ") + r.name;
    throw UserError("no run named '" + run_name + "' in " + config_path.string() +
                    " (available: " + names + ")");
  }
  if (chosen->full_scale && !allow_full_scale)
    throw UserError("run '" + run_name +
                    "' is marked full_scale (needs the full dataset and long training); pass "
                    "--full-scale to confirm");

  const fs::path manifest_path = manifest_override.empty() ? suite.manifest : manifest_override;
  if (manifest_path.empty())
    throw UserError("no manifest path: set paths.manifest in the config or pass --manifest");
  const DatasetManifest manifest = load_manifest(manifest_path);
  if (!manifest.split_params)
    throw UserError("manifest has no split assignments; run `catreid split` first");
  for (const auto& r : manifest.records)
    if (!r.excluded() && r.crop_path.empty())
      throw UserError("manifest has records without crops (e.g. " + r.path +
                      "); run `catreid preprocess` first");

  const fs::path work_dir = workdir_override.empty() ? suite.work_dir : workdir_override;
  const fs::path run_dir = work_dir / run_name;
  print_provenance(chosen->seed, suite.raw);
  const TrainResult result = train_run(*chosen, manifest, run_dir);
  std::cout << "run " << run_name << ": " << result.history.size() << " epochs, best val acc "
            << result.best_val_acc << " at epoch " << result.best_epoch
            << (result.early_stopped ? " (early stop)" : "") << "\nrun dir: " << run_dir.string()
            << "\n";
  return 0;
}

int cmd_eval(const fs::path& run_dir, const fs::path& manifest_path, const std::string& split) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  const Split s = split_from_string(split);
  const RunConfig cfg = load_run_config(run_dir);
  print_provenance(cfg.seed, json{{"cmd", "eval"}, {"run", run_dir.string()}, {"split", split}});
  const EvalResult r = evaluate_run(run_dir, manifest, s);
  std::printf("%s accuracy: %.4f (%d/%d)\npredictions: %s\n", split.c_str(), r.accuracy,
              r.correct, r.total, r.predictions_csv.string().c_str());
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const fs::path& out_prefix, bool force) {
  std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
  const EvalReport report = collect_report(dirs, force);
  const std::string md = render_markdown(report);
  const std::string csv = render_csv(report);
  const fs::path md_path = fs::path(out_prefix.string() + ".md");
  const fs::path csv_path = fs::path(out_prefix.string() + ".csv");
  std::ofstream(md_path) << md;
  std::ofstream(csv_path) << csv;
  print_provenance(0, json{{"cmd", "report"}, {"runs", run_dirs}});
  std::cout << md << "\nwrote " << md_path.string() << " and " << csv_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"individual-animal re-identification toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a deterministic synthetic dataset");
  SynthOptions synth_opts;
  std::string synth_out;
  synth->add_option("--classes", synth_opts.classes, "number of classes")->required();
  synth->add_option("--per-class", synth_opts.per_class, "images per class")->required();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_opts.seed, "generator seed");

  // ingest
  auto* ing = app.add_subcommand("ingest", "scan a folder-per-class tree into a manifest");
  std::string ing_root, ing_out;
  int ing_min_images = 8;
  ing->add_option("--root", ing_root, "dataset root (one directory per class)")->required();
  ing->add_option("--out", ing_out, "manifest output path")->required();
  ing->add_option("--min-images", ing_min_images, "exclude classes with fewer images");

  // split
  auto* spl = app.add_subcommand("split", "assign train/val/test per class");
  std::string spl_manifest, spl_out;
  int spl_val = 3, spl_test = 2;
  std::uint64_t spl_seed = 42;
  spl->add_option("--manifest", spl_manifest, "manifest path")->required();
  spl->add_option("--out", spl_out, "output manifest (default: in place)");
  spl->add_option("--val-per-class", spl_val, "validation images per class");
  spl->add_option("--test-per-class", spl_test, "test images per class");
  spl->add_option("--seed", spl_seed, "shuffle seed")->required();

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "detect subjects and write square 224x224 crops");
  std::string pre_manifest, pre_detector, pre_out;
  PreprocessOptions pre_opts;
  pre->add_option("--manifest", pre_manifest, "manifest path")->required();
  pre->add_option("--detector", pre_detector, "full | stub:boxes.json | cmd:COMMAND")->required();
  pre->add_option("--out", pre_out, "crop output directory")->required();
  pre->add_option("--threshold", pre_opts.conf_threshold, "detection confidence threshold");
  pre->add_option("--label", pre_opts.subject_label, "detector class label to keep");
  pre->add_option("--out-size", pre_opts.out_size, "crop side length");
  pre->add_option("--min-images", pre_opts.min_images, "class-size filter after exclusions");

  // train
  auto* trn = app.add_subcommand("train", "train one configured run");
  std::string trn_config, trn_run, trn_manifest, trn_workdir;
  bool trn_full_scale = false;
  trn->add_option("--config", trn_config, "suite config file")->required();
  trn->add_option("--run", trn_run, "run name from the config")->required();
  trn->add_option("--manifest", trn_manifest, "manifest override");
  trn->add_option("--workdir", trn_workdir, "work directory override");
  trn->add_flag("--full-scale", trn_full_scale, "confirm a full-scale run");

  // eval
  auto* evl = app.add_subcommand("eval", "score a trained run on a split");
  std::string evl_run, evl_manifest, evl_split = "test";
  evl->add_option("--run", evl_run, "run directory")->required();
  evl->add_option("--manifest", evl_manifest, "manifest path")->required();
  evl->add_option("--split", evl_split, "val or test");

  // report
  auto* rep = app.add_subcommand("report", "combine evaluated runs into the comparison grid");
  std::vector<std::string> rep_runs;
  std::string rep_out = "report";
  bool rep_force = false;
  rep->add_option("--runs", rep_runs, "run directories")->required()->expected(-1);
  rep->add_option("--out", rep_out, "output prefix");
  rep->add_flag("--force", rep_force, "combine runs with mismatched config hashes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_opts, synth_out);
    if (ing->parsed()) return cmd_ingest(ing_root, ing_out, ing_min_images);
    if (spl->parsed()) return cmd_split(spl_manifest, spl_out, spl_val, spl_test, spl_seed);
    if (pre->parsed()) return cmd_preprocess(pre_manifest, pre_detector, pre_out, pre_opts);
    if (trn->parsed())
      return cmd_train(trn_config, trn_run, trn_manifest, trn_workdir, trn_full_scale);
    if (evl->parsed()) return cmd_eval(evl_run, evl_manifest, evl_split);
    if (rep->parsed()) return cmd_report(rep_runs, rep_out, rep_force);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const EnvError& e) {
    std::cerr << "environment error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
