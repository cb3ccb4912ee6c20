// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "catreid/manifest.hpp"
#include "catreid/report.hpp"
#include "catreid/runconfig.hpp"

namespace catreid {

struct EvalResult {
  double accuracy = 0;  // fraction in [0,1]
  int correct = 0;
  int total = 0;
  std::filesystem::path predictions_csv;
};

// Loads the best checkpoint from run_dir and scores the requested split.
// Classifier runs predict by argmax logit; siamese runs classify against
// the persisted gallery. Every per-image prediction lands in
// predictions_<split>.csv so aggregates stay auditable, and the summary is
// written to eval_<split>.json.
EvalResult evaluate_run(const std::filesystem::path& run_dir, const DatasetManifest& manifest,
                        Split split);

RunConfig load_run_config(const std::filesystem::path& run_dir);

// Independent recount of a predictions CSV; must agree with
// EvalResult.accuracy exactly.
double recount_predictions(const std::filesystem::path& predictions_csv);

// Display name for the comparison grid ("DenseNet", "Siamese (0.005)", ...).
std::string display_model_name(const RunConfig& cfg);
std::string display_mode(const RunConfig& cfg);

// Collects eval_{val,test}.json summaries from run directories into a
// report; refuses to mix config hashes unless force is set.
EvalReport collect_report(const std::vector<std::filesystem::path>& run_dirs, bool force = false);

}  // namespace catreid
