// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "catreid/manifest.hpp"
#include "catreid/runconfig.hpp"

namespace catreid {

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
};

// Replayable learning-rate schedule. For epoch e (1-based), call
// lr_for_epoch(e) before training and observe(metric) after validation;
// plateau decay reduces once `patience` consecutive epochs fail to improve
// the monitored metric by more than min_delta.
class SchedulerState {
 public:
  SchedulerState(const SchedulerSpec& spec, double lr0, bool monitor_minimize = true);

  double lr_for_epoch(int epoch);
  void observe(double metric);
  double current_lr() const { return lr_; }

 private:
  SchedulerSpec spec_;
  double lr0_;
  double lr_;
  bool minimize_;
  bool has_best_ = false;
  double best_ = 0;
  int bad_epochs_ = 0;
};

// Replays a full metric stream through the scheduler; returns the lr used
// for each epoch. Lets tests and audits re-derive the metrics.csv lr
// column offline.
std::vector<double> replay_schedule(const SchedulerSpec& spec, double lr0,
                                    const std::vector<double>& epoch_metrics,
                                    bool monitor_minimize = true);

// True once the best val accuracy has gone patience_epochs consecutive
// epochs without improving by more than min_delta. The first epoch only
// establishes the baseline.
bool early_stop_check(const std::vector<EpochMetrics>& history, int patience_epochs,
                      double min_delta);

struct TrainResult {
  std::filesystem::path run_dir;
  std::vector<EpochMetrics> history;
  int best_epoch = 0;
  double best_val_acc = 0;
  bool early_stopped = false;
};

// Run directory layout: config.json, metrics.csv, ckpt_best.pt,
// ckpt_last.pt, best.json (+ gallery.bin for siamese runs).
TrainResult train_classifier(const RunConfig& cfg, const DatasetManifest& manifest,
                             const std::filesystem::path& run_dir);
TrainResult train_siamese(const RunConfig& cfg, const DatasetManifest& manifest,
                          const std::filesystem::path& run_dir);

// Dispatches on cfg.mode.
TrainResult train_run(const RunConfig& cfg, const DatasetManifest& manifest,
                      const std::filesystem::path& run_dir);

std::vector<EpochMetrics> load_metrics_csv(const std::filesystem::path& path);

}  // namespace catreid
