// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "catreid/augment.hpp"
#include "catreid/metriclearn.hpp"

namespace catreid {

enum class BackboneName { resnet50, densenet121, efficientnet_b4, convnext_tiny };

BackboneName backbone_from_string(const std::string& s);
const char* to_string(BackboneName n);

struct BackboneSpec {
  BackboneName name = BackboneName::densenet121;
  bool pretrained = false;

  // penultimate width of the named architecture
  int feature_dim() const;
};

enum class TrainMode { transfer, finetune };

struct PlateauSpec {
  int patience = 5;
  double factor = 0.5;
  double min_delta = 0.0;
  std::string monitored = "val_loss";  // or "val_acc"
};

struct StepSpec {
  int interval_epochs = 10;
  double factor = 0.5;
};

struct SchedulerSpec {
  enum class Kind { plateau_decay, step_decay };
  Kind kind = Kind::plateau_decay;
  PlateauSpec plateau;
  StepSpec step;
};

struct EarlyStopSpec {
  int patience_epochs = 10;
  double min_delta = 0.001;  // val accuracy, i.e. 0.1 percentage points
};

enum class TripletForm { hinged_squared, unhinged_printed };

// One experiment. Field defaults follow the training recipes: AdamW,
// lr 0.01 + plateau(5, 0.5) for classifiers, lr 0.005 + step(10, 0.5) for
// the siamese branch.
struct RunConfig {
  std::string name;
  BackboneSpec backbone;
  std::string mode = "transfer";  // transfer | finetune | siamese
  double lr0 = 0.01;
  double weight_decay = 0.01;
  SchedulerSpec scheduler;
  std::string loss = "cross_entropy";  // cross_entropy | triplet
  TripletForm triplet_form = TripletForm::hinged_squared;
  int epochs_max = 50;
  int batch_size = 32;
  int classes_per_batch = 8;  // siamese batches: P classes x K samples
  int samples_per_class = 4;
  std::uint64_t seed = 42;
  AugmentConfig augment;
  EarlyStopSpec early_stop;

  // siamese branch
  double margin = 1.0;
  int embed_dim = 512;
  int support_per_class = 3;
  int knn_k = 1;
  bool l2_normalize = false;
  MiningMode mining = MiningMode::uniform;
  GalleryMode gallery_mode = GalleryMode::class_mean;
  bool finetune_siamese = false;  // replicate the slow-improvement failure mode

  // transfer mode: keep frozen-backbone normalization statistics in
  // inference mode during training
  bool frozen_stats = true;

  bool full_scale = false;  // refuse to run without an explicit CLI opt-in

  // hash of the suite file this run came from; runs sharing it may be
  // combined into one report without --force
  std::string suite_hash;

  bool is_siamese() const { return mode == "siamese"; }
  TrainMode train_mode() const;

  // enforces the mode/loss pairing and value ranges; throws UserError
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const AugmentConfig& cfg);
AugmentConfig augment_config_from_json(const nlohmann::json& j);

// FNV-1a over the canonical (sorted-key) JSON dump. Recorded in artifacts
// so mismatched pipelines refuse to combine.
std::string config_hash(const nlohmann::json& j);

}  // namespace catreid
