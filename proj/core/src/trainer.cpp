// SPDX-License-Identifier: Apache-2.0
#include "catreid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <torch/torch.h>

#include <json.hpp>

#include "catreid/augment.hpp"
#include "catreid/errors.hpp"
#include "catreid/imageio.hpp"
#include "catreid/metriclearn.hpp"
#include "catreid/modelzoo.hpp"

namespace catreid {

namespace fs = std::filesystem;
using nlohmann::json;

SchedulerState::SchedulerState(const SchedulerSpec& spec, double lr0, bool monitor_minimize)
    : spec_(spec), lr0_(lr0), lr_(lr0), minimize_(monitor_minimize) {}

double SchedulerState::lr_for_epoch(int epoch) {
  if (spec_.kind == SchedulerSpec::Kind::step_decay) {
    const int steps = (epoch - 1) / spec_.step.interval_epochs;
    lr_ = lr0_ * std::pow(spec_.step.factor, steps);
  }
  return lr_;
}

void SchedulerState::observe(double metric) {
  if (spec_.kind != SchedulerSpec::Kind::plateau_decay) return;
  if (!has_best_) {
    has_best_ = true;
    best_ = metric;
    bad_epochs_ = 0;
    return;
  }
  const double delta = spec_.plateau.min_delta;
  const bool improved = minimize_ ? (best_ - metric > delta) : (metric - best_ > delta);
  if (improved) {
    best_ = metric;
    bad_epochs_ = 0;
  } else {
    if (++bad_epochs_ >= spec_.plateau.patience) {
      lr_ *= spec_.plateau.factor;
      bad_epochs_ = 0;
    }
  }
}

std::vector<double> replay_schedule(const SchedulerSpec& spec, double lr0,
                                    const std::vector<double>& epoch_metrics,
                                    bool monitor_minimize) {
  SchedulerState state(spec, lr0, monitor_minimize);
  std::vector<double> lrs;
  for (std::size_t e = 0; e < epoch_metrics.size(); ++e) {
    lrs.push_back(state.lr_for_epoch(static_cast<int>(e) + 1));
    state.observe(epoch_metrics[e]);
  }
  return lrs;
}

bool early_stop_check(const std::vector<EpochMetrics>& history, int patience_epochs,
                      double min_delta) {
  if (history.empty()) return false;
  double best = history.front().val_acc;
  int stale = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i].val_acc - best > min_delta) {
      best = history[i].val_acc;
      stale = 0;
    } else {
      ++stale;
    }
  }
  return stale >= patience_epochs;
}

namespace {

struct LabeledRecord {
  const ImageRecord* rec;
  int label;
};

std::string record_source(const ImageRecord& r) {
  return r.crop_path.empty() ? r.path : r.crop_path;
}

std::vector<LabeledRecord> split_records(const DatasetManifest& m, Split split,
                                         const std::map<std::string, int>& index) {
  std::vector<LabeledRecord> out;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    auto it = index.find(r.class_id);
    if (it == index.end()) continue;
    out.push_back({&r, it->second});
  }
  return out;
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups())
    static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
}

// Loads and stacks one batch. Train-time draws are keyed by
// (epoch, record index) so worker scheduling can never change them.
torch::Tensor make_batch(const std::vector<LabeledRecord>& records,
                         const std::vector<std::size_t>& indices, const TrainPipeline* train_pipe,
                         const EvalPipeline* eval_pipe, int epoch) {
  std::vector<torch::Tensor> images;
  images.reserve(indices.size());
  int w = -1, h = -1;
  for (std::size_t idx : indices) {
    const ImageU8 img = load_image(record_source(*records[idx].rec));
    if (w < 0) {
      w = img.width;
      h = img.height;
    } else if (img.width != w || img.height != h) {
      throw UserError("inconsistent input sizes in batch: " + record_source(*records[idx].rec) +
                      " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                      ", expected " + std::to_string(w) + "x" + std::to_string(h) +
                      " (did preprocess run?)");
    }
    const std::uint64_t key = (static_cast<std::uint64_t>(epoch) << 32) | idx;
    images.push_back(train_pipe ? to_tensor(train_pipe->apply(img, key))
                                : to_tensor(eval_pipe->apply(img)));
  }
  return torch::cat(images, 0);
}

torch::Tensor make_labels(const std::vector<LabeledRecord>& records,
                          const std::vector<std::size_t>& indices) {
  std::vector<std::int64_t> labels;
  labels.reserve(indices.size());
  for (std::size_t idx : indices) labels.push_back(records[idx].label);
  return torch::tensor(labels, torch::kInt64);
}

class RunDir {
 public:
  RunDir(const fs::path& dir, const RunConfig& cfg) : dir_(dir) {
    fs::create_directories(dir_);
    const json cfg_json = to_json(cfg);
    json wrapped = cfg_json;
    wrapped["config_hash"] = config_hash(cfg_json);
    std::ofstream out(dir_ / "config.json");
    out << wrapped.dump(2) << "\n";
    metrics_.open(dir_ / "metrics.csv");
    metrics_ << "epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
    metrics_.flush();
    log_.open(dir_ / "run.log");
  }

  void append(const EpochMetrics& m) {
    char line[256];
    std::snprintf(line, sizeof(line), "%d,%.10g,%.6f,%.6f,%.6f,%.6f\n", m.epoch, m.lr,
                  m.train_loss, m.train_acc, m.val_loss, m.val_acc);
    metrics_ << line;
    metrics_.flush();
  }

  void log(const std::string& msg) {
    log_ << msg << "\n";
    log_.flush();
  }

  void mark_best(int epoch, double val_acc) {
    std::ofstream out(dir_ / "best.json");
    out << json{{"epoch", epoch}, {"val_acc", val_acc}}.dump() << "\n";
  }

  const fs::path& path() const { return dir_; }
  fs::path ckpt_best() const { return dir_ / "ckpt_best.pt"; }
  fs::path ckpt_last() const { return dir_ / "ckpt_last.pt"; }

 private:
  fs::path dir_;
  std::ofstream metrics_;
  std::ofstream log_;
};

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, int batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void abort_on_nonfinite(double loss, RunDir& run, const std::vector<LabeledRecord>& records,
                        const std::vector<std::size_t>& batch, int epoch) {
  if (std::isfinite(loss)) return;
  std::ostringstream msg;
  msg << "non-finite loss at epoch " << epoch << "; batch:";
  for (std::size_t idx : batch) msg << " " << record_source(*records[idx].rec);
  run.log(msg.str());
  throw UserError(msg.str());
}

}  // namespace

TrainResult train_classifier(const RunConfig& cfg, const DatasetManifest& manifest,
                             const fs::path& run_dir) {
  cfg.validate();
  if (cfg.is_siamese()) throw UserError("train_classifier: cfg.mode must be transfer or finetune");
  if (!manifest.split_params)
    throw UserError("manifest has no split; run split before training");

  torch::manual_seed(cfg.seed);
  const auto index = manifest.class_index();
  const int num_classes = static_cast<int>(index.size());
  auto train_recs = split_records(manifest, Split::train, index);
  auto val_recs = split_records(manifest, Split::val, index);
  if (train_recs.empty() || val_recs.empty())
    throw UserError("train/val split is empty; cannot train");

  ModelOptions mopts;
  mopts.frozen_stats = cfg.frozen_stats;
  Classifier model = build_classifier(cfg.backbone, num_classes, cfg.train_mode(), mopts);

  RunDir run(run_dir, cfg);
  run.log(format(trainable_report(*model)));

  torch::optim::AdamW optimizer(model->trainable_parameters(),
                                torch::optim::AdamWOptions(cfg.lr0).weight_decay(cfg.weight_decay));
  const bool minimize = cfg.scheduler.plateau.monitored != "val_acc";
  SchedulerState scheduler(cfg.scheduler, cfg.lr0, minimize);

  const TrainPipeline train_pipe(cfg.augment, cfg.seed);
  const EvalPipeline eval_pipe(cfg.augment);

  TrainResult result;
  result.run_dir = run_dir;
  double best_val_acc = -1.0;

  for (int epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
    const double lr = scheduler.lr_for_epoch(epoch);
    set_lr(optimizer, lr);

    std::vector<std::size_t> order(train_recs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto shuffle_stream = rng::derive(cfg.seed, "batches", static_cast<std::uint64_t>(epoch));
    shuffle_stream.shuffle(order);

    model->train(true);
    double loss_sum = 0;
    std::int64_t correct = 0, seen = 0;
    for (const auto& batch : chunk(order, cfg.batch_size)) {
      const torch::Tensor input = make_batch(train_recs, batch, &train_pipe, nullptr, epoch);
      const torch::Tensor labels = make_labels(train_recs, batch);
      optimizer.zero_grad();
      const torch::Tensor logits = model->forward(input);
      const torch::Tensor loss = torch::nn::functional::cross_entropy(logits, labels);
      const double loss_v = loss.item<double>();
      abort_on_nonfinite(loss_v, run, train_recs, batch, epoch);
      loss.backward();
      optimizer.step();
      loss_sum += loss_v * static_cast<double>(batch.size());
      correct += (logits.argmax(1) == labels).sum().item<std::int64_t>();
      seen += static_cast<std::int64_t>(batch.size());
    }

    model->eval();
    double val_loss_sum = 0;
    std::int64_t val_correct = 0, val_seen = 0;
    {
      torch::NoGradGuard no_grad;
      std::vector<std::size_t> val_order(val_recs.size());
      for (std::size_t i = 0; i < val_order.size(); ++i) val_order[i] = i;
      for (const auto& batch : chunk(val_order, cfg.batch_size)) {
        const torch::Tensor input = make_batch(val_recs, batch, nullptr, &eval_pipe, epoch);
        const torch::Tensor labels = make_labels(val_recs, batch);
        const torch::Tensor logits = model->forward(input);
        const torch::Tensor loss = torch::nn::functional::cross_entropy(logits, labels);
        val_loss_sum += loss.item<double>() * static_cast<double>(batch.size());
        val_correct += (logits.argmax(1) == labels).sum().item<std::int64_t>();
        val_seen += static_cast<std::int64_t>(batch.size());
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    m.val_loss = val_loss_sum / static_cast<double>(val_seen);
    m.val_acc = static_cast<double>(val_correct) / static_cast<double>(val_seen);
    result.history.push_back(m);
    run.append(m);

    save_module(*model, run.ckpt_last());
    if (m.val_acc > best_val_acc) {
      best_val_acc = m.val_acc;
      result.best_epoch = epoch;
      result.best_val_acc = m.val_acc;
      save_module(*model, run.ckpt_best());
      run.mark_best(epoch, m.val_acc);
    }

    scheduler.observe(minimize ? m.val_loss : m.val_acc);
    if (early_stop_check(result.history, cfg.early_stop.patience_epochs,
                         cfg.early_stop.min_delta)) {
      result.early_stopped = true;
      run.log("early stop at epoch " + std::to_string(epoch));
      break;
    }
  }
  return result;
}

TrainResult train_siamese(const RunConfig& cfg, const DatasetManifest& manifest,
                          const fs::path& run_dir) {
  cfg.validate();
  if (!cfg.is_siamese()) throw UserError("train_siamese: cfg.mode must be siamese");
  if (!manifest.split_params)
    throw UserError("manifest has no split; run split before training");

  torch::manual_seed(cfg.seed);
  const auto index = manifest.class_index();
  auto train_recs = split_records(manifest, Split::train, index);
  auto val_recs = split_records(manifest, Split::val, index);
  if (train_recs.empty() || val_recs.empty())
    throw UserError("train/val split is empty; cannot train");

  // per-class record indices for the P x K batch sampler
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < train_recs.size(); ++i) by_label[train_recs[i].label].push_back(i);
  if (by_label.size() < 2) throw UserError("siamese training needs at least 2 classes");

  ModelOptions mopts;
  mopts.frozen_stats = cfg.frozen_stats;
  Embedder model = build_embedder(cfg.backbone, cfg.embed_dim, !cfg.finetune_siamese,
                                  cfg.l2_normalize, mopts);

  RunDir run(run_dir, cfg);
  run.log(format(trainable_report(*model)));

  torch::optim::AdamW optimizer(model->trainable_parameters(),
                                torch::optim::AdamWOptions(cfg.lr0).weight_decay(cfg.weight_decay));
  SchedulerState scheduler(cfg.scheduler, cfg.lr0, true);

  const TrainPipeline train_pipe(cfg.augment, cfg.seed);
  const EvalPipeline eval_pipe(cfg.augment);

  auto triplet_torch = [&](const torch::Tensor& emb, const std::vector<Triplet>& triplets) {
    std::vector<std::int64_t> ai, pi, ni;
    for (const auto& t : triplets) {
      ai.push_back(t.anchor);
      pi.push_back(t.positive);
      ni.push_back(t.negative);
    }
    const auto a = emb.index_select(0, torch::tensor(ai, torch::kInt64));
    const auto p = emb.index_select(0, torch::tensor(pi, torch::kInt64));
    const auto n = emb.index_select(0, torch::tensor(ni, torch::kInt64));
    if (cfg.triplet_form == TripletForm::unhinged_printed) {
      // the additive, hinge-free form; kept for demonstrating its divergence
      return ((a - p).norm(2, 1) + (a - n).norm(2, 1) + cfg.margin).mean();
    }
    const auto d_ap = (a - p).pow(2).sum(1);
    const auto d_an = (a - n).pow(2).sum(1);
    return torch::relu(d_ap - d_an + cfg.margin).mean();
  };

  TrainResult result;
  result.run_dir = run_dir;
  double best_val_acc = -1.0;

  for (int epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
    const double lr = scheduler.lr_for_epoch(epoch);
    set_lr(optimizer, lr);

    // class-balanced batches: P classes x K samples under this epoch's stream
    auto epoch_stream = rng::derive(cfg.seed, "siamese_batches", static_cast<std::uint64_t>(epoch));
    std::vector<int> class_order;
    for (const auto& [label, recs] : by_label) {
      (void)recs;
      class_order.push_back(label);
    }
    epoch_stream.shuffle(class_order);

    model->train(true);
    double loss_sum = 0;
    std::int64_t triplet_count = 0, satisfied = 0;
    int batches_with_triplets = 0, batches_total = 0;

    for (std::size_t c0 = 0; c0 < class_order.size();
         c0 += static_cast<std::size_t>(cfg.classes_per_batch)) {
      const std::size_t c1 =
          std::min(class_order.size(), c0 + static_cast<std::size_t>(cfg.classes_per_batch));
      std::vector<std::size_t> batch;
      std::vector<int> labels;
      for (std::size_t c = c0; c < c1; ++c) {
        auto recs = by_label[class_order[c]];
        epoch_stream.shuffle(recs);
        for (int k = 0; k < cfg.samples_per_class; ++k) {
          // classes smaller than K contribute repeats
          batch.push_back(recs[static_cast<std::size_t>(k) % recs.size()]);
          labels.push_back(class_order[c]);
        }
      }
      batches_total++;

      const torch::Tensor input = make_batch(train_recs, batch, &train_pipe, nullptr, epoch);
      const torch::Tensor emb = model->forward(input);

      std::vector<std::vector<float>> emb_rows;
      if (cfg.mining == MiningMode::semi_hard) {
        const auto cpu = emb.detach().contiguous();
        for (std::int64_t i = 0; i < cpu.size(0); ++i) {
          const float* row = cpu[i].data_ptr<float>();
          emb_rows.emplace_back(row, row + cpu.size(1));
        }
      }
      auto triplet_stream =
          rng::derive(cfg.seed, "triplets", (static_cast<std::uint64_t>(epoch) << 32) | c0);
      const auto triplets =
          sample_triplets(labels, triplet_stream, cfg.mining,
                          cfg.mining == MiningMode::semi_hard ? &emb_rows : nullptr, cfg.margin);
      if (triplets.empty()) {
        run.log("epoch " + std::to_string(epoch) + ": batch without valid triplets, skipped");
        continue;
      }
      batches_with_triplets++;

      optimizer.zero_grad();
      const torch::Tensor loss = triplet_torch(emb, triplets);
      const double loss_v = loss.item<double>();
      abort_on_nonfinite(loss_v, run, train_recs, batch, epoch);
      loss.backward();
      optimizer.step();

      loss_sum += loss_v * static_cast<double>(triplets.size());
      triplet_count += static_cast<std::int64_t>(triplets.size());
      {
        torch::NoGradGuard no_grad;
        const auto cpu = emb.detach();
        for (const auto& t : triplets) {
          const double d_ap = (cpu[t.anchor] - cpu[t.positive]).pow(2).sum().item<double>();
          const double d_an = (cpu[t.anchor] - cpu[t.negative]).pow(2).sum().item<double>();
          if (d_an > d_ap + cfg.margin) satisfied++;
        }
      }
    }

    if (batches_with_triplets == 0)
      throw UserError("epoch " + std::to_string(epoch) + " produced no valid triplets in any of " +
                      std::to_string(batches_total) +
                      " batches; check class balance and batch composition");

    // validation: rebuild the gallery from the fixed seeded support set,
    // then score the val split by gallery KNN
    model->eval();
    const EmbedFn embed = make_embed_fn(model, cfg.augment);
    const EmbeddingGallery gallery =
        build_gallery(embed, manifest, cfg.support_per_class, cfg.seed, cfg.gallery_mode);

    std::vector<std::vector<float>> val_emb;
    std::vector<int> val_labels;
    std::int64_t val_correct = 0;
    for (const auto& lr_rec : val_recs) {
      const std::vector<float> e = embed(load_image(record_source(*lr_rec.rec)));
      if (classify(e, gallery, cfg.knn_k) == lr_rec.rec->class_id) val_correct++;
      val_emb.push_back(e);
      val_labels.push_back(lr_rec.label);
    }
    // val triplet loss over a fixed seeded sample, comparable across epochs
    double val_loss_sum = 0;
    std::int64_t val_triplets = 0;
    {
      auto val_stream = rng::derive(cfg.seed, "val_triplets");
      const auto triplets = sample_triplets(val_labels, val_stream, MiningMode::uniform);
      for (const auto& t : triplets) {
        val_loss_sum += cfg.triplet_form == TripletForm::unhinged_printed
                            ? triplet_loss_unhinged(val_emb[static_cast<std::size_t>(t.anchor)],
                                                    val_emb[static_cast<std::size_t>(t.positive)],
                                                    val_emb[static_cast<std::size_t>(t.negative)],
                                                    cfg.margin)
                            : triplet_loss(val_emb[static_cast<std::size_t>(t.anchor)],
                                           val_emb[static_cast<std::size_t>(t.positive)],
                                           val_emb[static_cast<std::size_t>(t.negative)], cfg.margin);
        val_triplets++;
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = triplet_count > 0 ? loss_sum / static_cast<double>(triplet_count) : 0.0;
    m.train_acc = triplet_count > 0
                      ? static_cast<double>(satisfied) / static_cast<double>(triplet_count)
                      : 0.0;  // margin-satisfaction rate
    m.val_loss = val_triplets > 0 ? val_loss_sum / static_cast<double>(val_triplets) : 0.0;
    m.val_acc = static_cast<double>(val_correct) / static_cast<double>(val_recs.size());
    result.history.push_back(m);
    run.append(m);

    save_module(*model, run.ckpt_last());
    if (m.val_acc > best_val_acc) {
      best_val_acc = m.val_acc;
      result.best_epoch = epoch;
      result.best_val_acc = m.val_acc;
      save_module(*model, run.ckpt_best());
      run.mark_best(epoch, m.val_acc);
      save_gallery(gallery, run.path() / "gallery.bin");  // gallery matching ckpt_best
    }

    scheduler.observe(m.val_loss);
    if (early_stop_check(result.history, cfg.early_stop.patience_epochs,
                         cfg.early_stop.min_delta)) {
      result.early_stopped = true;
      run.log("early stop at epoch " + std::to_string(epoch));
      break;
    }
  }
  return result;
}

TrainResult train_run(const RunConfig& cfg, const DatasetManifest& manifest,
                      const fs::path& run_dir) {
  return cfg.is_siamese() ? train_siamese(cfg, manifest, run_dir)
                          : train_classifier(cfg, manifest, run_dir);
}

std::vector<EpochMetrics> load_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open metrics file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,lr,train_loss,train_acc,val_loss,val_acc")
    throw UserError("unexpected metrics header in " + path.string());
  std::vector<EpochMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochMetrics m;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf", &m.epoch, &m.lr, &m.train_loss,
                    &m.train_acc, &m.val_loss, &m.val_acc) != 6)
      throw UserError("bad metrics row in " + path.string() + ": " + line);
    out.push_back(m);
  }
  return out;
}

}  // namespace catreid
