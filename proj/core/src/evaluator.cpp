// SPDX-License-Identifier: Apache-2.0
#include "catreid/evaluator.hpp"

#include <fstream>
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

RunConfig load_run_config(const fs::path& run_dir) {
  const fs::path file = run_dir / "config.json";
  std::ifstream in(file);
  if (!in) throw UserError("no run config at " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw UserError("bad run config " + file.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

static std::string stored_config_hash(const fs::path& run_dir) {
  std::ifstream in(run_dir / "config.json");
  if (!in) return "";
  json j;
  in >> j;
  return j.value("config_hash", "");
}

EvalResult evaluate_run(const fs::path& run_dir, const DatasetManifest& manifest, Split split) {
  if (split != Split::val && split != Split::test)
    throw UserError("evaluate_run: split must be val or test");
  const RunConfig cfg = load_run_config(run_dir);
  const fs::path ckpt = run_dir / "ckpt_best.pt";
  if (!fs::exists(ckpt)) throw UserError("no checkpoint in run dir " + run_dir.string());

  const auto index = manifest.class_index();
  std::vector<const ImageRecord*> queries;
  for (const auto& r : manifest.records)
    if (r.split == split) queries.push_back(&r);
  if (queries.empty())
    throw UserError(std::string("split '") + to_string(split) + "' is empty");

  const fs::path pred_path =
      run_dir / (std::string("predictions_") + to_string(split) + ".csv");
  std::ofstream pred(pred_path);
  pred << "path,true_class,predicted_class,score\n";

  int correct = 0;
  const EvalPipeline eval_pipe(cfg.augment);

  // the checkpoint supplies every weight; skip any pretrained-cache lookup
  BackboneSpec spec = cfg.backbone;
  spec.pretrained = false;

  if (cfg.is_siamese()) {
    Embedder model = build_embedder(spec, cfg.embed_dim, !cfg.finetune_siamese,
                                    cfg.l2_normalize, ModelOptions{{}, cfg.frozen_stats});
    load_module(*model, ckpt);
    const fs::path gallery_path = run_dir / "gallery.bin";
    if (!fs::exists(gallery_path))
      throw UserError("siamese run has no gallery.bin: " + run_dir.string());
    const EmbeddingGallery gallery = load_gallery(gallery_path);
    if (gallery.embed_dim != cfg.embed_dim)
      throw UserError("gallery dimension mismatch in " + run_dir.string());

    const EmbedFn embed = make_embed_fn(model, cfg.augment);
    for (const auto* r : queries) {
      const std::string source = r->crop_path.empty() ? r->path : r->crop_path;
      const std::vector<float> e = embed(load_image(source));
      const std::string pred_class = classify(e, gallery, cfg.knn_k);
      // score: Euclidean distance to the chosen class row
      double best_d = -1;
      for (int row = 0; row < gallery.rows(); ++row) {
        if (gallery.class_ids[static_cast<std::size_t>(row)] != pred_class) continue;
        double d = 0;
        const auto g = gallery.row(row);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double diff = static_cast<double>(e[i]) - g[i];
          d += diff * diff;
        }
        d = std::sqrt(d);
        if (best_d < 0 || d < best_d) best_d = d;
      }
      if (pred_class == r->class_id) correct++;
      pred << r->path << "," << r->class_id << "," << pred_class << "," << best_d << "\n";
    }
  } else {
    const int num_classes = static_cast<int>(index.size());
    Classifier model = build_classifier(spec, num_classes, cfg.train_mode(),
                                        ModelOptions{{}, cfg.frozen_stats});
    try {
      load_module(*model, ckpt);
    } catch (const c10::Error& e) {
      throw UserError("checkpoint/manifest class-count mismatch or corrupt checkpoint at " +
                      ckpt.string() + ": " + e.what_without_backtrace());
    }
    model->eval();

    std::vector<std::string> label_to_class(static_cast<std::size_t>(num_classes));
    for (const auto& [cls, label] : index) label_to_class[static_cast<std::size_t>(label)] = cls;

    torch::NoGradGuard no_grad;
    for (const auto* r : queries) {
      const std::string source = r->crop_path.empty() ? r->path : r->crop_path;
      const torch::Tensor logits = model->forward(to_tensor(eval_pipe.apply(load_image(source))));
      const torch::Tensor probs = torch::softmax(logits, 1).flatten();
      const std::int64_t arg = probs.argmax().item<std::int64_t>();
      const std::string pred_class = label_to_class[static_cast<std::size_t>(arg)];
      if (pred_class == r->class_id) correct++;
      pred << r->path << "," << r->class_id << "," << pred_class << ","
           << probs[arg].item<double>() << "\n";
    }
  }
  pred.flush();

  EvalResult result;
  result.correct = correct;
  result.total = static_cast<int>(queries.size());
  result.accuracy = static_cast<double>(correct) / static_cast<double>(result.total);
  result.predictions_csv = pred_path;

  json summary;
  summary["split"] = to_string(split);
  summary["accuracy"] = result.accuracy;
  summary["correct"] = result.correct;
  summary["total"] = result.total;
  summary["config_hash"] = stored_config_hash(run_dir);
  std::ofstream out(run_dir / (std::string("eval_") + to_string(split) + ".json"));
  out << summary.dump(2) << "\n";
  return result;
}

double recount_predictions(const fs::path& predictions_csv) {
  std::ifstream in(predictions_csv);
  if (!in) throw UserError("cannot open " + predictions_csv.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("path,true_class,predicted_class", 0) != 0)
    throw UserError("unexpected predictions header in " + predictions_csv.string());
  int correct = 0, total = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string path, truth, predicted;
    std::getline(ls, path, ',');
    std::getline(ls, truth, ',');
    std::getline(ls, predicted, ',');
    total++;
    if (truth == predicted) correct++;
  }
  if (total == 0) throw UserError("no predictions in " + predictions_csv.string());
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::string display_model_name(const RunConfig& cfg) {
  if (cfg.is_siamese()) {
    std::ostringstream name;
    name << "Siamese (" << cfg.lr0 << ")";
    return name.str();
  }
  switch (cfg.backbone.name) {
    case BackboneName::resnet50: return "ResNet50";
    case BackboneName::densenet121: return "DenseNet";
    case BackboneName::efficientnet_b4: return "EfficientNetB4";
    case BackboneName::convnext_tiny: return "ConvNeXt";
  }
  return "?";
}

std::string display_mode(const RunConfig& cfg) {
  if (cfg.is_siamese()) return "siamese";
  return cfg.mode == "finetune" ? "fine-tune" : "transfer";
}

EvalReport collect_report(const std::vector<fs::path>& run_dirs, bool force) {
  if (run_dirs.empty()) throw UserError("report: no run directories given");
  EvalReport report;
  std::string expected_hash;
  bool have_expected = false;
  for (const auto& dir : run_dirs) {
    const RunConfig cfg = load_run_config(dir);
    // runs that belong together came from one suite file and share its
    // hash; runs trained ad hoc carry only their own config hash
    const std::string hash = !cfg.suite_hash.empty() ? cfg.suite_hash : stored_config_hash(dir);
    if (!have_expected) {
      expected_hash = hash;
      have_expected = true;
    }
    if (!force && hash != expected_hash)
      throw UserError("config hash mismatch between runs (" + expected_hash + " vs " + hash +
                      " in " + dir.string() + "); pass --force to combine anyway");

    ReportRow row;
    row.model_name = display_model_name(cfg);
    row.mode = display_mode(cfg);
    for (const auto* split : {"val", "test"}) {
      const fs::path f = dir / (std::string("eval_") + split + ".json");
      if (!fs::exists(f)) continue;
      std::ifstream in(f);
      json j;
      in >> j;
      const double pct = j.at("accuracy").get<double>() * 100.0;
      if (std::string(split) == "val")
        row.val_acc = pct;
      else
        row.test_acc = pct;
    }
    if (!row.val_acc && !row.test_acc)
      throw UserError("run has no eval results (run `catreid eval` first): " + dir.string());
    report.rows.push_back(std::move(row));
  }
  report.validate();
  return report;
}

}  // namespace catreid
