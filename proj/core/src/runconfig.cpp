// SPDX-License-Identifier: Apache-2.0
#include "catreid/runconfig.hpp"

#include <cstdio>

#include "catreid/errors.hpp"
#include "catreid/rng.hpp"

namespace catreid {

using nlohmann::json;

BackboneName backbone_from_string(const std::string& s) {
  if (s == "resnet50") return BackboneName::resnet50;
  if (s == "densenet121") return BackboneName::densenet121;
  if (s == "efficientnet_b4") return BackboneName::efficientnet_b4;
  if (s == "convnext_tiny") return BackboneName::convnext_tiny;
  throw UserError("unknown backbone '" + s +
                  "' (expected resnet50, densenet121, efficientnet_b4 or convnext_tiny)");
}

const char* to_string(BackboneName n) {
  switch (n) {
    case BackboneName::resnet50: return "resnet50";
    case BackboneName::densenet121: return "densenet121";
    case BackboneName::efficientnet_b4: return "efficientnet_b4";
    case BackboneName::convnext_tiny: return "convnext_tiny";
  }
  return "?";
}

int BackboneSpec::feature_dim() const {
  switch (name) {
    case BackboneName::resnet50: return 2048;
    case BackboneName::densenet121: return 1024;
    case BackboneName::efficientnet_b4: return 1792;
    case BackboneName::convnext_tiny: return 768;
  }
  return 0;
}

TrainMode RunConfig::train_mode() const {
  if (mode == "transfer") return TrainMode::transfer;
  if (mode == "finetune") return TrainMode::finetune;
  // siamese trains transfer-style unless the failure-replication flag is set
  if (mode == "siamese") return finetune_siamese ? TrainMode::finetune : TrainMode::transfer;
  throw UserError("unknown mode '" + mode + "'");
}

void RunConfig::validate() const {
  if (name.empty()) throw UserError("run config: name must not be empty");
  if (mode != "transfer" && mode != "finetune" && mode != "siamese")
    throw UserError("run '" + name + "': mode must be transfer, finetune or siamese");
  if (is_siamese() && loss != "triplet")
    throw UserError("run '" + name + "': mode=siamese requires loss=triplet");
  if (!is_siamese() && loss != "cross_entropy")
    throw UserError("run '" + name + "': mode=" + mode + " requires loss=cross_entropy");
  if (lr0 <= 0) throw UserError("run '" + name + "': lr0 must be > 0");
  if (epochs_max < 1) throw UserError("run '" + name + "': epochs_max must be >= 1");
  if (batch_size < 1) throw UserError("run '" + name + "': batch_size must be >= 1");
  if (is_siamese() && (classes_per_batch < 2 || samples_per_class < 2))
    throw UserError("run '" + name + "': siamese batches need >= 2 classes and >= 2 samples each");
  if (margin < 0) throw UserError("run '" + name + "': margin must be >= 0");
  if (embed_dim < 2) throw UserError("run '" + name + "': embed_dim must be >= 2");
  if (support_per_class < 1) throw UserError("run '" + name + "': support_per_class must be >= 1");
  if (knn_k < 1) throw UserError("run '" + name + "': knn_k must be >= 1");
  if (scheduler.plateau.patience < 1 || scheduler.step.interval_epochs < 1)
    throw UserError("run '" + name + "': scheduler patience/interval must be >= 1");
  for (double f : {scheduler.plateau.factor, scheduler.step.factor})
    if (f <= 0 || f >= 1) throw UserError("run '" + name + "': scheduler factor must lie in (0,1)");
  if (early_stop.patience_epochs < 1)
    throw UserError("run '" + name + "': early_stop.patience_epochs must be >= 1");
  augment.validate();
}

json to_json(const AugmentConfig& c) {
  return json{{"hflip_p", c.hflip_p},
              {"rotation_deg", c.rotation_deg},
              {"translate_frac", c.translate_frac},
              {"blur_sigma_range", {c.blur_sigma_range.first, c.blur_sigma_range.second}},
              {"blur_p", c.blur_p},
              {"noise_sigma", c.noise_sigma},
              {"noise_p", c.noise_p},
              {"jitter",
               {{"brightness", c.jitter.brightness},
                {"contrast", c.jitter.contrast},
                {"saturation", c.jitter.saturation},
                {"hue", c.jitter.hue}}},
              {"cutout", {{"count", c.cutout.count}, {"max_side_frac", c.cutout.max_side_frac}}},
              {"perspective",
               {{"distortion_scale", c.perspective.distortion_scale}, {"p", c.perspective.p}}},
              {"norm_mean", c.norm_mean},
              {"norm_std", c.norm_std}};
}

AugmentConfig augment_config_from_json(const json& j) {
  AugmentConfig c;
  c.hflip_p = j.value("hflip_p", c.hflip_p);
  c.rotation_deg = j.value("rotation_deg", c.rotation_deg);
  c.translate_frac = j.value("translate_frac", c.translate_frac);
  if (j.contains("blur_sigma_range"))
    c.blur_sigma_range = {j["blur_sigma_range"].at(0).get<double>(),
                          j["blur_sigma_range"].at(1).get<double>()};
  c.blur_p = j.value("blur_p", c.blur_p);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.noise_p = j.value("noise_p", c.noise_p);
  if (j.contains("jitter")) {
    const auto& jj = j["jitter"];
    c.jitter.brightness = jj.value("brightness", c.jitter.brightness);
    c.jitter.contrast = jj.value("contrast", c.jitter.contrast);
    c.jitter.saturation = jj.value("saturation", c.jitter.saturation);
    c.jitter.hue = jj.value("hue", c.jitter.hue);
  }
  if (j.contains("cutout")) {
    c.cutout.count = j["cutout"].value("count", c.cutout.count);
    c.cutout.max_side_frac = j["cutout"].value("max_side_frac", c.cutout.max_side_frac);
  }
  if (j.contains("perspective")) {
    c.perspective.distortion_scale =
        j["perspective"].value("distortion_scale", c.perspective.distortion_scale);
    c.perspective.p = j["perspective"].value("p", c.perspective.p);
  }
  if (j.contains("norm_mean")) c.norm_mean = j["norm_mean"].get<std::array<double, 3>>();
  if (j.contains("norm_std")) c.norm_std = j["norm_std"].get<std::array<double, 3>>();
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["name"] = c.name;
  j["backbone"] = to_string(c.backbone.name);
  j["pretrained"] = c.backbone.pretrained;
  j["mode"] = c.mode;
  j["lr0"] = c.lr0;
  j["weight_decay"] = c.weight_decay;
  j["scheduler"] = {{"kind", c.scheduler.kind == SchedulerSpec::Kind::plateau_decay
                                 ? "plateau_decay"
                                 : "step_decay"},
                    {"plateau",
                     {{"patience", c.scheduler.plateau.patience},
                      {"factor", c.scheduler.plateau.factor},
                      {"min_delta", c.scheduler.plateau.min_delta},
                      {"monitored", c.scheduler.plateau.monitored}}},
                    {"step",
                     {{"interval_epochs", c.scheduler.step.interval_epochs},
                      {"factor", c.scheduler.step.factor}}}};
  j["loss"] = c.loss;
  j["triplet_form"] = c.triplet_form == TripletForm::hinged_squared ? "hinged_squared" : "as_printed";
  j["epochs_max"] = c.epochs_max;
  j["batch_size"] = c.batch_size;
  j["classes_per_batch"] = c.classes_per_batch;
  j["samples_per_class"] = c.samples_per_class;
  j["seed"] = c.seed;
  j["augment"] = to_json(c.augment);
  j["early_stop"] = {{"patience_epochs", c.early_stop.patience_epochs},
                     {"min_delta", c.early_stop.min_delta}};
  j["margin"] = c.margin;
  j["embed_dim"] = c.embed_dim;
  j["support_per_class"] = c.support_per_class;
  j["knn_k"] = c.knn_k;
  j["l2_normalize"] = c.l2_normalize;
  j["mining"] = c.mining == MiningMode::uniform ? "uniform" : "semi_hard";
  j["gallery_mode"] = c.gallery_mode == GalleryMode::class_mean ? "class_mean" : "per_image";
  j["finetune_siamese"] = c.finetune_siamese;
  j["frozen_stats"] = c.frozen_stats;
  j["full_scale"] = c.full_scale;
  if (!c.suite_hash.empty()) j["suite_hash"] = c.suite_hash;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  c.name = j.value("name", "");
  if (j.contains("backbone")) c.backbone.name = backbone_from_string(j["backbone"].get<std::string>());
  c.backbone.pretrained = j.value("pretrained", false);
  c.mode = j.value("mode", c.mode);

  // mode-dependent defaults applied before explicit overrides
  if (c.mode == "siamese") {
    c.loss = "triplet";
    c.lr0 = 0.005;
    c.scheduler.kind = SchedulerSpec::Kind::step_decay;
  }

  c.lr0 = j.value("lr0", c.lr0);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (j.contains("scheduler")) {
    const auto& s = j["scheduler"];
    const std::string kind = s.value("kind", c.mode == "siamese" ? "step_decay" : "plateau_decay");
    if (kind == "plateau_decay")
      c.scheduler.kind = SchedulerSpec::Kind::plateau_decay;
    else if (kind == "step_decay")
      c.scheduler.kind = SchedulerSpec::Kind::step_decay;
    else
      throw UserError("unknown scheduler kind '" + kind + "'");
    if (s.contains("plateau")) {
      const auto& p = s["plateau"];
      c.scheduler.plateau.patience = p.value("patience", c.scheduler.plateau.patience);
      c.scheduler.plateau.factor = p.value("factor", c.scheduler.plateau.factor);
      c.scheduler.plateau.min_delta = p.value("min_delta", c.scheduler.plateau.min_delta);
      c.scheduler.plateau.monitored = p.value("monitored", c.scheduler.plateau.monitored);
    }
    if (s.contains("step")) {
      const auto& p = s["step"];
      c.scheduler.step.interval_epochs = p.value("interval_epochs", c.scheduler.step.interval_epochs);
      c.scheduler.step.factor = p.value("factor", c.scheduler.step.factor);
    }
  }
  c.loss = j.value("loss", c.loss);
  if (j.contains("triplet_form")) {
    const std::string f = j["triplet_form"].get<std::string>();
    if (f == "hinged_squared")
      c.triplet_form = TripletForm::hinged_squared;
    else if (f == "as_printed")
      c.triplet_form = TripletForm::unhinged_printed;
    else
      throw UserError("unknown triplet_form '" + f + "'");
  }
  c.epochs_max = j.value("epochs_max", c.epochs_max);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.classes_per_batch = j.value("classes_per_batch", c.classes_per_batch);
  c.samples_per_class = j.value("samples_per_class", c.samples_per_class);
  c.seed = j.value("seed", c.seed);
  if (j.contains("augment")) c.augment = augment_config_from_json(j["augment"]);
  if (j.contains("early_stop")) {
    c.early_stop.patience_epochs =
        j["early_stop"].value("patience_epochs", c.early_stop.patience_epochs);
    c.early_stop.min_delta = j["early_stop"].value("min_delta", c.early_stop.min_delta);
  }
  c.margin = j.value("margin", c.margin);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.support_per_class = j.value("support_per_class", c.support_per_class);
  c.knn_k = j.value("knn_k", c.knn_k);
  c.l2_normalize = j.value("l2_normalize", c.l2_normalize);
  if (j.contains("mining")) {
    const std::string m = j["mining"].get<std::string>();
    if (m == "uniform")
      c.mining = MiningMode::uniform;
    else if (m == "semi_hard")
      c.mining = MiningMode::semi_hard;
    else
      throw UserError("unknown mining mode '" + m + "'");
  }
  if (j.contains("gallery_mode")) {
    const std::string g = j["gallery_mode"].get<std::string>();
    if (g == "class_mean")
      c.gallery_mode = GalleryMode::class_mean;
    else if (g == "per_image")
      c.gallery_mode = GalleryMode::per_image;
    else
      throw UserError("unknown gallery_mode '" + g + "'");
  }
  c.finetune_siamese = j.value("finetune_siamese", c.finetune_siamese);
  c.frozen_stats = j.value("frozen_stats", c.frozen_stats);
  c.full_scale = j.value("full_scale", c.full_scale);
  c.suite_hash = j.value("suite_hash", c.suite_hash);
  c.validate();
  return c;
}

std::string config_hash(const json& j) {
  // nlohmann objects iterate in sorted key order, so dump() is canonical
  const std::string text = j.dump();
  const std::uint64_t h = rng::fnv1a64(text);
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace catreid
