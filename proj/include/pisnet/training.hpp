// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pisnet/data.hpp"
#include "pisnet/losses.hpp"
#include "pisnet/model.hpp"
#include "pisnet/rng.hpp"

namespace pisnet::training {

struct TrainConfig {
  int batch_size = 64;
  double base_lr = 0.00035;
  double lr_decay = 0.1;
  int decay_epoch = 20;
  int total_epochs = 60;
  losses::LossWeights weights;
  uint64_t seed = 0;
  enum class Stage { pretrain, qgab };
  Stage stage = Stage::pretrain;

  double momentum = 0.9;
  double weight_decay = 0.0;
  bool use_gram = true;
  bool use_mpsl = true;
  losses::MpslFormula mpsl_formula = losses::MpslFormula::prose;
  std::string backbone_preset = "small32";
  int guidance_channels = 0;  // 0 = match backbone output channels
  bool train_head = true;

  void validate() const;
};

// Staircase schedule: base_lr * lr_decay^floor(epoch / decay_epoch).
double lr_at(const TrainConfig& cfg, int epoch);

// One line-delimited JSON record per call.
class MetricsLogger {
 public:
  explicit MetricsLogger(const std::string& path);
  ~MetricsLogger();
  MetricsLogger(const MetricsLogger&) = delete;
  MetricsLogger& operator=(const MetricsLogger&) = delete;

  void log(const std::string& json_line);

 private:
  struct Impl;
  Impl* impl_;
};

struct RunHooks {
  std::string out_dir;  // when set, checkpoints land here
  MetricsLogger* metrics = nullptr;
};

// Trained parameters as plain tensors; what evaluation consumes.
struct ModelState {
  enum class Stage { fresh, pretrained, qgab_trained };
  model::BackboneParams backbone;
  model::QgabParams qgab;
  Tensor head_w;  // vocab x C
  Tensor head_b;  // vocab
  std::vector<int> id_vocab;
  Stage stage = Stage::fresh;
};

// Momentum SGD over named parameters.
class Sgd {
 public:
  Sgd() = default;
  Sgd(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<std::pair<std::string, ag::Var>>& params, double lr);

  std::map<std::string, Tensor>& velocity() { return velocity_; }
  const std::map<std::string, Tensor>& velocity() const { return velocity_; }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  double momentum_ = 0.9;
  double weight_decay_ = 0.0;
  std::map<std::string, Tensor> velocity_;
};

// Full mutable training state; parameters live inside the graph leaves.
struct TrainerState {
  TrainConfig cfg;
  model::BackboneConfig backbone_config;
  model::BackboneVars backbone;
  bool backbone_frozen = false;
  model::QgabVars qgab;
  ag::Var head_w;
  ag::Var head_b;
  Sgd opt;
  Rng rng{0};
  int epoch = 0;
  long step = 0;
  std::vector<int> id_vocab;
  ModelState::Stage model_stage = ModelState::Stage::fresh;

  std::vector<std::pair<std::string, ag::Var>> trainable_params() const;
};

ModelState snapshot(const TrainerState& state);

// Caches frozen-backbone feature maps per manifest entry.
class FeatureCache {
 public:
  FeatureCache(const data::DatasetManifest& manifest, const data::ImageSource& source,
               const model::BackboneParams& backbone);

  const Tensor& get(int entry_index);
  const data::DatasetManifest& manifest() const { return *manifest_; }

 private:
  const data::DatasetManifest* manifest_;
  const data::ImageSource* source_;
  const model::BackboneParams* backbone_;
  std::vector<std::optional<Tensor>> cache_;
};

// One optimizer step over a pairing batch (frozen-backbone stage).
losses::LossBundle train_step(const data::TrainBatch& batch, TrainerState& state,
                              FeatureCache& features);

// Stage 1: backbone + ID head on single-person crops.
ModelState pretrain_backbone(const data::DatasetManifest& manifest,
                             const data::ImageSource& source, const TrainConfig& cfg,
                             const RunHooks& hooks = {});

// Stage 2: attention block, reversed pass and separation loss over a
// frozen backbone. The caller freezes the backbone explicitly.
ModelState train_qgab(const data::DatasetManifest& manifest, const data::ImageSource& source,
                      const ModelState& pretrained, const TrainConfig& cfg,
                      const RunHooks& hooks = {});

// Continues a loaded trainer to cfg.total_epochs.
ModelState resume_training(TrainerState& state, const data::DatasetManifest& manifest,
                           const data::ImageSource& source, const RunHooks& hooks = {});

// Versioned key->tensor container holding parameters, optimizer state,
// epoch counter, RNG and the config snapshot. Writes are atomic.
void save_checkpoint(const TrainerState& state, const std::string& path);
TrainerState load_checkpoint(const std::string& path);
ModelState model_from_checkpoint(const std::string& path);

std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& json_text);

}  // namespace pisnet::training
