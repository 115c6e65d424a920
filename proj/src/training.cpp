// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pisnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pisnet/errors.hpp"
#include "pisnet/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pisnet::training {

// ---- config ----

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
  if (total_epochs < 0) throw ConfigError("train: total_epochs must be >= 0");
  if (total_epochs > 0 && decay_epoch >= total_epochs) {
    throw ConfigError("train: decay_epoch must be < total_epochs");
  }
  if (decay_epoch < 1) throw ConfigError("train: decay_epoch must be >= 1");
  if (base_lr <= 0.0 || lr_decay <= 0.0) throw ConfigError("train: lr values must be > 0");
  if (weights.alpha < 0.0 || weights.beta < 0.0 || weights.margin_c < 0.0) {
    throw ConfigError("train: loss weights must be non-negative");
  }
}

double lr_at(const TrainConfig& cfg, int epoch) {
  return cfg.base_lr * std::pow(cfg.lr_decay, epoch / cfg.decay_epoch);
}

namespace {

json config_json(const TrainConfig& cfg) {
  json j;
  j["batch_size"] = cfg.batch_size;
  j["base_lr"] = cfg.base_lr;
  j["lr_decay"] = cfg.lr_decay;
  j["decay_epoch"] = cfg.decay_epoch;
  j["total_epochs"] = cfg.total_epochs;
  j["alpha"] = cfg.weights.alpha;
  j["beta"] = cfg.weights.beta;
  j["margin_c"] = cfg.weights.margin_c;
  j["seed"] = cfg.seed;
  j["stage"] = cfg.stage == TrainConfig::Stage::pretrain ? "pretrain" : "qgab";
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["use_gram"] = cfg.use_gram;
  j["use_mpsl"] = cfg.use_mpsl;
  j["mpsl_formula"] = losses::to_string(cfg.mpsl_formula);
  j["backbone_preset"] = cfg.backbone_preset;
  j["guidance_channels"] = cfg.guidance_channels;
  j["train_head"] = cfg.train_head;
  return j;
}

TrainConfig config_from(const json& j) {
  TrainConfig cfg;
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.base_lr = j.at("base_lr").get<double>();
  cfg.lr_decay = j.at("lr_decay").get<double>();
  cfg.decay_epoch = j.at("decay_epoch").get<int>();
  cfg.total_epochs = j.at("total_epochs").get<int>();
  cfg.weights.alpha = j.at("alpha").get<double>();
  cfg.weights.beta = j.at("beta").get<double>();
  cfg.weights.margin_c = j.at("margin_c").get<double>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.stage = j.at("stage").get<std::string>() == "pretrain" ? TrainConfig::Stage::pretrain
                                                             : TrainConfig::Stage::qgab;
  cfg.momentum = j.at("momentum").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.use_gram = j.at("use_gram").get<bool>();
  cfg.use_mpsl = j.at("use_mpsl").get<bool>();
  cfg.mpsl_formula = losses::parse_mpsl_formula(j.at("mpsl_formula").get<std::string>());
  cfg.backbone_preset = j.at("backbone_preset").get<std::string>();
  cfg.guidance_channels = j.at("guidance_channels").get<int>();
  cfg.train_head = j.at("train_head").get<bool>();
  return cfg;
}

json backbone_config_json(const model::BackboneConfig& cfg) {
  json stages = json::array();
  for (const auto& st : cfg.stages) {
    stages.push_back({{"out_channels", st.out_channels},
                      {"stride", st.stride},
                      {"kernel", st.kernel},
                      {"blocks", st.blocks}});
  }
  return json{{"in_channels", cfg.in_channels}, {"stages", stages}};
}

model::BackboneConfig backbone_config_from(const json& j) {
  model::BackboneConfig cfg;
  cfg.in_channels = j.at("in_channels").get<int>();
  for (const auto& st : j.at("stages")) {
    cfg.stages.push_back({st.at("out_channels").get<int>(), st.at("stride").get<int>(),
                          st.at("kernel").get<int>(), st.at("blocks").get<int>()});
  }
  return cfg;
}

}  // namespace

std::string config_to_json(const TrainConfig& cfg) { return config_json(cfg).dump(); }

TrainConfig config_from_json(const std::string& json_text) {
  return config_from(json::parse(json_text));
}

// ---- metrics ----

struct MetricsLogger::Impl {
  std::ofstream out;
};

MetricsLogger::MetricsLogger(const std::string& path) : impl_(new Impl) {
  impl_->out.open(path, std::ios::out | std::ios::trunc);
  if (!impl_->out) {
    delete impl_;
    throw IoError("cannot open metrics log: " + path);
  }
}

MetricsLogger::~MetricsLogger() { delete impl_; }

void MetricsLogger::log(const std::string& json_line) {
  impl_->out << json_line << '\n';
  impl_->out.flush();
}

// ---- optimizer ----

void Sgd::step(const std::vector<std::pair<std::string, ag::Var>>& params, double lr) {
  for (const auto& [name, var] : params) {
    var->ensure_grad();
    Tensor& w = var->value;
    Tensor& g = var->grad;
    auto [it, inserted] = velocity_.try_emplace(name, Tensor::zeros(w.shape));
    Tensor& v = it->second;
    if (!inserted && !v.same_shape(w)) {
      throw ShapeError("optimizer velocity shape mismatch for " + name);
    }
    for (long i = 0; i < w.numel(); ++i) {
      const double grad = g.data[i] + weight_decay_ * w.data[i];
      v.data[i] = momentum_ * v.data[i] + grad;
      w.data[i] -= lr * v.data[i];
    }
    std::fill(g.data.begin(), g.data.end(), 0.0);
  }
}

// ---- trainer state ----

std::vector<std::pair<std::string, ag::Var>> TrainerState::trainable_params() const {
  std::vector<std::pair<std::string, ag::Var>> out;
  if (cfg.stage == TrainConfig::Stage::pretrain) {
    for (size_t i = 0; i < backbone.weights.size(); ++i) {
      out.emplace_back("backbone.w" + std::to_string(i), backbone.weights[i]);
      out.emplace_back("backbone.b" + std::to_string(i), backbone.biases[i]);
    }
    out.emplace_back("head.w", head_w);
    out.emplace_back("head.b", head_b);
  } else {
    out.emplace_back("qgab.c1", qgab.c1);
    out.emplace_back("qgab.c2", qgab.c2);
    if (cfg.train_head) {
      out.emplace_back("head.w", head_w);
      out.emplace_back("head.b", head_b);
    }
  }
  return out;
}

ModelState snapshot(const TrainerState& state) {
  ModelState m;
  m.backbone.config = state.backbone_config;
  for (const auto& w : state.backbone.weights) m.backbone.weights.push_back(w->value);
  for (const auto& b : state.backbone.biases) m.backbone.biases.push_back(b->value);
  m.backbone.frozen = state.backbone_frozen;
  m.qgab.c1_weights = state.qgab.c1->value;
  m.qgab.c2_weights = state.qgab.c2->value;
  m.qgab.guidance_channels = state.qgab.c1->value.dim(0);
  m.head_w = state.head_w->value;
  m.head_b = state.head_b->value;
  m.id_vocab = state.id_vocab;
  m.stage = state.model_stage;
  return m;
}

namespace {

TrainerState build_state(const TrainConfig& cfg, const std::vector<int>& vocab,
                         const ModelState* carry) {
  TrainerState st;
  st.cfg = cfg;
  st.id_vocab = vocab;
  st.rng = Rng(mix_seed(cfg.seed, 0x7e));
  st.opt = Sgd(cfg.momentum, cfg.weight_decay);

  Rng init_rng(mix_seed(cfg.seed, 0x1f));
  const bool pretrain = cfg.stage == TrainConfig::Stage::pretrain;

  if (carry) {
    st.backbone_config = carry->backbone.config;
    st.backbone_frozen = carry->backbone.frozen;
    model::BackboneParams bb = carry->backbone;
    st.backbone = model::make_vars(bb, pretrain);
  } else {
    st.backbone_config = model::BackboneConfig::preset(cfg.backbone_preset);
    model::BackboneParams bb = model::BackboneParams::init(st.backbone_config, init_rng);
    st.backbone = model::make_vars(bb, pretrain);
  }

  const int c = st.backbone_config.out_channels();
  const int cp = cfg.guidance_channels > 0 ? cfg.guidance_channels : c;
  model::QgabParams qp = carry && carry->qgab.guidance_channels == cp &&
                                 carry->qgab.c1_weights.ndim() == 2 &&
                                 carry->qgab.in_channels() == c
                             ? carry->qgab
                             : model::QgabParams::init(c, cp, init_rng);
  st.qgab = model::make_vars(qp, !pretrain);

  const int k = static_cast<int>(vocab.size());
  const bool head_trainable = pretrain || cfg.train_head;
  if (carry && carry->head_w.ndim() == 2 && carry->head_w.dim(0) == k &&
      carry->head_w.dim(1) == c) {
    st.head_w = ag::leaf(carry->head_w, head_trainable);
    st.head_b = ag::leaf(carry->head_b, head_trainable);
  } else {
    const double stddev = std::sqrt(1.0 / c);
    st.head_w = ag::leaf(Tensor::normal(init_rng, {k, c}, stddev), head_trainable);
    st.head_b = ag::leaf(Tensor::zeros({k}), head_trainable);
  }
  st.model_stage = carry ? carry->stage : ModelState::Stage::fresh;
  return st;
}

std::string qgab_metrics_line(const TrainerState& st, const losses::LossBundle& b, double lr) {
  json j;
  j["epoch"] = st.epoch;
  j["step"] = st.step;
  j["l_g"] = b.l_g;
  j["l_q"] = b.l_q;
  j["l_m"] = b.l_m;
  j["l_final"] = b.l_final;
  j["lr"] = lr;
  return j.dump();
}

void maybe_save(const TrainerState& st, const RunHooks& hooks) {
  if (!hooks.out_dir.empty()) {
    save_checkpoint(st, (fs::path(hooks.out_dir) / "checkpoint.bin").string());
  }
}

int vocab_label(const std::vector<int>& vocab, int id) {
  auto it = std::lower_bound(vocab.begin(), vocab.end(), id);
  if (it == vocab.end() || *it != id) {
    throw ConfigError("train: id " + std::to_string(id) + " missing from the vocabulary");
  }
  return static_cast<int>(it - vocab.begin());
}

}  // namespace

// ---- feature cache ----

FeatureCache::FeatureCache(const data::DatasetManifest& manifest,
                           const data::ImageSource& source,
                           const model::BackboneParams& backbone)
    : manifest_(&manifest), source_(&source), backbone_(&backbone) {
  cache_.resize(manifest.entries.size());
}

const Tensor& FeatureCache::get(int entry_index) {
  auto& slot = cache_[static_cast<size_t>(entry_index)];
  if (!slot) {
    const Image img = source_->load(entry_index);
    slot = model::backbone_forward(image_to_tensor(img), *backbone_).values;
  }
  return *slot;
}

// ---- frozen-backbone training step ----

losses::LossBundle train_step(const data::TrainBatch& batch, TrainerState& state,
                              FeatureCache& features) {
  if (batch.items.empty()) throw ConfigError("train_step: empty batch");
  if (state.cfg.stage != TrainConfig::Stage::qgab) {
    throw std::invalid_argument("train_step: trainer is not in the qgab stage");
  }
  if (!state.backbone_frozen) {
    throw std::invalid_argument("train_step: backbone must be frozen in the qgab stage");
  }

  const auto& cfg = state.cfg;
  const auto& entries = features.manifest().entries;
  std::vector<ag::Var> lg_terms, lq_terms, lm_terms;
  lg_terms.reserve(batch.items.size());

  for (const auto& item : batch.items) {
    const Tensor& g = features.get(item.gallery);
    const Tensor& qa = features.get(item.query_a);
    const int id_a = entries[static_cast<size_t>(item.query_a)].persons[0].id;
    const int label_a = vocab_label(state.id_vocab, id_a);

    auto vg = ag::leaf(g);
    auto vqa = ag::leaf(qa);
    auto out_a = model::attention_graph(vg, vqa, state.qgab);
    auto emb_a = model::embed_graph(out_a.refined);
    lg_terms.push_back(
        ag::cross_entropy(ag::linear(emb_a, state.head_w, state.head_b), label_a));

    if (cfg.use_gram) {
      const Tensor& src = features.get(item.corruption);
      auto pm = model::build_placement(item.layout, qa.dim(1), qa.dim(2), src.dim(1),
                                       src.dim(2), g.dim(1), g.dim(2));
      auto corrupted = model::corrupt_graph(vqa, ag::leaf(src), pm);
      auto reversed = model::attention_graph(corrupted, out_a.refined, state.qgab);
      auto emb_q = model::embed_graph(reversed.refined);
      lq_terms.push_back(
          ag::cross_entropy(ag::linear(emb_q, state.head_w, state.head_b), label_a));
    }

    if (cfg.use_mpsl) {
      auto vqb = ag::leaf(features.get(item.query_b));
      auto out_b = model::attention_graph(vg, vqb, state.qgab);
      auto emb_b = model::embed_graph(out_b.refined);
      auto emb_qa = model::embed_graph(vqa);
      lm_terms.push_back(
          losses::mps_loss_graph(emb_a, emb_b, emb_qa, cfg.weights, cfg.mpsl_formula));
    }
  }

  const double inv_n = 1.0 / static_cast<double>(batch.items.size());
  auto mean_of = [&](std::vector<ag::Var>& terms) {
    return terms.empty() ? ag::scalar(0.0) : ag::scale(ag::addn(terms), inv_n);
  };
  auto lg = mean_of(lg_terms);
  auto lq = mean_of(lq_terms);
  auto lm = mean_of(lm_terms);

  const std::pair<const char*, double> components[3] = {
      {"l_g", lg->value.data[0]}, {"l_q", lq->value.data[0]}, {"l_m", lm->value.data[0]}};
  for (const auto& [name, value] : components) {
    if (!std::isfinite(value)) {
      throw NumericError(std::string("train_step: ") + name + " is non-finite at epoch " +
                         std::to_string(state.epoch) + " step " + std::to_string(state.step));
    }
  }

  auto l_final = ag::add(ag::add(lg, ag::scale(lq, cfg.weights.alpha)),
                         ag::scale(lm, cfg.weights.beta));
  ag::backward(l_final);
  state.opt.step(state.trainable_params(), lr_at(cfg, state.epoch));
  ++state.step;

  return losses::total_loss(lg->value.data[0], lq->value.data[0], lm->value.data[0],
                            cfg.weights);
}

// ---- stage 1: pretraining ----

namespace {

void run_pretrain_epochs(TrainerState& state, const data::DatasetManifest& manifest,
                         const data::ImageSource& source, const RunHooks& hooks) {
  std::vector<int> singles;
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.split == data::Split::train && !e.is_multi()) singles.push_back(static_cast<int>(i));
  }
  std::set<int> distinct;
  for (int s : singles) {
    distinct.insert(manifest.entries[static_cast<size_t>(s)].persons[0].id);
  }
  if (distinct.size() < 2) {
    throw ConfigError("pretrain: need single-person training entries of >= 2 ids, have " +
                      std::to_string(distinct.size()));
  }

  std::vector<std::optional<Tensor>> image_cache(manifest.entries.size());
  auto image_of = [&](int idx) -> const Tensor& {
    auto& slot = image_cache[static_cast<size_t>(idx)];
    if (!slot) slot = image_to_tensor(source.load(idx));
    return *slot;
  };

  const auto& cfg = state.cfg;
  for (; state.epoch < cfg.total_epochs;) {
    // Deterministic per-epoch shuffle.
    std::vector<int> order = singles;
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(state.rng.uniform_int(0, i))]);
    }
    const double lr = lr_at(cfg, state.epoch);
    int correct = 0;
    int total = 0;
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), pos + static_cast<size_t>(cfg.batch_size));
      std::vector<ag::Var> term_list;
      for (size_t k = pos; k < end; ++k) {
        const int idx = order[k];
        const int label =
            vocab_label(state.id_vocab,
                        manifest.entries[static_cast<size_t>(idx)].persons[0].id);
        auto fm = model::backbone_graph(ag::leaf(image_of(idx)), state.backbone,
                                        state.backbone_config);
        auto logits = ag::linear(model::embed_graph(fm), state.head_w, state.head_b);
        int argmax = 0;
        for (int j = 1; j < logits->value.dim(0); ++j) {
          if (logits->value.at(j) > logits->value.at(argmax)) argmax = j;
        }
        correct += argmax == label ? 1 : 0;
        ++total;
        term_list.push_back(ag::cross_entropy(logits, label));
      }
      auto loss = ag::scale(ag::addn(term_list), 1.0 / static_cast<double>(term_list.size()));
      if (!std::isfinite(loss->value.data[0])) {
        throw NumericError("pretrain: loss is non-finite at epoch " +
                           std::to_string(state.epoch));
      }
      ag::backward(loss);
      state.opt.step(state.trainable_params(), lr);
      ++state.step;
      if (hooks.metrics) {
        json j;
        j["stage"] = "pretrain";
        j["epoch"] = state.epoch;
        j["step"] = state.step;
        j["loss"] = loss->value.data[0];
        j["lr"] = lr;
        hooks.metrics->log(j.dump());
      }
    }
    if (hooks.metrics) {
      json j;
      j["stage"] = "pretrain";
      j["epoch"] = state.epoch;
      j["train_accuracy"] = total > 0 ? static_cast<double>(correct) / total : 0.0;
      hooks.metrics->log(j.dump());
    }
    ++state.epoch;
    maybe_save(state, hooks);
  }
}

void run_qgab_epochs(TrainerState& state, const data::DatasetManifest& manifest,
                     const data::ImageSource& source, const RunHooks& hooks) {
  model::BackboneParams frozen = snapshot(state).backbone;
  FeatureCache cache(manifest, source, frozen);

  int train_multis = 0;
  for (const auto& e : manifest.entries) {
    if (e.split == data::Split::train && e.is_multi()) ++train_multis;
  }
  const auto& cfg = state.cfg;
  const int steps_per_epoch =
      std::max(1, (train_multis + cfg.batch_size - 1) / cfg.batch_size);

  for (; state.epoch < cfg.total_epochs;) {
    const double lr = lr_at(cfg, state.epoch);
    for (int s = 0; s < steps_per_epoch; ++s) {
      auto batch = data::build_batch(manifest, cfg.batch_size, state.rng);
      auto bundle = train_step(batch, state, cache);
      if (hooks.metrics) hooks.metrics->log(qgab_metrics_line(state, bundle, lr));
    }
    ++state.epoch;
    maybe_save(state, hooks);
  }
}

}  // namespace

ModelState pretrain_backbone(const data::DatasetManifest& manifest,
                             const data::ImageSource& source, const TrainConfig& cfg,
                             const RunHooks& hooks) {
  TrainConfig c = cfg;
  c.stage = TrainConfig::Stage::pretrain;
  c.validate();
  if (manifest.id_vocab.size() < 2) {
    throw ConfigError("pretrain: manifest vocabulary has fewer than 2 ids");
  }
  TrainerState state = build_state(c, manifest.id_vocab, nullptr);
  run_pretrain_epochs(state, manifest, source, hooks);
  state.model_stage = ModelState::Stage::pretrained;
  maybe_save(state, hooks);
  return snapshot(state);
}

ModelState train_qgab(const data::DatasetManifest& manifest, const data::ImageSource& source,
                      const ModelState& pretrained, const TrainConfig& cfg,
                      const RunHooks& hooks) {
  TrainConfig c = cfg;
  c.stage = TrainConfig::Stage::qgab;
  c.validate();
  if (pretrained.stage == ModelState::Stage::fresh) {
    throw std::invalid_argument("train_qgab: backbone has not been pretrained");
  }
  if (!pretrained.backbone.frozen) {
    throw std::invalid_argument("train_qgab: backbone must be frozen for the qgab stage");
  }
  if (pretrained.id_vocab != manifest.id_vocab) {
    throw ConfigError("train_qgab: manifest vocabulary differs from the pretrained head");
  }
  TrainerState state = build_state(c, manifest.id_vocab, &pretrained);
  run_qgab_epochs(state, manifest, source, hooks);
  state.model_stage = ModelState::Stage::qgab_trained;
  maybe_save(state, hooks);
  return snapshot(state);
}

ModelState resume_training(TrainerState& state, const data::DatasetManifest& manifest,
                           const data::ImageSource& source, const RunHooks& hooks) {
  if (state.cfg.stage == TrainConfig::Stage::pretrain) {
    run_pretrain_epochs(state, manifest, source, hooks);
    state.model_stage = ModelState::Stage::pretrained;
  } else {
    run_qgab_epochs(state, manifest, source, hooks);
    state.model_stage = ModelState::Stage::qgab_trained;
  }
  maybe_save(state, hooks);
  return snapshot(state);
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'P', 'I', 'S', 'N', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t take_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw CheckpointError("checkpoint truncated");
  return v;
}
uint64_t take_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw CheckpointError("checkpoint truncated");
  return v;
}

void put_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<uint32_t>(t.shape.size()));
  for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

std::pair<std::string, Tensor> take_tensor(std::istream& in) {
  const uint32_t name_len = take_u32(in);
  if (name_len > 4096) throw CheckpointError("checkpoint: implausible tensor name length");
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  const uint32_t ndim = take_u32(in);
  if (ndim > 8) throw CheckpointError("checkpoint: implausible tensor rank");
  std::vector<int> shape;
  for (uint32_t i = 0; i < ndim; ++i) shape.push_back(static_cast<int>(take_u32(in)));
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!in) throw CheckpointError("checkpoint truncated inside tensor " + name);
  return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const TrainerState& state, const std::string& path) {
  json meta;
  meta["format_version"] = kVersion;
  meta["config"] = config_json(state.cfg);
  meta["backbone_config"] = backbone_config_json(state.backbone_config);
  meta["backbone_frozen"] = state.backbone_frozen;
  meta["epoch"] = state.epoch;
  meta["step"] = state.step;
  meta["rng"] = state.rng.serialize();
  meta["vocab"] = state.id_vocab;
  switch (state.model_stage) {
    case ModelState::Stage::fresh: meta["model_stage"] = "fresh"; break;
    case ModelState::Stage::pretrained: meta["model_stage"] = "pretrained"; break;
    case ModelState::Stage::qgab_trained: meta["model_stage"] = "qgab_trained"; break;
  }
  const std::string meta_text = meta.dump();

  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (size_t i = 0; i < state.backbone.weights.size(); ++i) {
    tensors.emplace_back("backbone.w" + std::to_string(i), &state.backbone.weights[i]->value);
    tensors.emplace_back("backbone.b" + std::to_string(i), &state.backbone.biases[i]->value);
  }
  tensors.emplace_back("qgab.c1", &state.qgab.c1->value);
  tensors.emplace_back("qgab.c2", &state.qgab.c2->value);
  tensors.emplace_back("head.w", &state.head_w->value);
  tensors.emplace_back("head.b", &state.head_b->value);
  for (const auto& [name, vel] : state.opt.velocity()) {
    tensors.emplace_back("opt." + name, &vel);
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u64(out, meta_text.size());
    out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
    put_u64(out, tensors.size());
    for (const auto& [name, t] : tensors) put_tensor(out, name, *t);
    if (!out) throw IoError("failed writing checkpoint: " + path);
  }
  fs::rename(tmp, path);
}

TrainerState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file: " + path);
  }
  const uint32_t version = take_u32(in);
  if (version != kVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) +
                          " unsupported (expected " + std::to_string(kVersion) + ")");
  }
  const uint64_t meta_len = take_u64(in);
  if (meta_len > (1ull << 24)) throw CheckpointError("checkpoint: implausible header size");
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw CheckpointError("checkpoint truncated in header");
  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad header json: ") + e.what());
  }

  std::map<std::string, Tensor> tensors;
  const uint64_t count = take_u64(in);
  for (uint64_t i = 0; i < count; ++i) {
    auto [name, t] = take_tensor(in);
    tensors.emplace(std::move(name), std::move(t));
  }

  TrainerState st;
  try {
    st.cfg = config_from(meta.at("config"));
    st.backbone_config = backbone_config_from(meta.at("backbone_config"));
    st.backbone_frozen = meta.at("backbone_frozen").get<bool>();
    st.epoch = meta.at("epoch").get<int>();
    st.step = meta.at("step").get<long>();
    st.rng.deserialize(meta.at("rng").get<std::string>());
    st.id_vocab = meta.at("vocab").get<std::vector<int>>();
    const std::string stage = meta.at("model_stage").get<std::string>();
    st.model_stage = stage == "pretrained"   ? ModelState::Stage::pretrained
                     : stage == "qgab_trained" ? ModelState::Stage::qgab_trained
                                               : ModelState::Stage::fresh;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: missing header field: ") + e.what());
  }

  auto fetch = [&](const std::string& name) -> Tensor {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint: missing tensor " + name);
    return it->second;
  };

  const bool pretrain_stage = st.cfg.stage == TrainConfig::Stage::pretrain;
  const int conv_count = st.backbone_config.conv_count();
  for (int i = 0; i < conv_count; ++i) {
    st.backbone.weights.push_back(
        ag::leaf(fetch("backbone.w" + std::to_string(i)), pretrain_stage));
    st.backbone.biases.push_back(
        ag::leaf(fetch("backbone.b" + std::to_string(i)), pretrain_stage));
  }
  st.qgab.c1 = ag::leaf(fetch("qgab.c1"), !pretrain_stage);
  st.qgab.c2 = ag::leaf(fetch("qgab.c2"), !pretrain_stage);
  const bool head_trainable = pretrain_stage || st.cfg.train_head;
  st.head_w = ag::leaf(fetch("head.w"), head_trainable);
  st.head_b = ag::leaf(fetch("head.b"), head_trainable);

  st.opt = Sgd(st.cfg.momentum, st.cfg.weight_decay);
  for (const auto& [name, t] : tensors) {
    if (name.rfind("opt.", 0) == 0) st.opt.velocity().emplace(name.substr(4), t);
  }
  return st;
}

ModelState model_from_checkpoint(const std::string& path) {
  return snapshot(load_checkpoint(path));
}

}  // namespace pisnet::training
