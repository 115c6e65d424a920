// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pisnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>

#include "json.hpp"
#include "pisnet/errors.hpp"
#include "pisnet/image.hpp"
#include "pisnet/losses.hpp"

using nlohmann::json;

namespace pisnet::evaluation {

namespace {

void require_trained(const training::ModelState& model, bool need_qgab) {
  if (model.stage == training::ModelState::Stage::fresh) {
    throw std::invalid_argument("evaluation: model has not been trained");
  }
  if (need_qgab && model.stage != training::ModelState::Stage::qgab_trained) {
    throw std::invalid_argument(
        "evaluation: attention scoring needs a model from the qgab stage");
  }
}

double cosine_similarity(const Tensor& u, const Tensor& v) {
  return 1.0 - losses::cosine_distance(u, v);
}

FeatureMap features_of(const Image& img, const training::ModelState& model) {
  return model::backbone_forward(image_to_tensor(img), model.backbone);
}

double qgab_score(const Tensor& gallery_fm, const Tensor& query_fm, const Tensor& query_emb,
                  const training::ModelState& model) {
  auto [refined, att] =
      model::qgab_forward(FeatureMap{gallery_fm}, FeatureMap{query_fm}, model.qgab);
  return cosine_similarity(model::embed(refined), query_emb);
}

// Two-stage scoring shared by rank_gallery and the manifest harness.
// `plain` holds first-stage similarities; `rescore(i)` computes the
// attention-path score for gallery position i. Entries outside the
// re-scored set keep their first-stage score shifted below the attention
// range so the final column stays non-increasing.
std::vector<double> final_scores(const std::vector<double>& plain, int rerank_top,
                                 bool use_qgab,
                                 const std::function<double(int)>& rescore) {
  const int n = static_cast<int>(plain.size());
  std::vector<double> out(plain.begin(), plain.end());
  if (!use_qgab) return out;
  if (rerank_top <= 0 || rerank_top >= n) {
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = rescore(i);
    return out;
  }
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (plain[static_cast<size_t>(a)] != plain[static_cast<size_t>(b)]) {
      return plain[static_cast<size_t>(a)] > plain[static_cast<size_t>(b)];
    }
    return a < b;
  });
  for (int i = 0; i < n; ++i) {
    const int idx = order[static_cast<size_t>(i)];
    if (i < rerank_top) {
      out[static_cast<size_t>(idx)] = rescore(idx);
    } else {
      // Cosines live in [-1,1]; the 2.0 shift puts the tail strictly
      // below every re-scored entry while preserving its internal order.
      out[static_cast<size_t>(idx)] = plain[static_cast<size_t>(idx)] - 2.0;
    }
  }
  return out;
}

RetrievalTable sort_table(int query_id, const std::vector<int>& indices,
                          const std::vector<double>& scores,
                          const std::vector<bool>& matches) {
  const int n = static_cast<int>(indices.size());
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)]) {
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    }
    return indices[static_cast<size_t>(a)] < indices[static_cast<size_t>(b)];
  });
  RetrievalTable table;
  table.query_id = query_id;
  table.ranked.reserve(static_cast<size_t>(n));
  for (int i : order) {
    table.ranked.push_back({indices[static_cast<size_t>(i)], scores[static_cast<size_t>(i)],
                            static_cast<bool>(matches[static_cast<size_t>(i)])});
  }
  return table;
}

bool entry_matches(int query_id, const std::vector<data::PersonRef>& persons) {
  for (const auto& p : persons) {
    if (p.id == query_id) return true;
  }
  return false;
}

}  // namespace

double pairwise_score(const data::PISample& query, const data::PISample& gallery_entry,
                      const training::ModelState& model) {
  require_trained(model, true);
  if (query.kind != data::PISample::Kind::single) {
    throw std::invalid_argument("pairwise_score: query must be single-person");
  }
  auto gallery_fm = features_of(gallery_entry.image, model);
  auto query_fm = features_of(query.image, model);
  return qgab_score(gallery_fm.values, query_fm.values, model::embed(query_fm), model);
}

RetrievalTable rank_gallery(const data::PISample& query,
                            const std::vector<data::PISample>& gallery,
                            const training::ModelState& model, const RankOptions& opts) {
  if (gallery.empty()) throw ProtocolError("rank_gallery: empty gallery");
  require_trained(model, opts.use_qgab);
  const int query_id = query.persons.empty() ? -1 : query.persons.front().id;

  auto query_fm = features_of(query.image, model);
  const Tensor query_emb = model::embed(query_fm);

  const int n = static_cast<int>(gallery.size());
  std::vector<Tensor> fms;
  fms.reserve(static_cast<size_t>(n));
  std::vector<double> plain(static_cast<size_t>(n));
  std::vector<bool> matches(static_cast<size_t>(n));
  std::vector<int> indices(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    fms.push_back(features_of(gallery[static_cast<size_t>(i)].image, model).values);
    plain[static_cast<size_t>(i)] =
        cosine_similarity(model::embed(FeatureMap{fms.back()}), query_emb);
    bool match = false;
    for (const auto& p : gallery[static_cast<size_t>(i)].persons) {
      if (p.id == query_id) match = true;
    }
    matches[static_cast<size_t>(i)] = match;
    indices[static_cast<size_t>(i)] = i;
  }
  auto scores = final_scores(plain, opts.rerank_top, opts.use_qgab, [&](int i) {
    return qgab_score(fms[static_cast<size_t>(i)], query_fm.values, query_emb, model);
  });
  return sort_table(query_id, indices, scores, matches);
}

std::vector<double> compute_cmc(const std::vector<RetrievalTable>& tables, int max_rank,
                                int* skipped) {
  if (max_rank < 1) throw ConfigError("compute_cmc: max_rank must be >= 1");
  std::vector<double> cmc(static_cast<size_t>(max_rank), 0.0);
  int included = 0;
  int excluded = 0;
  for (const auto& t : tables) {
    int first = -1;
    for (size_t i = 0; i < t.ranked.size(); ++i) {
      if (t.ranked[i].is_match) {
        first = static_cast<int>(i) + 1;
        break;
      }
    }
    if (first < 0) {
      ++excluded;
      continue;
    }
    ++included;
    for (int k = first; k <= max_rank; ++k) cmc[static_cast<size_t>(k - 1)] += 1.0;
  }
  if (skipped) *skipped = excluded;
  if (included > 0) {
    for (double& v : cmc) v /= included;
  }
  return cmc;
}

double compute_map(const std::vector<RetrievalTable>& tables, std::vector<double>* per_query,
                   int* skipped) {
  if (per_query) per_query->clear();
  double sum = 0.0;
  int included = 0;
  int excluded = 0;
  for (const auto& t : tables) {
    int matches = 0;
    double ap_sum = 0.0;
    for (size_t i = 0; i < t.ranked.size(); ++i) {
      if (t.ranked[i].is_match) {
        ++matches;
        ap_sum += static_cast<double>(matches) / static_cast<double>(i + 1);
      }
    }
    if (matches == 0) {
      ++excluded;
      continue;
    }
    const double ap = ap_sum / matches;
    if (per_query) per_query->push_back(ap);
    sum += ap;
    ++included;
  }
  if (skipped) *skipped = excluded;
  return included > 0 ? sum / included : 0.0;
}

EvalResult evaluate_manifest(const data::DatasetManifest& manifest,
                             const data::ImageSource& source,
                             const training::ModelState& model, const RankOptions& opts) {
  require_trained(model, opts.use_qgab);
  const auto query_idx = manifest.split_indices(data::Split::query);
  auto gallery_idx = manifest.split_indices(data::Split::gallery);
  for (int d : manifest.split_indices(data::Split::distractor)) gallery_idx.push_back(d);
  if (query_idx.empty()) throw ProtocolError("evaluate: manifest has no query split");
  if (gallery_idx.empty()) throw ProtocolError("evaluate: manifest has no gallery entries");
  for (int q : query_idx) {
    if (manifest.entries[static_cast<size_t>(q)].persons.size() != 1) {
      throw ProtocolError("evaluate: query entries must be single-person");
    }
  }

  // Gallery features and first-stage embeddings are query-independent.
  const int n = static_cast<int>(gallery_idx.size());
  std::vector<Tensor> gallery_fms;
  std::vector<Tensor> gallery_embs;
  gallery_fms.reserve(static_cast<size_t>(n));
  gallery_embs.reserve(static_cast<size_t>(n));
  for (int gi : gallery_idx) {
    gallery_fms.push_back(features_of(source.load(gi), model).values);
    gallery_embs.push_back(model::embed(FeatureMap{gallery_fms.back()}));
  }

  EvalResult result;
  result.tables.reserve(query_idx.size());
  for (int qi : query_idx) {
    const auto& qe = manifest.entries[static_cast<size_t>(qi)];
    const int query_id = qe.persons[0].id;
    auto query_fm = features_of(source.load(qi), model);
    const Tensor query_emb = model::embed(query_fm);

    std::vector<int> kept;        // positions into gallery_idx
    std::vector<int> indices;     // manifest entry indices
    std::vector<double> plain;
    std::vector<bool> matches;
    for (int i = 0; i < n; ++i) {
      const auto& ge = manifest.entries[static_cast<size_t>(gallery_idx[static_cast<size_t>(i)])];
      // Same-camera filtering applies only when both sides carry cameras.
      if (qe.cam >= 0 && ge.cam >= 0 && qe.cam == ge.cam &&
          entry_matches(query_id, ge.persons)) {
        continue;
      }
      kept.push_back(i);
      indices.push_back(gallery_idx[static_cast<size_t>(i)]);
      plain.push_back(cosine_similarity(gallery_embs[static_cast<size_t>(i)], query_emb));
      matches.push_back(entry_matches(query_id, ge.persons));
    }
    auto scores = final_scores(plain, opts.rerank_top, opts.use_qgab, [&](int pos) {
      const int gpos = kept[static_cast<size_t>(pos)];
      return qgab_score(gallery_fms[static_cast<size_t>(gpos)], query_fm.values, query_emb,
                        model);
    });
    result.tables.push_back(sort_table(query_id, indices, scores, matches));
  }

  int skipped_cmc = 0;
  result.report.cmc = compute_cmc(result.tables, opts.max_rank, &skipped_cmc);
  result.report.map =
      compute_map(result.tables, &result.report.per_query_ap, &result.report.skipped_queries);
  result.report.skipped_queries = std::max(result.report.skipped_queries, skipped_cmc);
  return result;
}

// ---- ablation & sweep ----

namespace {

struct VariantSpec {
  const char* name;
  bool train = false;
  bool use_gram = false;
  bool use_mpsl = false;
};

constexpr VariantSpec kVariants[] = {
    {"baseline", false, false, false},
    {"qgab", true, false, false},
    {"qgab_mpsl", true, false, true},
    {"qgab_gram", true, true, false},
    {"full", true, true, true},
};

const VariantSpec& variant_spec(const std::string& name) {
  for (const auto& v : kVariants) {
    if (name == v.name) return v;
  }
  throw ConfigError("unknown ablation variant '" + name +
                    "' (expected baseline|qgab|qgab_mpsl|qgab_gram|full)");
}

}  // namespace

std::vector<AblationRow> ablation_run(const data::DatasetManifest& manifest,
                                      const data::ImageSource& source,
                                      const std::vector<std::string>& variants,
                                      const training::TrainConfig& pretrain_cfg,
                                      const training::TrainConfig& qgab_cfg,
                                      const RankOptions& opts) {
  std::set<std::string> requested;
  for (const auto& v : variants) {
    variant_spec(v);
    requested.insert(v);
  }
  if (requested.empty()) throw ConfigError("ablation_run: no variants requested");

  auto pretrained = training::pretrain_backbone(manifest, source, pretrain_cfg);
  pretrained.backbone.frozen = true;

  std::vector<AblationRow> rows;
  for (const auto& v : kVariants) {
    if (!requested.count(v.name)) continue;
    RankOptions ropts = opts;
    training::ModelState state = pretrained;
    if (v.train) {
      training::TrainConfig cfg = qgab_cfg;
      cfg.use_gram = v.use_gram;
      cfg.use_mpsl = v.use_mpsl;
      state = training::train_qgab(manifest, source, pretrained, cfg);
      ropts.use_qgab = true;
    } else {
      ropts.use_qgab = false;
    }
    auto eval = evaluate_manifest(manifest, source, state, ropts);
    rows.push_back({v.name, std::move(eval.report)});
  }
  return rows;
}

std::vector<SweepCell> sweep_run(const data::DatasetManifest& manifest,
                                 const data::ImageSource& source,
                                 const std::vector<double>& alphas,
                                 const std::vector<double>& betas,
                                 const training::TrainConfig& pretrain_cfg,
                                 const training::TrainConfig& qgab_cfg,
                                 const RankOptions& opts) {
  if (alphas.empty() || betas.empty()) {
    throw ConfigError("sweep_run: alpha and beta lists must be non-empty");
  }
  auto pretrained = training::pretrain_backbone(manifest, source, pretrain_cfg);
  pretrained.backbone.frozen = true;

  std::vector<SweepCell> cells;
  for (double alpha : alphas) {
    for (double beta : betas) {
      training::TrainConfig cfg = qgab_cfg;
      cfg.weights.alpha = alpha;
      cfg.weights.beta = beta;
      cfg.use_gram = true;
      cfg.use_mpsl = true;
      auto state = training::train_qgab(manifest, source, pretrained, cfg);
      auto eval = evaluate_manifest(manifest, source, state, opts);
      cells.push_back({alpha, beta, std::move(eval.report)});
    }
  }
  return cells;
}

Tensor attention_heat(const training::ModelState& model, const Image& gallery_img,
                      const Image& query_img) {
  require_trained(model, true);
  auto gallery_fm = features_of(gallery_img, model);
  auto query_fm = features_of(query_img, model);
  auto [refined, attention] = model::qgab_forward(gallery_fm, query_fm, model.qgab);
  return upsample_bilinear(attention.weights, gallery_img.height, gallery_img.width);
}

std::string report_to_json(const MetricsReport& report) {
  json j;
  j["cmc"] = report.cmc;
  j["map"] = report.map;
  j["per_query_ap"] = report.per_query_ap;
  j["skipped_queries"] = report.skipped_queries;
  return j.dump(2);
}

void write_report(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << report_to_json(report) << '\n';
  if (!out) throw IoError("failed writing report: " + path);
}

}  // namespace pisnet::evaluation
