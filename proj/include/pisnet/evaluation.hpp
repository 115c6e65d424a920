// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "pisnet/data.hpp"
#include "pisnet/training.hpp"

namespace pisnet::evaluation {

struct RetrievalEntry {
  int gallery_index = -1;
  double score = 0.0;
  bool is_match = false;
};

// Per-query ranked gallery; scores are non-increasing down the list.
struct RetrievalTable {
  int query_id = -1;
  std::vector<RetrievalEntry> ranked;
};

struct MetricsReport {
  std::vector<double> cmc;  // cmc[k-1] = fraction with first match at rank <= k
  double map = 0.0;
  std::vector<double> per_query_ap;
  int skipped_queries = 0;  // queries without any gallery match
};

struct RankOptions {
  bool use_qgab = true;  // false scores with plain embedding cosine
  int rerank_top = -1;   // <= 0 scores the whole gallery with attention
  int max_rank = 20;
};

// Cosine similarity between the query-refined gallery embedding and the
// query embedding; the reversed pass and feature corruption never run.
double pairwise_score(const data::PISample& query, const data::PISample& gallery_entry,
                      const training::ModelState& model);

RetrievalTable rank_gallery(const data::PISample& query,
                            const std::vector<data::PISample>& gallery,
                            const training::ModelState& model, const RankOptions& opts = {});

// cmc[k-1] over k = 1..max_rank; zero-match queries are excluded and
// counted into *skipped.
std::vector<double> compute_cmc(const std::vector<RetrievalTable>& tables, int max_rank,
                                int* skipped = nullptr);

double compute_map(const std::vector<RetrievalTable>& tables,
                   std::vector<double>* per_query = nullptr, int* skipped = nullptr);

// Single-query protocol over the manifest's query split against the
// gallery + distractor splits, with cached gallery features. When camera
// ids exist, same-camera same-id entries are dropped per query.
struct EvalResult {
  MetricsReport report;
  std::vector<RetrievalTable> tables;  // gallery_index = manifest entry index
};

EvalResult evaluate_manifest(const data::DatasetManifest& manifest,
                             const data::ImageSource& source,
                             const training::ModelState& model, const RankOptions& opts = {});

// Component-analysis harness: trains and evaluates each variant under the
// same seed and data. Output rows follow the canonical order baseline,
// qgab, qgab_mpsl, qgab_gram, full.
struct AblationRow {
  std::string variant;
  MetricsReport report;
};

std::vector<AblationRow> ablation_run(const data::DatasetManifest& manifest,
                                      const data::ImageSource& source,
                                      const std::vector<std::string>& variants,
                                      const training::TrainConfig& pretrain_cfg,
                                      const training::TrainConfig& qgab_cfg,
                                      const RankOptions& opts = {});

// Loss-weight sensitivity grid over the full model.
struct SweepCell {
  double alpha = 0.0;
  double beta = 0.0;
  MetricsReport report;
};

std::vector<SweepCell> sweep_run(const data::DatasetManifest& manifest,
                                 const data::ImageSource& source,
                                 const std::vector<double>& alphas,
                                 const std::vector<double>& betas,
                                 const training::TrainConfig& pretrain_cfg,
                                 const training::TrainConfig& qgab_cfg,
                                 const RankOptions& opts = {});

// Query-guided attention upsampled to the gallery image resolution.
Tensor attention_heat(const training::ModelState& model, const Image& gallery_img,
                      const Image& query_img);

// Report serialization (structured text, one JSON document).
std::string report_to_json(const MetricsReport& report);
void write_report(const MetricsReport& report, const std::string& path);

}  // namespace pisnet::evaluation
