// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pisnet/autograd.hpp"
#include "pisnet/rng.hpp"
#include "pisnet/tensor.hpp"
#include "pisnet/types.hpp"

namespace pisnet::model {

// ---- backbone ----

struct StageConfig {
  int out_channels = 32;
  int stride = 1;
  int kernel = 3;
  int blocks = 1;  // convs per stage; only the first carries the stride
};

struct BackboneConfig {
  int in_channels = 3;
  std::vector<StageConfig> stages;

  // 4-stage plain stack, total stride 8.
  static BackboneConfig small(int out_channels);
  // Deeper residual-style depth budget behind the same interface; weights
  // still train from scratch.
  static BackboneConfig deep(int out_channels);
  static BackboneConfig preset(const std::string& name);

  int total_stride() const;
  int out_channels() const;
  int conv_count() const;
};

struct BackboneParams {
  BackboneConfig config;
  std::vector<Tensor> weights;  // one OxCxKxK tensor per conv
  std::vector<Tensor> biases;   // one O tensor per conv
  bool frozen = false;

  static BackboneParams init(const BackboneConfig& cfg, Rng& rng);
};

// ---- query-guided attention ----

struct QgabParams {
  Tensor c1_weights;  // C' x C
  Tensor c2_weights;  // C' x C
  int guidance_channels = 0;

  static QgabParams init(int in_channels, int guidance_channels, Rng& rng);
  int in_channels() const { return c1_weights.dim(1); }
};

// ---- graph layer (differentiable) ----

struct BackboneVars {
  std::vector<ag::Var> weights;
  std::vector<ag::Var> biases;
};

BackboneVars make_vars(BackboneParams& params, bool trainable);

struct QgabVars {
  ag::Var c1;
  ag::Var c2;
};

QgabVars make_vars(QgabParams& params, bool trainable);

ag::Var backbone_graph(const ag::Var& image, const BackboneVars& vars,
                       const BackboneConfig& cfg);

struct AttentionOut {
  ag::Var refined;    // same shape as the attended map
  ag::Var attention;  // flat vector over attended pixels
  ag::Var softmax;    // attended-pixels x guide-pixels row-stochastic matrix
};

// Shared core of the forward and reversed passes: c1 reads the attended
// map, c2 reads the guide, affinity rows are indexed by attended pixels.
AttentionOut attention_graph(const ag::Var& attended, const ag::Var& guide,
                             const QgabVars& vars);

ag::Var embed_graph(const ag::Var& fm);

// Nearest-neighbor placement of two sources into an output grid following
// a layout; cells covered by neither box stay zero.
struct PlacementMap {
  int out_h = 0;
  int out_w = 0;
  std::vector<int> sel;  // -1 none, 0 first source, 1 second source
  std::vector<int> src;  // flat spatial index into the selected source
};

PlacementMap build_placement(const BoxLayout& layout, int q_h, int q_w, int s_h, int s_w,
                             int out_h, int out_w);

ag::Var corrupt_graph(const ag::Var& query_fm, const ag::Var& sampled_fm,
                      const PlacementMap& pm);

// ---- plain operation surface ----

FeatureMap backbone_forward(const Tensor& image, const BackboneParams& params);

std::pair<FeatureMap, AttentionMap> qgab_forward(const FeatureMap& gallery,
                                                 const FeatureMap& query,
                                                 const QgabParams& params);

struct QgabDebug {
  FeatureMap refined;
  AttentionMap attention;
  Tensor softmax;  // gallery-pixels x query-pixels
};

QgabDebug qgab_forward_debug(const FeatureMap& gallery, const FeatureMap& query,
                             const QgabParams& params);

FeatureMap feature_corrupt(const FeatureMap& query_fm, const FeatureMap& sampled_fm,
                           const BoxLayout& layout, int out_h, int out_w);

FeatureMap gram_forward(const FeatureMap& refined_gallery, const FeatureMap& corrupted_query,
                        const QgabParams& params);

Tensor embed(const FeatureMap& fm);

}  // namespace pisnet::model
