// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pisnet/losses.hpp"

#include <cmath>
#include <string>

#include "pisnet/errors.hpp"

namespace pisnet::losses {

MpslFormula parse_mpsl_formula(const std::string& s) {
  if (s == "prose") return MpslFormula::prose;
  if (s == "verbatim") return MpslFormula::verbatim;
  throw ConfigError("mpsl formula must be 'prose' or 'verbatim', got '" + s + "'");
}

const char* to_string(MpslFormula f) {
  return f == MpslFormula::prose ? "prose" : "verbatim";
}

double cosine_distance(const Tensor& u, const Tensor& v) {
  return ag::cosine_distance(ag::leaf(u), ag::leaf(v))->value.data[0];
}

double id_loss(const Tensor& logits, int label) {
  return ag::cross_entropy(ag::leaf(logits), label)->value.data[0];
}

ag::Var mps_loss_graph(const ag::Var& feat_a, const ag::Var& feat_b, const ag::Var& query_a,
                       const LossWeights& weights, MpslFormula formula) {
  auto d_pull = ag::cosine_distance(feat_a, query_a);
  auto d_push = ag::cosine_distance(feat_a, feat_b);
  ag::Var hinge_arg;
  if (formula == MpslFormula::prose) {
    hinge_arg = ag::add(ag::scalar(weights.margin_c), ag::sub(d_pull, d_push));
  } else {
    hinge_arg = ag::add(ag::scalar(weights.margin_c), ag::sub(d_push, d_pull));
  }
  return ag::relu(hinge_arg);
}

double mps_loss(const Tensor& feat_a, const Tensor& feat_b, const Tensor& query_a,
                const LossWeights& weights, MpslFormula formula) {
  return mps_loss_graph(ag::leaf(feat_a), ag::leaf(feat_b), ag::leaf(query_a), weights, formula)
      ->value.data[0];
}

LossBundle total_loss(double l_g, double l_q, double l_m, const LossWeights& weights) {
  if (!(std::isfinite(l_g) && std::isfinite(l_q) && std::isfinite(l_m))) {
    throw NumericError("total_loss: non-finite component");
  }
  if (l_g < 0.0 || l_q < 0.0 || l_m < 0.0) {
    throw std::invalid_argument("total_loss: components must be non-negative");
  }
  LossBundle b;
  b.l_g = l_g;
  b.l_q = l_q;
  b.l_m = l_m;
  b.l_final = l_g + weights.alpha * l_q + weights.beta * l_m;
  return b;
}

}  // namespace pisnet::losses
