// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "pisnet/autograd.hpp"
#include "pisnet/tensor.hpp"

namespace pisnet::losses {

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.5;
  double margin_c = 0.3;
};

// The displayed separation-loss formula and its prose contradict each
// other on which distance is pulled and which is pushed; both readings
// stay available. `prose` pulls the refined feature toward its guiding
// query and pushes it away from the other query's refinement.
enum class MpslFormula { prose, verbatim };

MpslFormula parse_mpsl_formula(const std::string& s);
const char* to_string(MpslFormula f);

struct LossBundle {
  double l_g = 0.0;
  double l_q = 0.0;
  double l_m = 0.0;
  double l_final = 0.0;
};

// 1 - u.v / (|u||v|), in [0,2]. Zero-norm inputs raise NumericError.
double cosine_distance(const Tensor& u, const Tensor& v);

// Cross entropy of softmax(logits) against the label index.
double id_loss(const Tensor& logits, int label);

// Hinge separation between two refinements of one gallery under different
// query guidance.
double mps_loss(const Tensor& feat_a, const Tensor& feat_b, const Tensor& query_a,
                const LossWeights& weights, MpslFormula formula = MpslFormula::prose);

ag::Var mps_loss_graph(const ag::Var& feat_a, const ag::Var& feat_b, const ag::Var& query_a,
                       const LossWeights& weights, MpslFormula formula = MpslFormula::prose);

// l_final = l_g + alpha * l_q + beta * l_m.
LossBundle total_loss(double l_g, double l_q, double l_m, const LossWeights& weights);

}  // namespace pisnet::losses
