// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "pisnet/autograd.hpp"
#include "pisnet/tensor.hpp"

namespace pisnet::testutil {

// Central finite-difference oracle for reverse-mode gradients.
//
// `build` must construct a fresh graph reading the current contents of the
// given leaf tensors and return the scalar root plus the leaf Vars in the
// same order as `leaves`. Returns the worst relative error over every
// element of every leaf; relative error uses a 1e-6 floor so that noise on
// near-zero gradients does not blow up the ratio.
inline double max_grad_rel_error(
    const std::function<std::pair<ag::Var, std::vector<ag::Var>>()>& build,
    const std::vector<Tensor*>& leaves, double eps = 1e-5) {
  auto [root, leaf_vars] = build();
  ag::backward(root);
  std::vector<Tensor> analytic;
  analytic.reserve(leaf_vars.size());
  for (auto& lv : leaf_vars) {
    lv->ensure_grad();
    analytic.push_back(lv->grad);
  }

  auto eval = [&]() {
    auto [r, ls] = build();
    return r->value.data[0];
  };

  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor* t = leaves[li];
    for (long i = 0; i < t->numel(); ++i) {
      const double saved = t->data[i];
      const double h = eps * std::max(1.0, std::fabs(saved));
      t->data[i] = saved + h;
      const double fp = eval();
      t->data[i] = saved - h;
      const double fm = eval();
      t->data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[li].data[i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace pisnet::testutil
