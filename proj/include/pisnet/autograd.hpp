// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "pisnet/tensor.hpp"

namespace pisnet::ag {

// Reverse-mode automatic differentiation over a dynamically built tape.
// Every op allocates a Node holding the forward value; when any input
// requires gradients the op also installs a closure that pushes the
// node's gradient into its parents. backward() walks the tape in reverse
// topological order from a scalar root.

struct Node {
  Tensor value;
  Tensor grad;  // empty until first touched
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.data.empty()) grad = Tensor::zeros(value.shape);
  }
};

using Var = std::shared_ptr<Node>;

Var leaf(Tensor value, bool requires_grad = false);
Var scalar(double v);  // non-differentiable constant

// Seeds root->grad with 1 (root must be scalar) and propagates.
void backward(const Var& root);

// Zeroes the accumulated gradient of a leaf (cheap no-op if untouched).
void zero_grad(const Var& v);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var addn(const std::vector<Var>& xs);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double k);
Var relu(const Var& a);

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);     // (MxK)(KxN)
Var matmul_tn(const Var& a, const Var& b);  // (KxM)^T (KxN) -> MxN

// ---- attention primitives ----
Var softmax_rows(const Var& m);             // per-row softmax of a matrix
Var rowmax(const Var& m);                   // per-row max -> vector
Var mul_bcast_row(const Var& x, const Var& a);  // x[c,p] * a[p]

// ---- convolution / pooling / heads ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var global_avg_pool(const Var& x);          // CxHxW -> C
Var linear(const Var& x, const Var& w, const Var& b);  // w: OxI, x: I -> O

// ---- losses ----
Var cross_entropy(const Var& logits, int label);
Var cosine_distance(const Var& u, const Var& v);  // 1 - cos

// ---- placement (feature corruption) ----
// For each output spatial cell i: sel[i] = -1 keeps zero, 0 reads from q,
// 1 reads from s; src[i] is the flat spatial index into the chosen source.
Var place_two(const Var& q, const Var& s, const std::vector<int>& sel,
              const std::vector<int>& src, int out_h, int out_w);

// ---- probes ----
Var inner(const Var& x, const Tensor& w);   // sum_i x_i * w_i -> scalar

}  // namespace pisnet::ag
