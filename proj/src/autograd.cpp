// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pisnet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "pisnet/errors.hpp"

namespace pisnet::ag {

namespace {

Var make_node(Tensor value, std::vector<Var> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                     " vs " + b->value.shape_str());
  }
}

}  // namespace

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var scalar(double v) { return leaf(Tensor::scalar(v), false); }

void zero_grad(const Var& v) {
  if (!v->grad.data.empty()) {
    std::fill(v->grad.data.begin(), v->grad.data.end(), 0.0);
  }
}

void backward(const Var& root) {
  if (root->value.numel() != 1) {
    throw ShapeError("backward: root must be scalar, got " + root->value.shape_str());
  }
  // Postorder DFS (parents pushed before the node itself), then sweep the
  // list back-to-front so every node fires before its parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad.data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.data.empty()) n->backprop(*n);
  }
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  for (long i = 0; i < out.numel(); ++i) out.data[i] += b->value.data[i];
  auto n = make_node(std::move(out), {a, b});
  if (n->requires_grad) {
    n->backprop = [](Node& self) {
      for (int k = 0; k < 2; ++k) {
        Node* p = self.parents[k].get();
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i) p->grad.data[i] += self.grad.data[i];
      }
    };
  }
  return n;
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (long i = 0; i < out.numel(); ++i) out.data[i] -= b->value.data[i];
  auto n = make_node(std::move(out), {a, b});
  if (n->requires_grad) {
    n->backprop = [](Node& self) {
      Node* pa = self.parents[0].get();
      Node* pb = self.parents[1].get();
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i) pa->grad.data[i] += self.grad.data[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i) pb->grad.data[i] -= self.grad.data[i];
      }
    };
  }
  return n;
}

Var addn(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("addn: empty operand list");
  Tensor out = xs[0]->value;
  for (size_t k = 1; k < xs.size(); ++k) {
    check_same_shape(xs[0], xs[k], "addn");
    for (long i = 0; i < out.numel(); ++i) out.data[i] += xs[k]->value.data[i];
  }
  auto n = make_node(std::move(out), xs);
  if (n->requires_grad) {
    n->backprop = [](Node& self) {
      for (auto& pv : self.parents) {
        Node* p = pv.get();
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i) p->grad.data[i] += self.grad.data[i];
      }
    };
  }
  return n;
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (long i = 0; i < out.numel(); ++i) out.data[i] *= b->value.data[i];
  auto n = make_node(std::move(out), {a, b});
  if (n->requires_grad) {
    n->backprop = [](Node& self) {
      Node* pa = self.parents[0].get();
      Node* pb = self.parents[1].get();
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i)
          pa->grad.data[i] += self.grad.data[i] * pb->value.data[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i)
          pb->grad.data[i] += self.grad.data[i] * pa->value.data[i];
      }
    };
  }
  return n;
}

Var scale(const Var& a, double k) {
  Tensor out = a->value;
  for (double& x : out.data) x *= k;
  auto n = make_node(std::move(out), {a});
  if (n->requires_grad) {
    n->backprop = [k](Node& self) {
      Node* p = self.parents[0].get();
      p->ensure_grad();
      for (long i = 0; i < self.grad.numel(); ++i) p->grad.data[i] += k * self.grad.data[i];
    };
  }
  return n;
}

Var relu(const Var& a) {
  Tensor out = a->value;
  for (double& x : out.data) x = x > 0.0 ? x : 0.0;
  auto n = make_node(std::move(out), {a});
  if (n->requires_grad) {
    n->backprop = [](Node& self) {
      Node* p = self.parents[0].get();
      p->ensure_grad();
      for (long i = 0; i < self.grad.numel(); ++i) {
        if (p->value.data[i] > 0.0) p->grad.data[i] += self.grad.data[i];
      }
    };
  }
  return n;
}

// ---- shape ----

Var reshape(const Var& a, std::vector<int> shape) {
  if (numel_of(shape) != a->value.numel()) {
    throw ShapeError("reshape: element count mismatch");
  }
  Tensor out;
  out.shape = std::move(shape);
  out.data = a->value.data;
  auto n = make_node(std::move(out), {a});
  if (n->requires_grad) {
    n->backprop = [](Node& self) {
      Node* p = self.parents[0].get();
      p->ensure_grad();
      for (long i = 0; i < self.grad.numel(); ++i) p->grad.data[i] += self.grad.data[i];
    };
  }
  return n;
}

// ---- linear algebra ----

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.ndim() != 2 || B.ndim() != 2 || A.dim(1) != B.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + A.shape_str() + " " + B.shape_str());
  }
  const int M = A.dim(0), K = A.dim(1), N = B.dim(1);
  Tensor out({M, N});
  for (int i = 0; i < M; ++i) {
    const double* arow = &A.data[static_cast<size_t>(i) * K];
    double* orow = &out.data[static_cast<size_t>(i) * N];
    for (int k = 0; k < K; ++k) {
      const double av = arow[k];
      const double* brow = &B.data[static_cast<size_t>(k) * N];
      for (int j = 0; j < N; ++j) orow[j] += av * brow[j];
    }
  }
  auto n = make_node(std::move(out), {a, b});
  if (n->requires_grad) {
    n->backprop = [M, K, N](Node& self) {
      Node* pa = self.parents[0].get();
      Node* pb = self.parents[1].get();
      const Tensor& G = self.grad;
      if (pa->requires_grad) {
        pa->ensure_grad();
        // dA = G * B^T
        const Tensor& B2 = pb->value;
        for (int i = 0; i < M; ++i) {
          const double* grow = &G.data[static_cast<size_t>(i) * N];
          double* arow = &pa->grad.data[static_cast<size_t>(i) * K];
          for (int k = 0; k < K; ++k) {
            const double* brow = &B2.data[static_cast<size_t>(k) * N];
            double acc = 0.0;
            for (int j = 0; j < N; ++j) acc += grow[j] * brow[j];
            arow[k] += acc;
          }
        }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        // dB = A^T * G
        const Tensor& A2 = pa->value;
        for (int k = 0; k < K; ++k) {
          double* brow = &pb->grad.data[static_cast<size_t>(k) * N];
          for (int i = 0; i < M; ++i) {
            const double av = A2.data[static_cast<size_t>(i) * K + k];
            const double* grow = &G.data[static_cast<size_t>(i) * N];
            for (int j = 0; j < N; ++j) brow[j] += av * grow[j];
          }
        }
      }
    };
  }
  return n;
}

Var matmul_tn(const Var& a, const Var& b) {
  // out = A^T B with A: KxM, B: KxN
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.ndim() != 2 || B.ndim() != 2 || A.dim(0) != B.dim(0)) {
    throw ShapeError("matmul_tn: incompatible shapes " + A.shape_str() + " " + B.shape_str());
  }
  const int K = A.dim(0), M = A.dim(1), N = B.dim(1);
  Tensor out({M, N});
  for (int k = 0; k < K; ++k) {
    const double* arow = &A.data[static_cast<size_t>(k) * M];
    const double* brow = &B.data[static_cast<size_t>(k) * N];
    for (int i = 0; i < M; ++i) {
      const double av = arow[i];
      double* orow = &out.data[static_cast<size_t>(i) * N];
      for (int j = 0; j < N; ++j) orow[j] += av * brow[j];
    }
  }
  auto n = make_node(std::move(out), {a, b});
  if (n->requires_grad) {
    n->backprop = [K, M, N](Node& self) {
      Node* pa = self.parents[0].get();
      Node* pb = self.parents[1].get();
      const Tensor& G = self.grad;
      if (pa->requires_grad) {
        pa->ensure_grad();
        // dA[k,i] = sum_j G[i,j] B[k,j]
        const Tensor& B2 = pb->value;
        for (int k = 0; k < K; ++k) {
          double* arow = &pa->grad.data[static_cast<size_t>(k) * M];
          const double* brow = &B2.data[static_cast<size_t>(k) * N];
          for (int i = 0; i < M; ++i) {
            const double* grow = &G.data[static_cast<size_t>(i) * N];
            double acc = 0.0;
            for (int j = 0; j < N; ++j) acc += grow[j] * brow[j];
            arow[i] += acc;
          }
        }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        // dB[k,j] = sum_i A[k,i] G[i,j]
        const Tensor& A2 = pa->value;
        for (int k = 0; k < K; ++k) {
          const double* arow = &A2.data[static_cast<size_t>(k) * M];
          double* brow = &pb->grad.data[static_cast<size_t>(k) * N];
          for (int i = 0; i < M; ++i) {
            const double av = arow[i];
            const double* grow = &G.data[static_cast<size_t>(i) * N];
            for (int j = 0; j < N; ++j) brow[j] += av * grow[j];
          }
        }
      }
    };
  }
  return n;
}

// ---- attention primitives ----

Var softmax_rows(const Var& m) {
  const Tensor& M = m->value;
  if (M.ndim() != 2) throw ShapeError("softmax_rows: expected matrix");
  const int R = M.dim(0), C = M.dim(1);
  Tensor out({R, C});
  for (int i = 0; i < R; ++i) {
    const double* row = &M.data[static_cast<size_t>(i) * C];
    double* orow = &out.data[static_cast<size_t>(i) * C];
    double mx = row[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < C; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < C; ++j) orow[j] *= inv;
  }
  auto n = make_node(std::move(out), {m});
  if (n->requires_grad) {
    n->backprop = [R, C](Node& self) {
      Node* p = self.parents[0].get();
      p->ensure_grad();
      for (int i = 0; i < R; ++i) {
        const double* y = &self.value.data[static_cast<size_t>(i) * C];
        const double* g = &self.grad.data[static_cast<size_t>(i) * C];
        double dot = 0.0;
        for (int j = 0; j < C; ++j) dot += y[j] * g[j];
        double* pg = &p->grad.data[static_cast<size_t>(i) * C];
        for (int j = 0; j < C; ++j) pg[j] += y[j] * (g[j] - dot);
      }
    };
  }
  return n;
}

Var rowmax(const Var& m) {
  const Tensor& M = m->value;
  if (M.ndim() != 2) throw ShapeError("rowmax: expected matrix");
  const int R = M.dim(0), C = M.dim(1);
  Tensor out({R});
  std::vector<int> argmax(static_cast<size_t>(R));
  for (int i = 0; i < R; ++i) {
    const double* row = &M.data[static_cast<size_t>(i) * C];
    int best = 0;
    for (int j = 1; j < C; ++j) {
      if (row[j] > row[best]) best = j;
    }
    argmax[static_cast<size_t>(i)] = best;
    out.data[static_cast<size_t>(i)] = row[best];
  }
  auto n = make_node(std::move(out), {m});
  if (n->requires_grad) {
    n->backprop = [C, argmax = std::move(argmax)](Node& self) {
      Node* p = self.parents[0].get();
      p->ensure_grad();
      const int R2 = self.value.dim(0);
      for (int i = 0; i < R2; ++i) {
        p->grad.data[static_cast<size_t>(i) * C + argmax[static_cast<size_t>(i)]] +=
            self.grad.data[static_cast<size_t>(i)];
      }
    };
  }
  return n;
}

Var mul_bcast_row(const Var& x, const Var& a) {
  const Tensor& X = x->value;
  const Tensor& A = a->value;
  if (X.ndim() != 2 || A.ndim() != 1 || X.dim(1) != A.dim(0)) {
    throw ShapeError("mul_bcast_row: incompatible shapes " + X.shape_str() + " " +
                     A.shape_str());
  }
  const int C = X.dim(0), P = X.dim(1);
  Tensor out({C, P});
  for (int c = 0; c < C; ++c) {
    const double* xr = &X.data[static_cast<size_t>(c) * P];
    double* orow = &out.data[static_cast<size_t>(c) * P];
    for (int p = 0; p < P; ++p) orow[p] = xr[p] * A.data[static_cast<size_t>(p)];
  }
  auto n = make_node(std::move(out), {x, a});
  if (n->requires_grad) {
    n->backprop = [C, P](Node& self) {
      Node* px = self.parents[0].get();
      Node* pa = self.parents[1].get();
      if (px->requires_grad) {
        px->ensure_grad();
        for (int c = 0; c < C; ++c) {
          const double* g = &self.grad.data[static_cast<size_t>(c) * P];
          double* xg = &px->grad.data[static_cast<size_t>(c) * P];
          for (int p = 0; p < P; ++p) xg[p] += g[p] * pa->value.data[static_cast<size_t>(p)];
        }
      }
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (int c = 0; c < C; ++c) {
          const double* g = &self.grad.data[static_cast<size_t>(c) * P];
          const double* xv = &px->value.data[static_cast<size_t>(c) * P];
          for (int p = 0; p < P; ++p) pa->grad.data[static_cast<size_t>(p)] += g[p] * xv[p];
        }
      }
    };
  }
  return n;
}

// ---- convolution / pooling / heads ----

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& X = x->value;
  const Tensor& W = w->value;
  const Tensor& B = b->value;
  if (X.ndim() != 3 || W.ndim() != 4 || B.ndim() != 1) {
    throw ShapeError("conv2d: expected x CxHxW, w OxCxKxK, b O");
  }
  const int C = X.dim(0), H = X.dim(1), Wd = X.dim(2);
  const int O = W.dim(0), K = W.dim(2);
  if (W.dim(1) != C || W.dim(3) != K || B.dim(0) != O) {
    throw ShapeError("conv2d: weight shape " + W.shape_str() + " does not match input " +
                     X.shape_str());
  }
  const int OH = (H + 2 * pad - K) / stride + 1;
  const int OW = (Wd + 2 * pad - K) / stride + 1;
  if (OH < 1 || OW < 1) throw ShapeError("conv2d: output collapses to zero size");
  Tensor out({O, OH, OW});
  for (int o = 0; o < O; ++o) {
    double* oplane = &out.data[static_cast<size_t>(o) * OH * OW];
    const double bias = B.data[static_cast<size_t>(o)];
    for (long i = 0; i < static_cast<long>(OH) * OW; ++i) oplane[i] = bias;
    for (int c = 0; c < C; ++c) {
      const double* xplane = &X.data[static_cast<size_t>(c) * H * Wd];
      const double* wk = &W.data[((static_cast<size_t>(o) * C + c) * K) * K];
      for (int ky = 0; ky < K; ++ky) {
        for (int kx = 0; kx < K; ++kx) {
          const double wv = wk[ky * K + kx];
          for (int oy = 0; oy < OH; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            const double* xrow = &xplane[static_cast<size_t>(iy) * Wd];
            double* orow = &oplane[static_cast<size_t>(oy) * OW];
            for (int ox = 0; ox < OW; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= Wd) continue;
              orow[ox] += wv * xrow[ix];
            }
          }
        }
      }
    }
  }
  auto n = make_node(std::move(out), {x, w, b});
  if (n->requires_grad) {
    n->backprop = [C, H, Wd, O, K, OH, OW, stride, pad](Node& self) {
      Node* px = self.parents[0].get();
      Node* pw = self.parents[1].get();
      Node* pb = self.parents[2].get();
      const Tensor& G = self.grad;
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int o = 0; o < O; ++o) {
          const double* gplane = &G.data[static_cast<size_t>(o) * OH * OW];
          double acc = 0.0;
          for (long i = 0; i < static_cast<long>(OH) * OW; ++i) acc += gplane[i];
          pb->grad.data[static_cast<size_t>(o)] += acc;
        }
      }
      if (pw->requires_grad) {
        pw->ensure_grad();
        const Tensor& X2 = px->value;
        for (int o = 0; o < O; ++o) {
          const double* gplane = &G.data[static_cast<size_t>(o) * OH * OW];
          for (int c = 0; c < C; ++c) {
            const double* xplane = &X2.data[static_cast<size_t>(c) * H * Wd];
            double* wk = &pw->grad.data[((static_cast<size_t>(o) * C + c) * K) * K];
            for (int ky = 0; ky < K; ++ky) {
              for (int kx = 0; kx < K; ++kx) {
                double acc = 0.0;
                for (int oy = 0; oy < OH; ++oy) {
                  const int iy = oy * stride - pad + ky;
                  if (iy < 0 || iy >= H) continue;
                  const double* xrow = &xplane[static_cast<size_t>(iy) * Wd];
                  const double* grow = &gplane[static_cast<size_t>(oy) * OW];
                  for (int ox = 0; ox < OW; ++ox) {
                    const int ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= Wd) continue;
                    acc += grow[ox] * xrow[ix];
                  }
                }
                wk[ky * K + kx] += acc;
              }
            }
          }
        }
      }
      if (px->requires_grad) {
        px->ensure_grad();
        const Tensor& W2 = pw->value;
        for (int o = 0; o < O; ++o) {
          const double* gplane = &G.data[static_cast<size_t>(o) * OH * OW];
          for (int c = 0; c < C; ++c) {
            double* xg = &px->grad.data[static_cast<size_t>(c) * H * Wd];
            const double* wk = &W2.data[((static_cast<size_t>(o) * C + c) * K) * K];
            for (int ky = 0; ky < K; ++ky) {
              for (int kx = 0; kx < K; ++kx) {
                const double wv = wk[ky * K + kx];
                for (int oy = 0; oy < OH; ++oy) {
                  const int iy = oy * stride - pad + ky;
                  if (iy < 0 || iy >= H) continue;
                  double* xrow = &xg[static_cast<size_t>(iy) * Wd];
                  const double* grow = &gplane[static_cast<size_t>(oy) * OW];
                  for (int ox = 0; ox < OW; ++ox) {
                    const int ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= Wd) continue;
                    xrow[ix] += wv * grow[ox];
                  }
                }
              }
            }
          }
        }
      }
    };
  }
  return n;
}

Var global_avg_pool(const Var& x) {
  const Tensor& X = x->value;
  if (X.ndim() != 3) throw ShapeError("global_avg_pool: expected CxHxW");
  const int C = X.dim(0);
  const long S = static_cast<long>(X.dim(1)) * X.dim(2);
  Tensor out({C});
  const double inv = 1.0 / static_cast<double>(S);
  for (int c = 0; c < C; ++c) {
    const double* plane = &X.data[static_cast<size_t>(c) * S];
    double acc = 0.0;
    for (long i = 0; i < S; ++i) acc += plane[i];
    out.data[static_cast<size_t>(c)] = acc * inv;
  }
  auto n = make_node(std::move(out), {x});
  if (n->requires_grad) {
    n->backprop = [C, S, inv](Node& self) {
      Node* p = self.parents[0].get();
      p->ensure_grad();
      for (int c = 0; c < C; ++c) {
        const double g = self.grad.data[static_cast<size_t>(c)] * inv;
        double* plane = &p->grad.data[static_cast<size_t>(c) * S];
        for (long i = 0; i < S; ++i) plane[i] += g;
      }
    };
  }
  return n;
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& X = x->value;
  const Tensor& W = w->value;
  const Tensor& B = b->value;
  if (X.ndim() != 1 || W.ndim() != 2 || B.ndim() != 1 || W.dim(1) != X.dim(0) ||
      W.dim(0) != B.dim(0)) {
    throw ShapeError("linear: incompatible shapes");
  }
  const int O = W.dim(0), I = W.dim(1);
  Tensor out({O});
  for (int o = 0; o < O; ++o) {
    const double* wrow = &W.data[static_cast<size_t>(o) * I];
    double acc = B.data[static_cast<size_t>(o)];
    for (int i = 0; i < I; ++i) acc += wrow[i] * X.data[static_cast<size_t>(i)];
    out.data[static_cast<size_t>(o)] = acc;
  }
  auto n = make_node(std::move(out), {x, w, b});
  if (n->requires_grad) {
    n->backprop = [O, I](Node& self) {
      Node* px = self.parents[0].get();
      Node* pw = self.parents[1].get();
      Node* pb = self.parents[2].get();
      if (px->requires_grad) {
        px->ensure_grad();
        for (int o = 0; o < O; ++o) {
          const double g = self.grad.data[static_cast<size_t>(o)];
          const double* wrow = &pw->value.data[static_cast<size_t>(o) * I];
          for (int i = 0; i < I; ++i) px->grad.data[static_cast<size_t>(i)] += g * wrow[i];
        }
      }
      if (pw->requires_grad) {
        pw->ensure_grad();
        for (int o = 0; o < O; ++o) {
          const double g = self.grad.data[static_cast<size_t>(o)];
          double* wrow = &pw->grad.data[static_cast<size_t>(o) * I];
          for (int i = 0; i < I; ++i) wrow[i] += g * px->value.data[static_cast<size_t>(i)];
        }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int o = 0; o < O; ++o)
          pb->grad.data[static_cast<size_t>(o)] += self.grad.data[static_cast<size_t>(o)];
      }
    };
  }
  return n;
}

// ---- losses ----

Var cross_entropy(const Var& logits, int label) {
  const Tensor& L = logits->value;
  if (L.ndim() != 1) throw ShapeError("cross_entropy: expected logit vector");
  const int K = L.dim(0);
  if (label < 0 || label >= K) {
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) +
                            " out of range for " + std::to_string(K) + " classes");
  }
  double mx = L.data[0];
  for (int k = 1; k < K; ++k) mx = std::max(mx, L.data[static_cast<size_t>(k)]);
  double sum = 0.0;
  for (int k = 0; k < K; ++k) sum += std::exp(L.data[static_cast<size_t>(k)] - mx);
  const double lse = mx + std::log(sum);
  Tensor out = Tensor::scalar(lse - L.data[static_cast<size_t>(label)]);
  auto n = make_node(std::move(out), {logits});
  if (n->requires_grad) {
    n->backprop = [K, label, mx, sum](Node& self) {
      Node* p = self.parents[0].get();
      p->ensure_grad();
      const double g = self.grad.data[0];
      for (int k = 0; k < K; ++k) {
        double soft = std::exp(p->value.data[static_cast<size_t>(k)] - mx) / sum;
        if (k == label) soft -= 1.0;
        p->grad.data[static_cast<size_t>(k)] += g * soft;
      }
    };
  }
  return n;
}

Var cosine_distance(const Var& u, const Var& v) {
  const Tensor& U = u->value;
  const Tensor& V = v->value;
  if (U.ndim() != 1 || V.ndim() != 1 || U.dim(0) != V.dim(0)) {
    throw ShapeError("cosine_distance: expected equal-length vectors");
  }
  const int N = U.dim(0);
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (int i = 0; i < N; ++i) {
    dot += U.data[static_cast<size_t>(i)] * V.data[static_cast<size_t>(i)];
    nu += U.data[static_cast<size_t>(i)] * U.data[static_cast<size_t>(i)];
    nv += V.data[static_cast<size_t>(i)] * V.data[static_cast<size_t>(i)];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  if (nu == 0.0 || nv == 0.0) {
    throw NumericError("cosine_distance: zero-norm input");
  }
  const double cosv = dot / (nu * nv);
  auto n = make_node(Tensor::scalar(1.0 - cosv), {u, v});
  if (n->requires_grad) {
    n->backprop = [N, dot, nu, nv](Node& self) {
      Node* pu = self.parents[0].get();
      Node* pv = self.parents[1].get();
      const double g = self.grad.data[0];
      // d(1-cos)/du = -(v/(|u||v|) - dot*u/(|u|^3 |v|))
      if (pu->requires_grad) {
        pu->ensure_grad();
        const double a = 1.0 / (nu * nv);
        const double bcoef = dot / (nu * nu * nu * nv);
        for (int i = 0; i < N; ++i) {
          pu->grad.data[static_cast<size_t>(i)] +=
              g * (bcoef * pu->value.data[static_cast<size_t>(i)] -
                   a * pv->value.data[static_cast<size_t>(i)]);
        }
      }
      if (pv->requires_grad) {
        pv->ensure_grad();
        const double a = 1.0 / (nu * nv);
        const double bcoef = dot / (nv * nv * nv * nu);
        for (int i = 0; i < N; ++i) {
          pv->grad.data[static_cast<size_t>(i)] +=
              g * (bcoef * pv->value.data[static_cast<size_t>(i)] -
                   a * pu->value.data[static_cast<size_t>(i)]);
        }
      }
    };
  }
  return n;
}

// ---- placement ----

Var place_two(const Var& q, const Var& s, const std::vector<int>& sel,
              const std::vector<int>& src, int out_h, int out_w) {
  const Tensor& Q = q->value;
  const Tensor& S = s->value;
  if (Q.ndim() != 3 || S.ndim() != 3 || Q.dim(0) != S.dim(0)) {
    throw ShapeError("place_two: sources must be CxHxW with matching channels");
  }
  const int C = Q.dim(0);
  const long cells = static_cast<long>(out_h) * out_w;
  if (static_cast<long>(sel.size()) != cells || static_cast<long>(src.size()) != cells) {
    throw ShapeError("place_two: placement map size mismatch");
  }
  const long qs = static_cast<long>(Q.dim(1)) * Q.dim(2);
  const long ss = static_cast<long>(S.dim(1)) * S.dim(2);
  Tensor out({C, out_h, out_w});
  for (long i = 0; i < cells; ++i) {
    if (sel[static_cast<size_t>(i)] < 0) continue;
    const bool from_q = sel[static_cast<size_t>(i)] == 0;
    const long j = src[static_cast<size_t>(i)];
    const double* base = from_q ? Q.data.data() : S.data.data();
    const long plane = from_q ? qs : ss;
    for (int c = 0; c < C; ++c) {
      out.data[static_cast<size_t>(c) * cells + i] = base[static_cast<size_t>(c) * plane + j];
    }
  }
  auto n = make_node(std::move(out), {q, s});
  if (n->requires_grad) {
    n->backprop = [C, cells, qs, ss, sel, src](Node& self) {
      Node* pq = self.parents[0].get();
      Node* ps = self.parents[1].get();
      if (pq->requires_grad) pq->ensure_grad();
      if (ps->requires_grad) ps->ensure_grad();
      for (long i = 0; i < cells; ++i) {
        const int sv = sel[static_cast<size_t>(i)];
        if (sv < 0) continue;
        Node* p = sv == 0 ? pq : ps;
        if (!p->requires_grad) continue;
        const long plane = sv == 0 ? qs : ss;
        const long j = src[static_cast<size_t>(i)];
        for (int c = 0; c < C; ++c) {
          p->grad.data[static_cast<size_t>(c) * plane + j] +=
              self.grad.data[static_cast<size_t>(c) * cells + i];
        }
      }
    };
  }
  return n;
}

// ---- probes ----

Var inner(const Var& x, const Tensor& w) {
  if (x->value.numel() != w.numel()) throw ShapeError("inner: size mismatch");
  double acc = 0.0;
  for (long i = 0; i < w.numel(); ++i) acc += x->value.data[i] * w.data[i];
  auto n = make_node(Tensor::scalar(acc), {x});
  if (n->requires_grad) {
    n->backprop = [w](Node& self) {
      Node* p = self.parents[0].get();
      p->ensure_grad();
      const double g = self.grad.data[0];
      for (long i = 0; i < w.numel(); ++i) p->grad.data[i] += g * w.data[i];
    };
  }
  return n;
}

}  // namespace pisnet::ag
