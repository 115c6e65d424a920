// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pisnet/tensor.hpp"

#include <sstream>

#include "pisnet/errors.hpp"

namespace pisnet {

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  for (int d : shape) {
    if (d < 1) throw ShapeError("tensor dimension must be >= 1, got " + shape_str());
  }
  data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
}

Tensor Tensor::full(std::vector<int> s, double v) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = v;
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::uniform(Rng& rng, std::vector<int> s, double lo, double hi) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::normal(Rng& rng, std::vector<int> s, double stddev) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = stddev * rng.normal();
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace pisnet
