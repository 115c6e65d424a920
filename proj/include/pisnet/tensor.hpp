// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pisnet/rng.hpp"

namespace pisnet {

// Dense row-major tensor of doubles with a small dynamic rank.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v);
  static Tensor scalar(double v);
  static Tensor uniform(Rng& rng, std::vector<int> s, double lo, double hi);
  static Tensor normal(Rng& rng, std::vector<int> s, double stddev);

  int ndim() const { return static_cast<int>(shape.size()); }
  long numel() const { return static_cast<long>(data.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double& at(int i) { return data[static_cast<size_t>(i)]; }
  double at(int i) const { return data[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  double at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  std::string shape_str() const;
};

inline long numel_of(const std::vector<int>& shape) {
  long n = 1;
  for (int d : shape) n *= d;
  return n;
}

}  // namespace pisnet
