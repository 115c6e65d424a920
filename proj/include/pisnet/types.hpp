// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <vector>

#include "pisnet/tensor.hpp"

namespace pisnet {

// Axis-aligned box in normalized [0,1] (or raw, possibly out-of-range)
// coordinates: x grows rightwards, y downwards, half-open extent semantics
// are up to the consumer.
struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
};

inline Box intersect(const Box& a, const Box& b) {
  Box r;
  r.x0 = std::max(a.x0, b.x0);
  r.y0 = std::max(a.y0, b.y0);
  r.x1 = std::min(a.x1, b.x1);
  r.y1 = std::min(a.y1, b.y1);
  if (r.x1 < r.x0) r.x1 = r.x0;
  if (r.y1 < r.y0) r.y1 = r.y0;
  return r;
}

inline bool overlaps(const Box& a, const Box& b) { return intersect(a, b).area() > 0.0; }

struct LayoutBox {
  int id = -1;
  Box box;
};

// Relative position relationship extracted from a multi-person image:
// normalized person boxes plus the front-to-back paint order.
struct BoxLayout {
  std::vector<LayoutBox> boxes;
  std::vector<int> z_order;  // paint order; later entries overwrite earlier ones

  void validate() const;
};

// C x H x W activation grid produced by the backbone or attention blocks.
struct FeatureMap {
  Tensor values;

  int channels() const { return values.dim(0); }
  int height() const { return values.dim(1); }
  int width() const { return values.dim(2); }

  void validate() const;
};

// Per-gallery-pixel attention weights in (0,1].
struct AttentionMap {
  Tensor weights;  // H x W

  int height() const { return weights.dim(0); }
  int width() const { return weights.dim(1); }
};

}  // namespace pisnet
