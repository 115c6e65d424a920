// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pisnet/types.hpp"

#include <string>

#include "pisnet/errors.hpp"

namespace pisnet {

void BoxLayout::validate() const {
  if (boxes.size() < 2) {
    throw LayoutError("layout needs at least 2 boxes, got " + std::to_string(boxes.size()));
  }
  if (z_order.size() != boxes.size()) {
    throw LayoutError("z_order must be a permutation of box indices");
  }
  std::vector<bool> seen(boxes.size(), false);
  for (int z : z_order) {
    if (z < 0 || static_cast<size_t>(z) >= boxes.size() || seen[static_cast<size_t>(z)]) {
      throw LayoutError("z_order must be a permutation of box indices");
    }
    seen[static_cast<size_t>(z)] = true;
  }
  for (const auto& lb : boxes) {
    const Box& b = lb.box;
    if (!(0.0 <= b.x0 && b.x0 < b.x1 && b.x1 <= 1.0 && 0.0 <= b.y0 && b.y0 < b.y1 &&
          b.y1 <= 1.0)) {
      throw LayoutError("layout box outside [0,1] or degenerate");
    }
  }
  for (size_t i = 0; i < boxes.size(); ++i) {
    bool any = false;
    for (size_t j = 0; j < boxes.size() && !any; ++j) {
      if (i != j && overlaps(boxes[i].box, boxes[j].box)) any = true;
    }
    if (!any) throw LayoutError("every layout box must overlap at least one other box");
  }
}

void FeatureMap::validate() const {
  if (values.ndim() != 3) throw ShapeError("feature map must be CxHxW");
  if (!values.all_finite()) throw NumericError("feature map contains non-finite values");
}

}  // namespace pisnet
