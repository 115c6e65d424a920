// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pisnet/tensor.hpp"

namespace pisnet {

// Interleaved 8-bit RGB raster.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pix;  // height * width * 3

  Image() = default;
  Image(int h, int w) : height(h), width(w), pix(static_cast<size_t>(h) * w * 3, 0) {}

  uint8_t& at(int y, int x, int c) {
    return pix[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  uint8_t at(int y, int x, int c) const {
    return pix[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
};

// Binary PPM (P6, maxval 255).
Image read_ppm(const std::string& path);
void write_ppm(const Image& img, const std::string& path);

// 3xHxW tensor with values in [0,1].
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);

// Bilinear upsample of an HxW map to the given resolution.
Tensor upsample_bilinear(const Tensor& map, int out_h, int out_w);

// Blue-to-red colormap over [0,1].
void colormap_blue_red(double t, uint8_t rgb[3]);

// Alpha-blends a min/max-normalized heat map over the base image.
Image overlay_heatmap(const Image& base, const Tensor& heat, double alpha = 0.5);

}  // namespace pisnet
