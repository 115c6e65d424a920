// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pisnet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "pisnet/errors.hpp"

namespace pisnet {

namespace {

int read_ppm_token(std::istream& in) {
  // Skips whitespace and '#' comments, then reads one decimal integer.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF) throw IoError("ppm: unexpected end of header");
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw IoError("ppm: malformed header token");
  return value;
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6') {
    throw IoError("unsupported image format (expected binary PPM P6): " + path);
  }
  const int w = read_ppm_token(in);
  const int h = read_ppm_token(in);
  const int maxval = read_ppm_token(in);
  if (w < 1 || h < 1) throw IoError("ppm: invalid dimensions in " + path);
  if (maxval != 255) throw IoError("ppm: only maxval 255 is supported: " + path);
  Image img(h, w);
  in.read(reinterpret_cast<char*>(img.pix.data()),
          static_cast<std::streamsize>(img.pix.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pix.size())) {
    throw IoError("ppm: truncated pixel data in " + path);
  }
  return img;
}

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image: " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pix.data()),
            static_cast<std::streamsize>(img.pix.size()));
  if (!out) throw IoError("failed writing image: " + path);
}

Tensor image_to_tensor(const Image& img) {
  Tensor t({3, img.height, img.width});
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        t.at(c, y, x) = static_cast<double>(img.at(y, x, c)) / 255.0;
      }
    }
  }
  return t;
}

Image tensor_to_image(const Tensor& t) {
  if (t.ndim() != 3 || t.dim(0) != 3) throw ShapeError("tensor_to_image: expected 3xHxW");
  Image img(t.dim(1), t.dim(2));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(t.at(c, y, x), 0.0, 1.0);
        img.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return img;
}

Tensor upsample_bilinear(const Tensor& map, int out_h, int out_w) {
  if (map.ndim() != 2) throw ShapeError("upsample_bilinear: expected HxW map");
  const int h = map.dim(0), w = map.dim(1);
  Tensor out({out_h, out_w});
  // Align-corners-false convention: sample at pixel centers.
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      out.at(oy, ox) = (1 - wy) * ((1 - wx) * map.at(y0, x0) + wx * map.at(y0, x1)) +
                       wy * ((1 - wx) * map.at(y1, x0) + wx * map.at(y1, x1));
    }
  }
  return out;
}

void colormap_blue_red(double t, uint8_t rgb[3]) {
  t = std::clamp(t, 0.0, 1.0);
  // Piecewise blue -> cyan -> yellow -> red ramp.
  double r, g, b;
  if (t < 1.0 / 3.0) {
    const double u = t * 3.0;
    r = 0.0;
    g = u;
    b = 1.0;
  } else if (t < 2.0 / 3.0) {
    const double u = (t - 1.0 / 3.0) * 3.0;
    r = u;
    g = 1.0;
    b = 1.0 - u;
  } else {
    const double u = (t - 2.0 / 3.0) * 3.0;
    r = 1.0;
    g = 1.0 - u;
    b = 0.0;
  }
  rgb[0] = static_cast<uint8_t>(std::lround(r * 255.0));
  rgb[1] = static_cast<uint8_t>(std::lround(g * 255.0));
  rgb[2] = static_cast<uint8_t>(std::lround(b * 255.0));
}

Image overlay_heatmap(const Image& base, const Tensor& heat, double alpha) {
  if (heat.ndim() != 2 || heat.dim(0) != base.height || heat.dim(1) != base.width) {
    throw ShapeError("overlay_heatmap: heat map must match image resolution");
  }
  double lo = heat.data[0], hi = heat.data[0];
  for (double v : heat.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  Image out = base;
  for (int y = 0; y < base.height; ++y) {
    for (int x = 0; x < base.width; ++x) {
      uint8_t rgb[3];
      colormap_blue_red((heat.at(y, x) - lo) / span, rgb);
      for (int c = 0; c < 3; ++c) {
        const double blended = (1.0 - alpha) * base.at(y, x, c) + alpha * rgb[c];
        out.at(y, x, c) = static_cast<uint8_t>(std::lround(blended));
      }
    }
  }
  return out;
}

}  // namespace pisnet
