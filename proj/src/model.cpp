// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pisnet/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "pisnet/errors.hpp"

namespace pisnet::model {

// ---- configuration ----

BackboneConfig BackboneConfig::small(int out_channels) {
  BackboneConfig cfg;
  cfg.stages = {{out_channels / 2, 1, 3, 1},
                {out_channels, 2, 3, 1},
                {out_channels, 2, 3, 1},
                {out_channels, 2, 3, 1}};
  return cfg;
}

BackboneConfig BackboneConfig::deep(int out_channels) {
  BackboneConfig cfg;
  cfg.stages = {{out_channels / 4, 1, 3, 2},
                {out_channels / 2, 2, 3, 3},
                {out_channels, 2, 3, 4},
                {out_channels, 2, 3, 3}};
  return cfg;
}

BackboneConfig BackboneConfig::preset(const std::string& name) {
  if (name == "small32") return small(32);
  if (name == "small64") return small(64);
  if (name == "deep64") return deep(64);
  if (name == "deep256") return deep(256);
  throw ConfigError("unknown backbone preset: " + name);
}

int BackboneConfig::total_stride() const {
  int s = 1;
  for (const auto& st : stages) s *= st.stride;
  return s;
}

int BackboneConfig::out_channels() const {
  if (stages.empty()) throw ConfigError("backbone has no stages");
  return stages.back().out_channels;
}

int BackboneConfig::conv_count() const {
  int n = 0;
  for (const auto& st : stages) n += st.blocks;
  return n;
}

// ---- parameter construction ----

BackboneParams BackboneParams::init(const BackboneConfig& cfg, Rng& rng) {
  BackboneParams p;
  p.config = cfg;
  int in_c = cfg.in_channels;
  for (const auto& st : cfg.stages) {
    for (int b = 0; b < st.blocks; ++b) {
      const int k = st.kernel;
      const double stddev = std::sqrt(2.0 / (in_c * k * k));
      p.weights.push_back(Tensor::normal(rng, {st.out_channels, in_c, k, k}, stddev));
      p.biases.push_back(Tensor::zeros({st.out_channels}));
      in_c = st.out_channels;
    }
  }
  return p;
}

QgabParams QgabParams::init(int in_channels, int guidance_channels, Rng& rng) {
  QgabParams p;
  const double stddev = std::sqrt(1.0 / in_channels);
  p.c1_weights = Tensor::normal(rng, {guidance_channels, in_channels}, stddev);
  p.c2_weights = Tensor::normal(rng, {guidance_channels, in_channels}, stddev);
  p.guidance_channels = guidance_channels;
  return p;
}

// ---- graph layer ----

BackboneVars make_vars(BackboneParams& params, bool trainable) {
  if (params.frozen) trainable = false;
  BackboneVars v;
  for (auto& w : params.weights) v.weights.push_back(ag::leaf(w, trainable));
  for (auto& b : params.biases) v.biases.push_back(ag::leaf(b, trainable));
  return v;
}

QgabVars make_vars(QgabParams& params, bool trainable) {
  return {ag::leaf(params.c1_weights, trainable), ag::leaf(params.c2_weights, trainable)};
}

ag::Var backbone_graph(const ag::Var& image, const BackboneVars& vars,
                       const BackboneConfig& cfg) {
  ag::Var x = image;
  size_t conv = 0;
  for (const auto& st : cfg.stages) {
    for (int b = 0; b < st.blocks; ++b) {
      const int stride = b == 0 ? st.stride : 1;
      x = ag::relu(ag::conv2d(x, vars.weights[conv], vars.biases[conv], stride, st.kernel / 2));
      ++conv;
    }
  }
  return x;
}

AttentionOut attention_graph(const ag::Var& attended, const ag::Var& guide,
                             const QgabVars& vars) {
  const Tensor& a = attended->value;
  const Tensor& g = guide->value;
  if (a.ndim() != 3 || g.ndim() != 3) throw ShapeError("attention: inputs must be CxHxW");
  const int c = a.dim(0);
  if (g.dim(0) != c || vars.c1->value.dim(1) != c) {
    throw ShapeError("attention: channel mismatch (attended " + a.shape_str() + ", guide " +
                     g.shape_str() + ", params expect C=" +
                     std::to_string(vars.c1->value.dim(1)) + ")");
  }
  const int pa = a.dim(1) * a.dim(2);
  const int pg = g.dim(1) * g.dim(2);

  auto a_flat = ag::reshape(attended, {c, pa});
  auto g_flat = ag::reshape(guide, {c, pg});
  auto proj_a = ag::matmul(vars.c1, a_flat);  // C' x Pa
  auto proj_g = ag::matmul(vars.c2, g_flat);  // C' x Pg
  auto affinity = ag::matmul_tn(proj_a, proj_g);  // Pa x Pg
  auto soft = ag::softmax_rows(affinity);
  auto att = ag::rowmax(soft);  // Pa, one weight per attended pixel
  auto refined_flat = ag::add(ag::mul_bcast_row(a_flat, att), a_flat);
  AttentionOut out;
  out.refined = ag::reshape(refined_flat, {c, a.dim(1), a.dim(2)});
  out.attention = att;
  out.softmax = soft;
  return out;
}

ag::Var embed_graph(const ag::Var& fm) { return ag::global_avg_pool(fm); }

PlacementMap build_placement(const BoxLayout& layout, int q_h, int q_w, int s_h, int s_w,
                             int out_h, int out_w) {
  layout.validate();
  const long cells = static_cast<long>(out_h) * out_w;
  PlacementMap pm;
  pm.out_h = out_h;
  pm.out_w = out_w;
  pm.sel.assign(static_cast<size_t>(cells), -1);
  pm.src.assign(static_cast<size_t>(cells), 0);

  struct Placed {
    int index;  // 0 = query source, 1 = sampled source
    int x0, y0, x1, y1;
    int src_h, src_w;
  };
  auto grid_box = [&](const Box& b) {
    const int x0 = static_cast<int>(std::lround(b.x0 * out_w));
    const int x1 = static_cast<int>(std::lround(b.x1 * out_w));
    const int y0 = static_cast<int>(std::lround(b.y0 * out_h));
    const int y1 = static_cast<int>(std::lround(b.y1 * out_h));
    return std::array<int, 4>{std::clamp(x0, 0, out_w), std::clamp(y0, 0, out_h),
                              std::clamp(x1, 0, out_w), std::clamp(y1, 0, out_h)};
  };

  std::vector<Placed> placed(2);
  for (int i = 0; i < 2; ++i) {
    auto gb = grid_box(layout.boxes[static_cast<size_t>(i)].box);
    Placed p;
    p.index = i;
    p.x0 = gb[0];
    p.y0 = gb[1];
    p.x1 = gb[2];
    p.y1 = gb[3];
    p.src_h = i == 0 ? q_h : s_h;
    p.src_w = i == 0 ? q_w : s_w;
    if (p.x1 - p.x0 < 1 || p.y1 - p.y0 < 1) {
      throw LayoutError("layout box " + std::to_string(i) +
                        " degenerates to less than one feature-grid cell");
    }
    placed[static_cast<size_t>(i)] = p;
  }

  // Paint in z order restricted to the two placed boxes; later overwrites.
  for (int z : layout.z_order) {
    if (z > 1) continue;
    const Placed& p = placed[static_cast<size_t>(z)];
    const int bw = p.x1 - p.x0;
    const int bh = p.y1 - p.y0;
    for (int y = p.y0; y < p.y1; ++y) {
      const int sy = std::min(p.src_h - 1, (y - p.y0) * p.src_h / bh);
      for (int x = p.x0; x < p.x1; ++x) {
        const int sx = std::min(p.src_w - 1, (x - p.x0) * p.src_w / bw);
        const long cell = static_cast<long>(y) * out_w + x;
        pm.sel[static_cast<size_t>(cell)] = p.index;
        pm.src[static_cast<size_t>(cell)] = sy * p.src_w + sx;
      }
    }
  }
  return pm;
}

ag::Var corrupt_graph(const ag::Var& query_fm, const ag::Var& sampled_fm,
                      const PlacementMap& pm) {
  return ag::place_two(query_fm, sampled_fm, pm.sel, pm.src, pm.out_h, pm.out_w);
}

// ---- plain operation surface ----

FeatureMap backbone_forward(const Tensor& image, const BackboneParams& params) {
  if (image.ndim() != 3 || image.dim(0) != params.config.in_channels) {
    throw ShapeError("backbone: expected " + std::to_string(params.config.in_channels) +
                     "xHxW image, got " + image.shape_str());
  }
  const int stride = params.config.total_stride();
  if (image.dim(1) % stride != 0 || image.dim(2) % stride != 0) {
    throw ShapeError("backbone: spatial dims " + image.shape_str() +
                     " not divisible by total stride " + std::to_string(stride));
  }
  for (const auto& w : params.weights) {
    if (!w.all_finite()) throw NumericError("backbone: non-finite weight");
  }
  for (const auto& b : params.biases) {
    if (!b.all_finite()) throw NumericError("backbone: non-finite bias");
  }
  BackboneVars vars;
  for (const auto& w : params.weights) vars.weights.push_back(ag::leaf(w));
  for (const auto& b : params.biases) vars.biases.push_back(ag::leaf(b));
  auto out = backbone_graph(ag::leaf(image), vars, params.config);
  return FeatureMap{out->value};
}

namespace {

QgabVars const_vars(const QgabParams& params) {
  return {ag::leaf(params.c1_weights), ag::leaf(params.c2_weights)};
}

AttentionMap to_attention_map(const Tensor& flat, int h, int w) {
  Tensor t({h, w});
  t.data = flat.data;
  return AttentionMap{std::move(t)};
}

}  // namespace

std::pair<FeatureMap, AttentionMap> qgab_forward(const FeatureMap& gallery,
                                                 const FeatureMap& query,
                                                 const QgabParams& params) {
  auto vars = const_vars(params);
  auto out = attention_graph(ag::leaf(gallery.values), ag::leaf(query.values), vars);
  return {FeatureMap{out.refined->value},
          to_attention_map(out.attention->value, gallery.height(), gallery.width())};
}

QgabDebug qgab_forward_debug(const FeatureMap& gallery, const FeatureMap& query,
                             const QgabParams& params) {
  auto vars = const_vars(params);
  auto out = attention_graph(ag::leaf(gallery.values), ag::leaf(query.values), vars);
  return {FeatureMap{out.refined->value},
          to_attention_map(out.attention->value, gallery.height(), gallery.width()),
          out.softmax->value};
}

FeatureMap feature_corrupt(const FeatureMap& query_fm, const FeatureMap& sampled_fm,
                           const BoxLayout& layout, int out_h, int out_w) {
  if (query_fm.channels() != sampled_fm.channels()) {
    throw ShapeError("feature_corrupt: channel mismatch");
  }
  auto pm = build_placement(layout, query_fm.height(), query_fm.width(), sampled_fm.height(),
                            sampled_fm.width(), out_h, out_w);
  auto out = corrupt_graph(ag::leaf(query_fm.values), ag::leaf(sampled_fm.values), pm);
  return FeatureMap{out->value};
}

FeatureMap gram_forward(const FeatureMap& refined_gallery, const FeatureMap& corrupted_query,
                        const QgabParams& params) {
  // Reversed roles: the corrupted query is attended, the refined gallery
  // guides. Same parameter set as the forward pass.
  auto vars = const_vars(params);
  auto out =
      attention_graph(ag::leaf(corrupted_query.values), ag::leaf(refined_gallery.values), vars);
  return FeatureMap{out.refined->value};
}

Tensor embed(const FeatureMap& fm) {
  fm.validate();
  return embed_graph(ag::leaf(fm.values))->value;
}

}  // namespace pisnet::model
