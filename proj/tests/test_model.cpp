// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pisnet/model.hpp"

#include <cmath>
#include <set>

#include "doctest.h"
#include "gradcheck.hpp"
#include "pisnet/errors.hpp"
#include "pisnet/rng.hpp"

using namespace pisnet;
using namespace pisnet::model;
using pisnet::testutil::max_grad_rel_error;

namespace {

FeatureMap rand_fm(Rng& rng, int c, int h, int w) {
  return FeatureMap{Tensor::uniform(rng, {c, h, w}, -1.0, 1.0)};
}

// Straight-line scalar re-computation of the attention equation:
// refined = rowmax(softmax(c1(attended)^T c2(guide))) (.) attended + attended.
// Independent of the graph implementation; plain nested loops.
struct RefAttention {
  Tensor softmax;    // Pa x Pg
  Tensor attention;  // Pa
  Tensor refined;    // C x Pa (flattened)
};

RefAttention reference_attention(const Tensor& attended, const Tensor& guide,
                                 const Tensor& c1, const Tensor& c2) {
  const int c = attended.dim(0);
  const int cp = c1.dim(0);
  const int pa = attended.dim(1) * attended.dim(2);
  const int pg = guide.dim(1) * guide.dim(2);
  // Project both maps.
  std::vector<std::vector<double>> proj_a(cp, std::vector<double>(pa, 0.0));
  std::vector<std::vector<double>> proj_g(cp, std::vector<double>(pg, 0.0));
  for (int o = 0; o < cp; ++o) {
    for (int i = 0; i < c; ++i) {
      for (int p = 0; p < pa; ++p) proj_a[o][p] += c1.at(o, i) * attended.data[i * pa + p];
      for (int p = 0; p < pg; ++p) proj_g[o][p] += c2.at(o, i) * guide.data[i * pg + p];
    }
  }
  RefAttention out;
  out.softmax = Tensor({pa, pg});
  out.attention = Tensor({pa});
  out.refined = Tensor({c, pa});
  for (int p = 0; p < pa; ++p) {
    std::vector<double> row(pg, 0.0);
    for (int j = 0; j < pg; ++j) {
      for (int o = 0; o < cp; ++o) row[j] += proj_a[o][p] * proj_g[o][j];
    }
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (int j = 0; j < pg; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    double best = 0.0;
    for (int j = 0; j < pg; ++j) {
      out.softmax.at(p, j) = row[j] / sum;
      best = std::max(best, row[j] / sum);
    }
    out.attention.at(p) = best;
  }
  for (int i = 0; i < c; ++i) {
    for (int p = 0; p < pa; ++p) {
      out.refined.at(i, p) = attended.data[i * pa + p] * (1.0 + out.attention.at(p));
    }
  }
  return out;
}

BoxLayout two_box_layout(Box b0, Box b1, std::vector<int> z) {
  BoxLayout layout;
  layout.boxes = {{0, b0}, {1, b1}};
  layout.z_order = std::move(z);
  return layout;
}

}  // namespace

TEST_CASE("backbone maps an all-zero image to an all-zero feature map") {
  Rng rng(100);
  auto cfg = BackboneConfig::small(32);
  auto params = BackboneParams::init(cfg, rng);
  // Zero biases are the init default; zero input stays zero through convs.
  Tensor img({3, 32, 16});
  auto fm = backbone_forward(img, params);
  for (double v : fm.values.data) CHECK(v == 0.0);
}

TEST_CASE("backbone output shape follows the stride product") {
  Rng rng(101);
  auto cfg = BackboneConfig::small(64);
  REQUIRE(cfg.total_stride() == 8);
  auto params = BackboneParams::init(cfg, rng);
  Tensor img = Tensor::uniform(rng, {3, 64, 32}, 0.0, 1.0);
  auto fm = backbone_forward(img, params);
  CHECK(fm.channels() == 64);
  CHECK(fm.height() == 8);
  CHECK(fm.width() == 4);
}

TEST_CASE("backbone forward is deterministic") {
  Rng rng(102);
  auto params = BackboneParams::init(BackboneConfig::small(32), rng);
  Tensor img = Tensor::uniform(rng, {3, 32, 16}, 0.0, 1.0);
  auto a = backbone_forward(img, params);
  auto b = backbone_forward(img, params);
  CHECK(a.values.data == b.values.data);
}

TEST_CASE("backbone rejects non-divisible input dims and NaN weights") {
  Rng rng(103);
  auto params = BackboneParams::init(BackboneConfig::small(32), rng);
  Tensor bad = Tensor::uniform(rng, {3, 30, 16}, 0.0, 1.0);
  CHECK_THROWS_AS(backbone_forward(bad, params), ShapeError);

  Tensor ok = Tensor::uniform(rng, {3, 32, 16}, 0.0, 1.0);
  params.weights[0].data[0] = std::nan("");
  CHECK_THROWS_AS(backbone_forward(ok, params), NumericError);
}

TEST_CASE("qgab softmax rows are stochastic and attention is in (0,1]") {
  Rng rng(104);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = rand_fm(rng, 8, 4, 4);
    auto q = rand_fm(rng, 8, 2, 3);
    auto params = QgabParams::init(8, 8, rng);
    auto dbg = qgab_forward_debug(g, q, params);
    for (int p = 0; p < 16; ++p) {
      double sum = 0.0;
      for (int j = 0; j < 6; ++j) sum += dbg.softmax.at(p, j);
      CHECK(std::fabs(sum - 1.0) < 1e-5);
    }
    for (double a : dbg.attention.weights.data) {
      CHECK(a > 0.0);
      CHECK(a <= 1.0);
    }
  }
}

TEST_CASE("qgab with a single-pixel query doubles the gallery") {
  Rng rng(105);
  auto g = rand_fm(rng, 6, 3, 4);
  auto q = rand_fm(rng, 6, 1, 1);
  auto params = QgabParams::init(6, 6, rng);
  auto [refined, att] = qgab_forward(g, q, params);
  for (double a : att.weights.data) CHECK(a == doctest::Approx(1.0));
  for (long i = 0; i < g.values.numel(); ++i) {
    CHECK(refined.values.data[i] == doctest::Approx(2.0 * g.values.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("qgab matches the straight-line reference computation") {
  Rng rng(106);
  auto g = rand_fm(rng, 8, 4, 4);
  auto q = rand_fm(rng, 8, 2, 2);
  auto params = QgabParams::init(8, 8, rng);
  auto dbg = qgab_forward_debug(g, q, params);
  auto ref = reference_attention(g.values, q.values, params.c1_weights, params.c2_weights);
  const int pa = 16;
  for (int p = 0; p < pa; ++p) {
    CHECK(dbg.attention.weights.data[p] == doctest::Approx(ref.attention.at(p)).epsilon(1e-6));
    for (int j = 0; j < 4; ++j) {
      CHECK(dbg.softmax.at(p, j) == doctest::Approx(ref.softmax.at(p, j)).epsilon(1e-6));
    }
  }
  for (int c = 0; c < 8; ++c) {
    for (int p = 0; p < pa; ++p) {
      CHECK(dbg.refined.values.data[c * pa + p] ==
            doctest::Approx(ref.refined.at(c, p)).epsilon(1e-6));
    }
  }
}

TEST_CASE("qgab amplification ratio is channel-independent") {
  Rng rng(107);
  auto g = rand_fm(rng, 8, 4, 4);
  auto q = rand_fm(rng, 8, 2, 2);
  auto params = QgabParams::init(8, 8, rng);
  auto [refined, att] = qgab_forward(g, q, params);
  const int pa = 16;
  for (int p = 0; p < pa; ++p) {
    const double expected = 1.0 + att.weights.data[p];
    for (int c = 0; c < 8; ++c) {
      const double gv = g.values.data[c * pa + p];
      if (std::fabs(gv) > 1e-9) {
        CHECK(refined.values.data[c * pa + p] / gv == doctest::Approx(expected).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("qgab residual identity holds exactly") {
  Rng rng(108);
  auto g = rand_fm(rng, 4, 3, 3);
  auto q = rand_fm(rng, 4, 2, 2);
  auto params = QgabParams::init(4, 4, rng);
  auto [refined, att] = qgab_forward(g, q, params);
  const int pa = 9;
  for (int c = 0; c < 4; ++c) {
    for (int p = 0; p < pa; ++p) {
      const double lhs = refined.values.data[c * pa + p] - g.values.data[c * pa + p];
      const double rhs = att.weights.data[p] * g.values.data[c * pa + p];
      CHECK(std::fabs(lhs - rhs) < 1e-12);
    }
  }
}

TEST_CASE("qgab rejects channel mismatch") {
  Rng rng(109);
  auto g = rand_fm(rng, 8, 4, 4);
  auto q = rand_fm(rng, 4, 2, 2);
  auto params = QgabParams::init(8, 8, rng);
  CHECK_THROWS_AS(qgab_forward(g, q, params), ShapeError);
}

TEST_CASE("feature_corrupt places disjoint boxes and zero-pads the rest") {
  Rng rng(110);
  auto qfm = rand_fm(rng, 3, 4, 2);
  auto sfm = rand_fm(rng, 3, 4, 2);
  auto layout = two_box_layout({0.0, 0.0, 0.5, 0.5}, {0.5, 0.5, 1.0, 1.0}, {0, 1});
  // Boxes are disjoint except for the single shared corner point, which
  // still counts as layout overlap? No: zero-area contact is not overlap,
  // so nudge box 2 to overlap by one cell row.
  layout.boxes[1].box = {0.375, 0.375, 1.0, 1.0};
  auto out = feature_corrupt(qfm, sfm, layout, 8, 8);
  CHECK(out.channels() == 3);
  CHECK(out.height() == 8);
  CHECK(out.width() == 8);
  // Outside both grid boxes: exactly zero.
  for (int c = 0; c < 3; ++c) {
    CHECK(out.values.at(c, 0, 6) == 0.0);
    CHECK(out.values.at(c, 7, 0) == 0.0);
    CHECK(out.values.at(c, 0, 7) == 0.0);
  }
  // Box 1 region away from the overlap carries resized query values.
  // Grid box 1 = [0,4)x[0,4), box 2 = [3,8)x[3,8).
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 3; ++y) {
      for (int x = 0; x < 3; ++x) {
        const int sy = y * 4 / 4;
        const int sx = x * 2 / 4;
        CHECK(out.values.at(c, y, x) == qfm.values.at(c, sy, sx));
      }
    }
  }
}

TEST_CASE("feature_corrupt overwrite semantics: covering box wins") {
  Rng rng(111);
  auto qfm = rand_fm(rng, 2, 4, 2);
  auto sfm = rand_fm(rng, 2, 4, 2);
  // Box 2 fully covers box 1; z order paints box 1 first, box 2 last.
  auto layout = two_box_layout({0.25, 0.25, 0.625, 0.625}, {0.0, 0.0, 1.0, 1.0}, {0, 1});
  auto out = feature_corrupt(qfm, sfm, layout, 8, 8);
  std::set<double> qvals(qfm.values.data.begin(), qfm.values.data.end());
  for (double v : out.values.data) {
    CHECK(qvals.count(v) == 0);
  }
}

TEST_CASE("feature_corrupt against a brute-force cell enumeration oracle") {
  Rng rng(112);
  // ~40% IoU boxes on an 8x8 grid.
  Box b0{0.0, 0.0, 0.625, 0.75};
  Box b1{0.25, 0.125, 0.875, 0.875};
  for (auto z : {std::vector<int>{0, 1}, std::vector<int>{1, 0}}) {
    auto qfm = rand_fm(rng, 2, 3, 3);
    auto sfm = rand_fm(rng, 2, 2, 4);
    auto layout = two_box_layout(b0, b1, z);
    auto out = feature_corrupt(qfm, sfm, layout, 8, 8);

    // Oracle: enumerate every cell, recompute ownership and source pixel.
    auto grid = [](double v, int n) { return static_cast<int>(std::lround(v * n)); };
    const int gx0[2] = {grid(b0.x0, 8), grid(b1.x0, 8)};
    const int gx1[2] = {grid(b0.x1, 8), grid(b1.x1, 8)};
    const int gy0[2] = {grid(b0.y0, 8), grid(b1.y0, 8)};
    const int gy1[2] = {grid(b0.y1, 8), grid(b1.y1, 8)};
    const FeatureMap* srcs[2] = {&qfm, &sfm};
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        int owner = -1;
        for (int zi : z) {
          if (x >= gx0[zi] && x < gx1[zi] && y >= gy0[zi] && y < gy1[zi]) owner = zi;
        }
        for (int c = 0; c < 2; ++c) {
          double expected = 0.0;
          if (owner >= 0) {
            const FeatureMap* s = srcs[owner];
            const int sy = std::min(s->height() - 1,
                                    (y - gy0[owner]) * s->height() / (gy1[owner] - gy0[owner]));
            const int sx = std::min(s->width() - 1,
                                    (x - gx0[owner]) * s->width() / (gx1[owner] - gx0[owner]));
            expected = s->values.at(c, sy, sx);
          }
          CHECK(out.values.at(c, y, x) == expected);
        }
      }
    }
  }
}

TEST_CASE("feature_corrupt rejects sub-cell boxes") {
  Rng rng(113);
  auto qfm = rand_fm(rng, 2, 4, 2);
  auto sfm = rand_fm(rng, 2, 4, 2);
  auto layout = two_box_layout({0.0, 0.0, 0.04, 0.5}, {0.0, 0.25, 1.0, 1.0}, {0, 1});
  CHECK_THROWS_AS(feature_corrupt(qfm, sfm, layout, 8, 8), LayoutError);
}

TEST_CASE("gram with a single-pixel guide doubles the corrupted query") {
  Rng rng(114);
  auto guide = rand_fm(rng, 5, 1, 1);
  auto qc = rand_fm(rng, 5, 3, 3);
  auto params = QgabParams::init(5, 5, rng);
  auto out = gram_forward(guide, qc, params);
  for (long i = 0; i < qc.values.numel(); ++i) {
    CHECK(out.values.data[i] == doctest::Approx(2.0 * qc.values.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("qgab and gram share the same parameter set") {
  Rng rng(115);
  auto g = rand_fm(rng, 6, 3, 3);
  auto q = rand_fm(rng, 6, 2, 2);
  auto params = QgabParams::init(6, 6, rng);
  auto fwd0 = qgab_forward(g, q, params).first;
  auto rev0 = gram_forward(g, q, params);
  params.c1_weights.data[3] += 0.25;
  auto fwd1 = qgab_forward(g, q, params).first;
  auto rev1 = gram_forward(g, q, params);
  CHECK(fwd0.values.data != fwd1.values.data);
  CHECK(rev0.values.data != rev1.values.data);
}

TEST_CASE("gram gradient w.r.t. c1 matches finite differences") {
  Rng rng(116);
  Tensor ga = Tensor::uniform(rng, {4, 3, 3}, -1.0, 1.0);
  Tensor qc = Tensor::uniform(rng, {4, 3, 3}, -1.0, 1.0);
  QgabParams params = QgabParams::init(4, 4, rng);
  Tensor probe = Tensor::uniform(rng, {4, 3, 3}, -1.0, 1.0);
  auto build = [&]() -> std::pair<ag::Var, std::vector<ag::Var>> {
    auto c1 = ag::leaf(params.c1_weights, true);
    auto c2 = ag::leaf(params.c2_weights, true);
    auto vga = ag::leaf(ga, true);
    auto vqc = ag::leaf(qc, true);
    auto out = attention_graph(vqc, vga, {c1, c2});
    return {ag::inner(out.refined, probe), {c1, c2, vga, vqc}};
  };
  CHECK(max_grad_rel_error(build, {&params.c1_weights, &params.c2_weights, &ga, &qc}) < 1e-4);
}

TEST_CASE("qgab end-to-end gradients match finite differences") {
  Rng rng(117);
  Tensor g = Tensor::uniform(rng, {4, 3, 3}, -1.0, 1.0);
  Tensor q = Tensor::uniform(rng, {4, 2, 2}, -1.0, 1.0);
  QgabParams params = QgabParams::init(4, 4, rng);
  Tensor probe = Tensor::uniform(rng, {4, 3, 3}, -1.0, 1.0);
  auto build = [&]() -> std::pair<ag::Var, std::vector<ag::Var>> {
    auto c1 = ag::leaf(params.c1_weights, true);
    auto c2 = ag::leaf(params.c2_weights, true);
    auto vg = ag::leaf(g, true);
    auto vq = ag::leaf(q, true);
    auto out = attention_graph(vg, vq, {c1, c2});
    return {ag::inner(out.refined, probe), {c1, c2, vg, vq}};
  };
  CHECK(max_grad_rel_error(build, {&params.c1_weights, &params.c2_weights, &g, &q}) < 1e-4);
}

TEST_CASE("embed: constant map, permutation invariance, hand means") {
  auto fm = FeatureMap{Tensor::full({3, 2, 2}, 0.75)};
  auto e = embed(fm);
  for (double v : e.data) CHECK(v == doctest::Approx(0.75));

  Rng rng(118);
  FeatureMap m = rand_fm(rng, 4, 2, 2);
  // Spatial permutation: rotate the four pixels.
  FeatureMap perm = m;
  for (int c = 0; c < 4; ++c) {
    perm.values.at(c, 0, 0) = m.values.at(c, 1, 1);
    perm.values.at(c, 0, 1) = m.values.at(c, 0, 0);
    perm.values.at(c, 1, 0) = m.values.at(c, 0, 1);
    perm.values.at(c, 1, 1) = m.values.at(c, 1, 0);
  }
  auto e1 = embed(m);
  auto e2 = embed(perm);
  for (int c = 0; c < 4; ++c) CHECK(e1.at(c) == doctest::Approx(e2.at(c)).epsilon(1e-12));

  // Brute-force per-channel means.
  for (int c = 0; c < 4; ++c) {
    double sum = 0.0;
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) sum += m.values.at(c, y, x);
    CHECK(e1.at(c) == doctest::Approx(sum / 4.0).epsilon(1e-12));
  }
}

TEST_CASE("deep backbone config runs behind the same interface") {
  Rng rng(119);
  auto cfg = BackboneConfig::deep(64);
  REQUIRE(cfg.total_stride() == 8);
  auto params = BackboneParams::init(cfg, rng);
  Tensor img = Tensor::uniform(rng, {3, 32, 16}, 0.0, 1.0);
  auto fm = backbone_forward(img, params);
  CHECK(fm.channels() == 64);
  CHECK(fm.height() == 4);
  CHECK(fm.width() == 2);
}
