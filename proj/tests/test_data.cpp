// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pisnet/data.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "pisnet/errors.hpp"
#include "pisnet/model.hpp"

using namespace pisnet;
using namespace pisnet::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("pisnet_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("synth_identity is deterministic per (seed, id)") {
  auto a = synth_identity(7, 3);
  auto b = synth_identity(7, 3);
  CHECK(a.head_color == b.head_color);
  CHECK(a.torso_color == b.torso_color);
  CHECK(a.leg_color == b.leg_color);
  CHECK(a.pattern == b.pattern);
  CHECK(a.aspect == b.aspect);

  auto c = synth_identity(8, 3);
  const bool differs = a.head_color != c.head_color || a.torso_color != c.torso_color ||
                       a.leg_color != c.leg_color || a.pattern != c.pattern;
  CHECK(differs);
}

TEST_CASE("50 identities yield at least 49 distinct color triplets") {
  std::set<std::array<std::array<uint8_t, 3>, 3>> seen;
  for (int id = 0; id < 50; ++id) {
    auto s = synth_identity(1, id);
    seen.insert({s.head_color, s.torso_color, s.leg_color});
  }
  CHECK(seen.size() >= 49);
}

TEST_CASE("render_single canonical and jittered") {
  auto spec = synth_identity(2, 0);
  RenderParams rp;
  rp.jitter = 0.0;
  Rng r1(10), r2(11);
  auto a = render_single(spec, r1, rp);
  auto b = render_single(spec, r2, rp);
  CHECK(a.kind == PISample::Kind::single);
  CHECK(a.persons.size() == 1);
  // Zero jitter: canonical output regardless of rng state.
  CHECK(a.image.pix == b.image.pix);
  CHECK(a.persons[0].box.x0 == b.persons[0].box.x0);

  rp.jitter = 1.0;
  Rng r3(10), r4(11);
  auto c = render_single(spec, r3, rp);
  auto d = render_single(spec, r4, rp);
  CHECK(c.image.pix != d.image.pix);
  CHECK(c.persons[0].id == d.persons[0].id);
}

TEST_CASE("rendered boxes stay inside the unit square with bounded-below area") {
  auto spec = synth_identity(3, 5);
  RenderParams rp;
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    auto s = render_single(spec, rng, rp);
    const Box& b = s.persons[0].box;
    CHECK(b.x0 >= 0.0);
    CHECK(b.y0 >= 0.0);
    CHECK(b.x1 <= 1.0);
    CHECK(b.y1 <= 1.0);
    CHECK(b.area() >= 0.2);
  }
}

TEST_CASE("validate_pi_criteria threshold cases") {
  const Box crop{0.0, 0.0, 1.0, 1.0};

  // Two identical boxes filling the crop: all criteria maximal.
  CHECK(validate_pi_criteria(crop, {crop, crop}));

  // Two disjoint boxes: criterion 3 fails.
  CHECK_FALSE(validate_pi_criteria(
      crop, {Box{0.0, 0.0, 0.4, 0.9}, Box{0.6, 0.0, 1.0, 0.9}}));

  // 65% containment fails, 70% passes: box of width 1.0 sticking out left.
  // Contained fraction = x1 / (x1 - x0) with x0 < 0.
  Box other{0.1, 0.05, 0.95, 0.95};
  Box at65{-0.35, 0.0, 0.65, 1.0};  // contained 0.65
  Box at70{-0.30, 0.0, 0.70, 1.0};  // contained 0.70 exactly
  CHECK_FALSE(validate_pi_criteria(crop, {at65, other}));
  CHECK(validate_pi_criteria(crop, {at70, other}));

  // Contained area below 0.3 of the crop fails criterion 2.
  Box small{0.3, 0.3, 0.75, 0.75};  // area ~0.2
  CHECK_FALSE(validate_pi_criteria(crop, {small, other}));

  CHECK_THROWS_AS(validate_pi_criteria(crop, {crop}), std::invalid_argument);
}

TEST_CASE("compose_multi output always satisfies the criteria") {
  RenderParams rp;
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    auto a = render_single(synth_identity(5, 2 * i), rng, rp);
    auto b = render_single(synth_identity(5, 2 * i + 1), rng, rp);
    auto m = compose_multi(a, b, rng);
    CHECK(m.kind == PISample::Kind::multi);
    REQUIRE(m.persons.size() == 2);
    std::vector<Box> raw{m.persons[0].raw_box, m.persons[1].raw_box};
    CHECK(validate_pi_criteria(Box{0, 0, 1, 1}, raw));
    for (const auto& p : m.persons) {
      const double contained = intersect(p.raw_box, Box{0, 0, 1, 1}).area();
      CHECK(contained >= 0.7 * p.raw_box.area());
      CHECK(contained >= 0.3);
    }
    CHECK(m.z_order.size() == 2);
  }
}

TEST_CASE("compose_multi supports three persons") {
  RenderParams rp;
  Rng rng(6);
  std::vector<PISample> sources;
  for (int i = 0; i < 3; ++i) sources.push_back(render_single(synth_identity(6, i), rng, rp));
  auto m = compose_multi(sources, rng);
  CHECK(m.persons.size() == 3);
  std::vector<Box> raw;
  for (const auto& p : m.persons) raw.push_back(p.raw_box);
  CHECK(validate_pi_criteria(Box{0, 0, 1, 1}, raw));
}

TEST_CASE("compose_multi rejects duplicate ids and non-single sources") {
  RenderParams rp;
  Rng rng(7);
  auto a = render_single(synth_identity(7, 1), rng, rp);
  auto b = render_single(synth_identity(7, 1), rng, rp);
  CHECK_THROWS_AS(compose_multi(a, b, rng), std::invalid_argument);
  auto c = render_single(synth_identity(7, 2), rng, rp);
  auto m = compose_multi(a, c, rng);
  CHECK_THROWS_AS(compose_multi(m, c, rng), std::invalid_argument);
}

TEST_CASE("extract_layout projects stored boxes and feeds feature_corrupt") {
  RenderParams rp;
  Rng rng(8);
  auto a = render_single(synth_identity(8, 0), rng, rp);
  auto b = render_single(synth_identity(8, 1), rng, rp);
  auto m = compose_multi(a, b, rng);
  auto layout = extract_layout(m);
  REQUIRE(layout.boxes.size() == 2);
  CHECK(layout.boxes[0].box.x0 == m.persons[0].box.x0);
  CHECK(layout.boxes[1].box.y1 == m.persons[1].box.y1);
  CHECK_NOTHROW(layout.validate());
  CHECK_THROWS_AS(extract_layout(a), std::invalid_argument);

  // Round trip into the corruption operator: nonzero regions exactly at
  // the two grid boxes.
  Rng trng(9);
  FeatureMap qfm{Tensor::uniform(trng, {2, 8, 4}, 0.5, 1.0)};
  FeatureMap sfm{Tensor::uniform(trng, {2, 8, 4}, 0.5, 1.0)};
  auto out = model::feature_corrupt(qfm, sfm, layout, 8, 8);
  auto grid = [](double v, int n) { return static_cast<int>(std::lround(v * n)); };
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      bool inside = false;
      for (int i = 0; i < 2; ++i) {
        const Box& bb = layout.boxes[static_cast<size_t>(i)].box;
        if (x >= grid(bb.x0, 8) && x < grid(bb.x1, 8) && y >= grid(bb.y0, 8) &&
            y < grid(bb.y1, 8)) {
          inside = true;
        }
      }
      for (int c = 0; c < 2; ++c) {
        if (inside) {
          CHECK(out.values.at(c, y, x) != 0.0);
        } else {
          CHECK(out.values.at(c, y, x) == 0.0);
        }
      }
    }
  }
}

TEST_CASE("synth_dataset is deterministic and respects counts") {
  SynthConfig cfg;
  cfg.ids = 6;
  cfg.singles_per_id = 3;
  cfg.multis = 8;
  cfg.distractors = 4;
  cfg.seed = 11;
  auto a = synth_dataset(cfg);
  auto b = synth_dataset(cfg);
  REQUIRE(a.samples.size() == b.samples.size());
  CHECK(a.samples.size() == 6 * 3 + 8 + 4);
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].image.pix == b.samples[i].image.pix);
    CHECK(a.manifest.entries[i].file == b.manifest.entries[i].file);
  }
  // Split composition.
  CHECK(a.manifest.split_indices(Split::train).size() == 3 * 3 + 4);
  CHECK(a.manifest.split_indices(Split::query).size() == 3 * 3);
  CHECK(a.manifest.split_indices(Split::gallery).size() == 4);
  CHECK(a.manifest.split_indices(Split::distractor).size() == 4);
  // Query split contains only single-person entries.
  for (int qi : a.manifest.split_indices(Split::query)) {
    CHECK(a.manifest.entries[static_cast<size_t>(qi)].persons.size() == 1);
  }
  // Every gallery multi pairs test ids only.
  for (int gi : a.manifest.split_indices(Split::gallery)) {
    for (const auto& p : a.manifest.entries[static_cast<size_t>(gi)].persons) {
      CHECK(p.id >= 3);
      CHECK(p.id < 6);
    }
  }
  // Vocabulary covers exactly the train ids.
  CHECK(a.manifest.id_vocab == std::vector<int>{0, 1, 2});
}

TEST_CASE("write_dataset/load_manifest round trip, byte-identical reruns") {
  SynthConfig cfg;
  cfg.ids = 4;
  cfg.singles_per_id = 2;
  cfg.multis = 4;
  cfg.distractors = 2;
  cfg.seed = 13;
  auto ds = synth_dataset(cfg);

  auto d1 = temp_dir("ds1");
  auto d2 = temp_dir("ds2");
  write_dataset(ds, d1.string());
  write_dataset(synth_dataset(cfg), d2.string());
  CHECK(file_bytes(d1 / "manifest.txt") == file_bytes(d2 / "manifest.txt"));
  CHECK(file_bytes(d1 / "images" / "img_00000.ppm") ==
        file_bytes(d2 / "images" / "img_00000.ppm"));

  auto loaded = load_manifest(d1.string());
  REQUIRE(loaded.entries.size() == ds.manifest.entries.size());
  for (size_t i = 0; i < loaded.entries.size(); ++i) {
    CHECK(loaded.entries[i].split == ds.manifest.entries[i].split);
    CHECK(loaded.entries[i].persons.size() == ds.manifest.entries[i].persons.size());
    CHECK(loaded.entries[i].z_order == ds.manifest.entries[i].z_order);
  }
  CHECK(loaded.id_vocab == ds.manifest.id_vocab);

  DiskImageSource src(loaded);
  auto img = src.load(0);
  CHECK(img.pix == ds.samples[0].image.pix);

  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("ingest_reid_dir parses names, skips malformed, rejects dup/empty") {
  auto dir = temp_dir("ingest");
  Image tiny(4, 4);
  for (const char* name : {"0001_c1_000.ppm", "0001_c2_001.ppm", "0002_c1_000.ppm",
                           "0003_c1s2_000.ppm", "0004_c2_000.ppm"}) {
    write_ppm(tiny, (dir / name).string());
  }
  write_ppm(tiny, (dir / "badname.ppm").string());
  std::ofstream(dir / "notes.txt") << "not an image";

  auto m = ingest_reid_dir(dir.string());
  CHECK(m.entries.size() == 5);
  CHECK(m.warnings == 2);
  CHECK(m.id_vocab == std::vector<int>{1, 2, 3, 4});
  // Camera ids parsed from the second token.
  std::map<std::string, int> cams;
  for (const auto& e : m.entries) cams[e.file] = e.cam;
  CHECK(cams["0001_c1_000.ppm"] == 1);
  CHECK(cams["0001_c2_001.ppm"] == 2);
  CHECK(cams["0003_c1s2_000.ppm"] == 1);

  auto m2 = ingest_reid_dir(dir.string());
  CHECK(m2.entries.size() == m.entries.size());
  for (size_t i = 0; i < m.entries.size(); ++i) CHECK(m2.entries[i].file == m.entries[i].file);

  DiskImageSource src(m);
  CHECK(src.load(0).width == 4);

  auto empty = temp_dir("ingest_empty");
  CHECK_THROWS_AS(ingest_reid_dir(empty.string()), IngestError);
  fs::remove_all(dir);
  fs::remove_all(empty);
}

TEST_CASE("ingest_reid_dir honors split subdirectories") {
  auto dir = temp_dir("ingest_splits");
  Image tiny(4, 4);
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "query");
  write_ppm(tiny, (dir / "train" / "0001_c1_000.ppm").string());
  write_ppm(tiny, (dir / "query" / "0009_c2_000.ppm").string());
  auto m = ingest_reid_dir(dir.string());
  CHECK(m.entries.size() == 2);
  CHECK(m.split_indices(Split::train).size() == 1);
  CHECK(m.split_indices(Split::query).size() == 1);
  CHECK(m.id_vocab == std::vector<int>{1});
  DiskImageSource src(m);
  CHECK(src.load(0).width == 4);
  CHECK(src.load(1).width == 4);
  fs::remove_all(dir);
}

namespace {

// Tiny hand-built manifest: galleries {A,B},{B,C},{C,A}; singles for all.
DatasetManifest toy_manifest() {
  DatasetManifest m;
  auto single = [&](int id) {
    ManifestEntry e;
    e.file = "s" + std::to_string(m.entries.size());
    e.split = Split::train;
    e.persons.push_back({id, Box{0.1, 0.1, 0.9, 0.9}});
    m.entries.push_back(e);
  };
  auto multi = [&](int id1, int id2) {
    ManifestEntry e;
    e.file = "m" + std::to_string(m.entries.size());
    e.split = Split::train;
    e.persons.push_back({id1, Box{0.0, 0.0, 0.6, 1.0}});
    e.persons.push_back({id2, Box{0.4, 0.0, 1.0, 1.0}});
    e.z_order = {0, 1};
    m.entries.push_back(e);
  };
  single(0);
  single(1);
  single(2);
  multi(0, 1);
  multi(1, 2);
  multi(2, 0);
  m.id_vocab = {0, 1, 2};
  return m;
}

}  // namespace

TEST_CASE("build_batch satisfies the pairing constraints") {
  auto m = toy_manifest();
  Rng rng(17);
  auto batch = build_batch(m, 64, rng);
  REQUIRE(batch.items.size() == 64);
  for (const auto& item : batch.items) {
    const auto& gal = m.entries[static_cast<size_t>(item.gallery)];
    const int id_a = m.entries[static_cast<size_t>(item.query_a)].persons[0].id;
    const int id_b = m.entries[static_cast<size_t>(item.query_b)].persons[0].id;
    const int id_c = m.entries[static_cast<size_t>(item.corruption)].persons[0].id;
    CHECK(id_a != id_b);
    std::set<int> gal_ids;
    for (const auto& p : gal.persons) gal_ids.insert(p.id);
    CHECK(gal_ids.count(id_a) == 1);
    CHECK(gal_ids.count(id_b) == 1);
    CHECK(id_c != id_a);
    CHECK(item.layout.boxes.size() >= 2);
  }
}

TEST_CASE("build_batch is deterministic under a fixed seed") {
  auto m = toy_manifest();
  Rng r1(99), r2(99);
  auto a = build_batch(m, 32, r1);
  auto b = build_batch(m, 32, r2);
  for (size_t i = 0; i < a.items.size(); ++i) {
    CHECK(a.items[i].gallery == b.items[i].gallery);
    CHECK(a.items[i].query_a == b.items[i].query_a);
    CHECK(a.items[i].query_b == b.items[i].query_b);
    CHECK(a.items[i].corruption == b.items[i].corruption);
    CHECK(a.items[i].layout_source == b.items[i].layout_source);
  }
}

TEST_CASE("build_batch query-id marginal is uniform within 5%") {
  auto m = toy_manifest();
  Rng rng(123);
  std::map<int, int> counts;
  int total = 0;
  for (int i = 0; i < 1000; ++i) {
    auto batch = build_batch(m, 8, rng);
    for (const auto& item : batch.items) {
      ++counts[m.entries[static_cast<size_t>(item.query_a)].persons[0].id];
      ++total;
    }
  }
  for (const auto& [id, n] : counts) {
    const double freq = static_cast<double>(n) / total;
    CHECK(freq == doctest::Approx(1.0 / 3.0).epsilon(0.05));
  }
}

TEST_CASE("build_batch errors name the deficit") {
  DatasetManifest m;
  ManifestEntry e;
  e.file = "s0";
  e.split = Split::train;
  e.persons.push_back({0, Box{0.1, 0.1, 0.9, 0.9}});
  m.entries.push_back(e);
  Rng rng(1);
  CHECK_THROWS_AS(build_batch(m, 4, rng), BatchError);
  try {
    build_batch(m, 4, rng);
  } catch (const BatchError& err) {
    CHECK(std::string(err.what()).find("train multis") != std::string::npos);
  }
}
