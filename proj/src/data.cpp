// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pisnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pisnet/errors.hpp"

namespace fs = std::filesystem;

namespace pisnet::data {

namespace {

// Seed-stream tags for dataset generation.
constexpr uint64_t kStreamIdentity = 0x1d;
constexpr uint64_t kStreamSingle = 0x51;
constexpr uint64_t kStreamMultiSource = 0x35;
constexpr uint64_t kStreamMultiPlace = 0x3a;
constexpr uint64_t kStreamDistractor = 0xd1;

uint64_t mix3(uint64_t a, uint64_t b, uint64_t c) { return mix_seed(mix_seed(a, b), c); }

uint8_t clamp_u8(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

}  // namespace

// ---- identities ----

SpriteSpec synth_identity(uint64_t seed, int id) {
  Rng rng(mix3(seed, kStreamIdentity, static_cast<uint64_t>(id)));
  SpriteSpec spec;
  spec.id = id;
  auto color = [&rng]() {
    return std::array<uint8_t, 3>{static_cast<uint8_t>(rng.uniform_int(60, 255)),
                                  static_cast<uint8_t>(rng.uniform_int(60, 255)),
                                  static_cast<uint8_t>(rng.uniform_int(60, 255))};
  };
  spec.head_color = color();
  spec.torso_color = color();
  spec.leg_color = color();
  spec.accent_color = color();
  spec.pattern = static_cast<SpritePattern>(rng.uniform_int(0, 3));
  spec.pattern_period = rng.uniform_int(3, 6);
  spec.aspect = rng.uniform(0.38, 0.52);
  return spec;
}

// ---- rendering ----

namespace {

struct SpriteGeometry {
  int bx, by, bw, bh;
};

void draw_sprite(Image& img, const SpriteSpec& spec, const SpriteGeometry& g,
                 double brightness, double noise_amp, Rng& rng) {
  const double cx = g.bx + 0.5 * g.bw;
  const double head_cy = g.by + 0.10 * g.bh;
  const double head_rx = 0.28 * g.bw;
  const double head_ry = 0.095 * g.bh;
  const int torso_y0 = g.by + static_cast<int>(0.19 * g.bh);
  const int torso_y1 = g.by + static_cast<int>(0.58 * g.bh);
  const int torso_x0 = g.bx + static_cast<int>(0.12 * g.bw);
  const int torso_x1 = g.bx + static_cast<int>(0.88 * g.bw);
  const int leg_gap0 = g.bx + static_cast<int>(0.45 * g.bw);
  const int leg_gap1 = g.bx + static_cast<int>(0.55 * g.bw);
  const int leg_x0 = g.bx + static_cast<int>(0.18 * g.bw);
  const int leg_x1 = g.bx + static_cast<int>(0.82 * g.bw);
  const int period = std::max(2, spec.pattern_period);

  for (int y = std::max(0, g.by); y < std::min(img.height, g.by + g.bh); ++y) {
    for (int x = std::max(0, g.bx); x < std::min(img.width, g.bx + g.bw); ++x) {
      const std::array<uint8_t, 3>* color = nullptr;
      const double dx = (x + 0.5 - cx) / head_rx;
      const double dy = (y + 0.5 - head_cy) / head_ry;
      if (dx * dx + dy * dy <= 1.0) {
        color = &spec.head_color;
      } else if (y >= torso_y0 && y < torso_y1 && x >= torso_x0 && x < torso_x1) {
        bool accent = false;
        switch (spec.pattern) {
          case SpritePattern::solid:
            break;
          case SpritePattern::stripes_h:
            accent = ((y - torso_y0) / period) % 2 == 1;
            break;
          case SpritePattern::stripes_v:
            accent = ((x - torso_x0) / period) % 2 == 1;
            break;
          case SpritePattern::checker:
            accent = (((x - torso_x0) / period) + ((y - torso_y0) / period)) % 2 == 1;
            break;
        }
        color = accent ? &spec.accent_color : &spec.torso_color;
      } else if (y >= torso_y1 && y < g.by + g.bh &&
                 ((x >= leg_x0 && x < leg_gap0) || (x >= leg_gap1 && x < leg_x1))) {
        color = &spec.leg_color;
      }
      if (color) {
        for (int c = 0; c < 3; ++c) {
          const double noise = noise_amp > 0.0 ? rng.uniform(-noise_amp, noise_amp) : 0.0;
          img.at(y, x, c) = clamp_u8((*color)[c] * brightness + noise);
        }
      }
    }
  }
}

void fill_background(Image& img, Rng& rng, double noise_amp) {
  const int base = noise_amp > 0.0 ? rng.uniform_int(25, 55) : 40;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double noise = noise_amp > 0.0 ? rng.uniform(-noise_amp, noise_amp) : 0.0;
        img.at(y, x, c) = clamp_u8(base + noise);
      }
    }
  }
}

}  // namespace

PISample render_single(const SpriteSpec& spec, Rng& rng, const RenderParams& params) {
  const int H = params.height, W = params.width;
  const double j = params.jitter;
  PISample sample;
  sample.kind = PISample::Kind::single;
  sample.image = Image(H, W);
  fill_background(sample.image, rng, 8.0 * j);

  const double scale = 0.92 + j * rng.uniform(-0.10, 0.05);
  const double brightness = 1.0 + j * rng.uniform(-0.18, 0.18);
  const int bh = std::max(8, static_cast<int>(std::lround(scale * H)));
  const int bw =
      std::clamp(static_cast<int>(std::lround(spec.aspect * bh)), 4, W - 2);
  const double dx = j * rng.uniform(-0.08, 0.08) * W;
  const double dy = j * rng.uniform(-0.04, 0.04) * H;
  const int bx = std::clamp(static_cast<int>(std::lround((W - bw) / 2.0 + dx)), 0, W - bw);
  const int by = std::clamp(static_cast<int>(std::lround((H - bh) / 2.0 + dy)), 0, H - bh);

  draw_sprite(sample.image, spec, {bx, by, bw, bh}, brightness, 6.0 * j, rng);

  Person p;
  p.id = spec.id;
  p.box = {static_cast<double>(bx) / W, static_cast<double>(by) / H,
           static_cast<double>(bx + bw) / W, static_cast<double>(by + bh) / H};
  p.raw_box = p.box;
  sample.persons.push_back(p);
  return sample;
}

// ---- criteria & composition ----

bool validate_pi_criteria(const Box& crop_box, const std::vector<Box>& person_boxes) {
  if (person_boxes.size() < 2) {
    throw std::invalid_argument("validate_pi_criteria: needs at least 2 person boxes");
  }
  const double crop_area = crop_box.area();
  if (crop_area <= 0.0) return false;
  for (const Box& b : person_boxes) {
    if (b.area() <= 0.0) return false;
    const double contained = intersect(b, crop_box).area();
    if (contained < 0.7 * b.area()) return false;
    if (contained < 0.3 * crop_area) return false;
  }
  for (size_t i = 0; i < person_boxes.size(); ++i) {
    bool any = false;
    for (size_t j = 0; j < person_boxes.size() && !any; ++j) {
      if (i != j && overlaps(person_boxes[i], person_boxes[j])) any = true;
    }
    if (!any) return false;
  }
  return true;
}

namespace {

// Nearest-neighbor copy of the source person region into a target box,
// honoring clipping against the crop.
void paste_person(Image& dst, const PISample& src, const Box& raw_target) {
  const Person& sp = src.persons.front();
  const int sx0 = static_cast<int>(std::lround(sp.box.x0 * src.image.width));
  const int sy0 = static_cast<int>(std::lround(sp.box.y0 * src.image.height));
  const int sx1 = static_cast<int>(std::lround(sp.box.x1 * src.image.width));
  const int sy1 = static_cast<int>(std::lround(sp.box.y1 * src.image.height));
  const int sw = std::max(1, sx1 - sx0);
  const int sh = std::max(1, sy1 - sy0);

  const double tx0 = raw_target.x0 * dst.width;
  const double ty0 = raw_target.y0 * dst.height;
  const double tw = raw_target.width() * dst.width;
  const double th = raw_target.height() * dst.height;
  const int px0 = std::max(0, static_cast<int>(std::lround(tx0)));
  const int py0 = std::max(0, static_cast<int>(std::lround(ty0)));
  const int px1 = std::min(dst.width, static_cast<int>(std::lround(tx0 + tw)));
  const int py1 = std::min(dst.height, static_cast<int>(std::lround(ty0 + th)));

  for (int y = py0; y < py1; ++y) {
    const double v = (y + 0.5 - ty0) / th;
    const int sy = std::clamp(sy0 + static_cast<int>(v * sh), sy0, sy0 + sh - 1);
    for (int x = px0; x < px1; ++x) {
      const double u = (x + 0.5 - tx0) / tw;
      const int sx = std::clamp(sx0 + static_cast<int>(u * sw), sx0, sx0 + sw - 1);
      for (int c = 0; c < 3; ++c) {
        dst.at(y, x, c) = src.image.at(
            std::clamp(sy, 0, src.image.height - 1), std::clamp(sx, 0, src.image.width - 1), c);
      }
    }
  }
}

Box clip_unit(const Box& b) {
  return {std::clamp(b.x0, 0.0, 1.0), std::clamp(b.y0, 0.0, 1.0), std::clamp(b.x1, 0.0, 1.0),
          std::clamp(b.y1, 0.0, 1.0)};
}

}  // namespace

PISample compose_multi(const std::vector<PISample>& sources, Rng& rng) {
  if (sources.size() < 2) {
    throw std::invalid_argument("compose_multi: needs at least 2 single-person sources");
  }
  std::set<int> ids;
  for (const auto& s : sources) {
    if (s.kind != PISample::Kind::single) {
      throw std::invalid_argument("compose_multi: sources must be single-person samples");
    }
    ids.insert(s.persons.front().id);
  }
  if (ids.size() != sources.size()) {
    throw std::invalid_argument("compose_multi: source ids must be distinct");
  }

  const int H = sources[0].image.height;
  const int W = sources[0].image.width;
  const Box crop{0.0, 0.0, 1.0, 1.0};
  const int n = static_cast<int>(sources.size());

  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<Box> raw(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const Person& sp = sources[static_cast<size_t>(i)].persons.front();
      // Target height in crop-normalized units; width keeps the source
      // pixel aspect so sprites are not distorted.
      const double th = rng.uniform(0.78, 0.97);
      const double src_aspect =
          (sp.box.width() * W) / std::max(1e-9, sp.box.height() * H);
      const double tw = std::min(0.95, th * src_aspect * H / W);
      const double cx = rng.uniform(0.18, 0.82);
      const double cy = rng.uniform(0.42, 0.58);
      raw[static_cast<size_t>(i)] = {cx - tw / 2.0, cy - th / 2.0, cx + tw / 2.0,
                                     cy + th / 2.0};
    }
    if (!validate_pi_criteria(crop, raw)) continue;

    PISample out;
    out.kind = PISample::Kind::multi;
    out.image = Image(H, W);
    fill_background(out.image, rng, 8.0);
    std::vector<int> z(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) z[static_cast<size_t>(i)] = i;
    // Fisher-Yates with the batch rng; recorded for reproducibility.
    for (int i = n - 1; i > 0; --i) {
      std::swap(z[static_cast<size_t>(i)], z[static_cast<size_t>(rng.uniform_int(0, i))]);
    }
    for (int zi : z) {
      paste_person(out.image, sources[static_cast<size_t>(zi)], raw[static_cast<size_t>(zi)]);
    }
    for (int i = 0; i < n; ++i) {
      Person p;
      p.id = sources[static_cast<size_t>(i)].persons.front().id;
      p.raw_box = raw[static_cast<size_t>(i)];
      p.box = clip_unit(raw[static_cast<size_t>(i)]);
      out.persons.push_back(p);
    }
    out.z_order = z;
    return out;
  }
  throw GenerationError("compose_multi: no valid placement after 100 attempts");
}

PISample compose_multi(const PISample& a, const PISample& b, Rng& rng) {
  return compose_multi(std::vector<PISample>{a, b}, rng);
}

BoxLayout extract_layout(const PISample& sample) {
  if (sample.kind != PISample::Kind::multi) {
    throw std::invalid_argument("extract_layout: sample must be multi-person");
  }
  BoxLayout layout;
  for (const auto& p : sample.persons) layout.boxes.push_back({p.id, p.box});
  layout.z_order = sample.z_order;
  return layout;
}

BoxLayout layout_from_entry(const ManifestEntry& entry) {
  if (!entry.is_multi()) {
    throw std::invalid_argument("layout_from_entry: entry must be multi-person");
  }
  BoxLayout layout;
  for (const auto& p : entry.persons) layout.boxes.push_back({p.id, p.box});
  layout.z_order = entry.z_order;
  if (layout.z_order.empty()) {
    layout.z_order.resize(layout.boxes.size());
    for (size_t i = 0; i < layout.boxes.size(); ++i) layout.z_order[i] = static_cast<int>(i);
  }
  return layout;
}

// ---- manifests ----

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
    case Split::distractor: return "distractor";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "query") return Split::query;
  if (s == "gallery") return Split::gallery;
  if (s == "distractor") return Split::distractor;
  throw IoError("manifest: unknown split '" + s + "'");
}

std::vector<int> DatasetManifest::split_indices(Split s) const {
  std::vector<int> out;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].split == s) out.push_back(static_cast<int>(i));
  }
  return out;
}

int DatasetManifest::vocab_index(int id) const {
  auto it = std::lower_bound(id_vocab.begin(), id_vocab.end(), id);
  if (it == id_vocab.end() || *it != id) return -1;
  return static_cast<int>(it - id_vocab.begin());
}

namespace {

void rebuild_vocab(DatasetManifest& m) {
  std::set<int> ids;
  for (const auto& e : m.entries) {
    if (e.split != Split::train) continue;
    for (const auto& p : e.persons) ids.insert(p.id);
  }
  m.id_vocab.assign(ids.begin(), ids.end());
}

}  // namespace

DatasetManifest ingest_reid_dir(const std::string& path) {
  if (!fs::is_directory(path)) throw IngestError("not a directory: " + path);
  DatasetManifest m;
  m.root = path;
  m.images_dir.clear();

  // Split subdirectories when present, otherwise everything is train.
  std::vector<std::pair<fs::path, Split>> roots;
  for (Split s : {Split::train, Split::query, Split::gallery, Split::distractor}) {
    fs::path sub = fs::path(path) / to_string(s);
    if (fs::is_directory(sub)) roots.emplace_back(sub, s);
  }
  const bool flat = roots.empty();
  if (flat) roots.emplace_back(path, Split::train);

  std::set<std::string> names_seen;
  for (const auto& [dir, split] : roots) {
    std::vector<fs::path> files;
    for (const auto& de : fs::directory_iterator(dir)) {
      if (de.is_regular_file()) files.push_back(de.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const std::string name = f.filename().string();
      const std::string stem = f.stem().string();
      // <personid>_<camid>_<seq>
      int id = -1, cam = -1;
      size_t u1 = stem.find('_');
      size_t u2 = u1 == std::string::npos ? std::string::npos : stem.find('_', u1 + 1);
      bool ok = u1 != std::string::npos && u2 != std::string::npos && u1 > 0;
      if (ok) {
        try {
          id = std::stoi(stem.substr(0, u1));
          std::string camtok = stem.substr(u1 + 1, u2 - u1 - 1);
          size_t digit = camtok.find_first_of("0123456789");
          if (digit == std::string::npos) throw std::invalid_argument("no cam digits");
          size_t parsed = 0;
          cam = std::stoi(camtok.substr(digit), &parsed);
          ok = id >= 0 && cam >= 0;
        } catch (const std::exception&) {
          ok = false;
        }
      }
      if (!ok) {
        ++m.warnings;
        continue;
      }
      if (!names_seen.insert(name).second) {
        throw IngestError("duplicate image file name: " + name);
      }
      ManifestEntry e;
      e.file = flat ? name : (fs::path(to_string(split)) / name).string();
      e.split = split;
      e.cam = cam;
      e.persons.push_back({id, Box{0.0, 0.0, 1.0, 1.0}});
      m.entries.push_back(std::move(e));
    }
  }
  if (m.entries.empty()) throw IngestError("no usable images under " + path);
  rebuild_vocab(m);
  return m;
}

// ---- synthetic dataset ----

SynthDataset synth_dataset(const SynthConfig& cfg) {
  if (cfg.ids < 2) throw ConfigError("synth: need at least 2 identities");
  if (cfg.persons_per_multi < 2 || cfg.persons_per_multi > 3) {
    throw ConfigError("synth: persons_per_multi must be 2 or 3");
  }
  const int n_train_ids =
      std::clamp(static_cast<int>(std::lround(cfg.ids * cfg.train_id_frac)), 1, cfg.ids - 1);
  const int n_test_ids = cfg.ids - n_train_ids;
  const int n_train_multis =
      std::clamp(static_cast<int>(std::lround(cfg.multis * cfg.train_multi_frac)), 0,
                 cfg.multis);
  if (cfg.persons_per_multi > n_train_ids && n_train_multis > 0) {
    throw ConfigError("synth: not enough train ids for multi-person crops");
  }
  if (cfg.persons_per_multi > n_test_ids && cfg.multis - n_train_multis > 0) {
    throw ConfigError("synth: not enough test ids for gallery crops");
  }

  RenderParams rp;
  rp.height = cfg.height;
  rp.width = cfg.width;

  SynthDataset ds;
  ds.manifest.root.clear();
  std::vector<SpriteSpec> specs;
  specs.reserve(static_cast<size_t>(cfg.ids));
  for (int id = 0; id < cfg.ids; ++id) specs.push_back(synth_identity(cfg.seed, id));

  auto push = [&](PISample sample, Split split) {
    ManifestEntry e;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05d.ppm", static_cast<int>(ds.samples.size()));
    e.file = buf;
    e.split = split;
    for (const auto& p : sample.persons) e.persons.push_back({p.id, p.box});
    e.z_order = sample.z_order;
    ds.manifest.entries.push_back(std::move(e));
    ds.samples.push_back(std::move(sample));
  };

  // Singles: train ids feed the train split, test ids become queries.
  for (int id = 0; id < cfg.ids; ++id) {
    for (int k = 0; k < cfg.singles_per_id; ++k) {
      Rng rng(mix3(mix_seed(cfg.seed, kStreamSingle), static_cast<uint64_t>(id),
                   static_cast<uint64_t>(k)));
      push(render_single(specs[static_cast<size_t>(id)], rng, rp),
           id < n_train_ids ? Split::train : Split::query);
    }
  }

  // Multi-person crops: train crops pair train ids, gallery crops pair
  // test ids; round-robin pairing covers every id.
  for (int k = 0; k < cfg.multis; ++k) {
    const bool is_train = k < n_train_multis;
    const int base = is_train ? 0 : n_train_ids;
    const int count = is_train ? n_train_ids : n_test_ids;
    const int local = is_train ? k : k - n_train_multis;
    Rng rng(mix3(mix_seed(cfg.seed, kStreamMultiPlace), static_cast<uint64_t>(k), 0));
    std::vector<PISample> members;
    for (int s = 0; s < cfg.persons_per_multi; ++s) {
      const int offset = s == 0 ? 0 : 1 + (local / count + s - 1) % (count - 1);
      const int id = base + (local + offset) % count;
      Rng srng(mix3(mix_seed(cfg.seed, kStreamMultiSource), static_cast<uint64_t>(k),
                    static_cast<uint64_t>(s)));
      members.push_back(render_single(specs[static_cast<size_t>(id)], srng, rp));
    }
    push(compose_multi(members, rng), is_train ? Split::train : Split::gallery);
  }

  // Distractors: unique never-matching identities.
  for (int k = 0; k < cfg.distractors; ++k) {
    const int id = 1000000 + k;
    Rng rng(mix3(mix_seed(cfg.seed, kStreamDistractor), static_cast<uint64_t>(k), 1));
    push(render_single(synth_identity(cfg.seed, id), rng, rp), Split::distractor);
  }

  rebuild_vocab(ds.manifest);
  return ds;
}

// ---- manifest file I/O ----
//
// Text format, one record per line:
//   <file> <split> <id>:<x0>,<y0>,<x1>,<y1>[;<id>:...] [z:<i0>,<i1>,...]
// Coordinates are normalized to [0,1] and printed with 6 decimals.

void write_dataset(const SynthDataset& ds, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "images");
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    write_ppm(ds.samples[i].image,
              (fs::path(out_dir) / "images" / ds.manifest.entries[i].file).string());
  }
  std::ofstream out(fs::path(out_dir) / "manifest.txt");
  if (!out) throw IoError("cannot write manifest under " + out_dir);
  out << "# pisnet dataset manifest v1\n";
  char buf[256];
  for (const auto& e : ds.manifest.entries) {
    out << e.file << ' ' << to_string(e.split) << ' ';
    for (size_t p = 0; p < e.persons.size(); ++p) {
      if (p) out << ';';
      const auto& pr = e.persons[p];
      std::snprintf(buf, sizeof(buf), "%d:%.6f,%.6f,%.6f,%.6f", pr.id, pr.box.x0, pr.box.y0,
                    pr.box.x1, pr.box.y1);
      out << buf;
    }
    if (!e.z_order.empty()) {
      out << " z:";
      for (size_t z = 0; z < e.z_order.size(); ++z) {
        if (z) out << ',';
        out << e.z_order[z];
      }
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing manifest under " + out_dir);
}

DatasetManifest load_manifest(const std::string& dir_or_file) {
  fs::path p(dir_or_file);
  fs::path file = fs::is_directory(p) ? p / "manifest.txt" : p;
  std::ifstream in(file);
  if (!in) throw IoError("cannot open manifest: " + file.string());
  DatasetManifest m;
  m.root = file.parent_path().string();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string split_tok, boxes_tok, extra;
    if (!(ls >> e.file >> split_tok >> boxes_tok)) {
      throw IoError("manifest: malformed line " + std::to_string(lineno));
    }
    e.split = parse_split(split_tok);
    std::istringstream bs(boxes_tok);
    std::string one;
    while (std::getline(bs, one, ';')) {
      PersonRef pr;
      if (std::sscanf(one.c_str(), "%d:%lf,%lf,%lf,%lf", &pr.id, &pr.box.x0, &pr.box.y0,
                      &pr.box.x1, &pr.box.y1) != 5) {
        throw IoError("manifest: malformed box on line " + std::to_string(lineno));
      }
      e.persons.push_back(pr);
    }
    if (e.persons.empty()) {
      throw IoError("manifest: entry without persons on line " + std::to_string(lineno));
    }
    while (ls >> extra) {
      if (extra.rfind("z:", 0) == 0) {
        std::istringstream zs(extra.substr(2));
        std::string tok;
        while (std::getline(zs, tok, ',')) e.z_order.push_back(std::stoi(tok));
      } else if (extra.rfind("cam:", 0) == 0) {
        e.cam = std::stoi(extra.substr(4));
      } else {
        throw IoError("manifest: unknown field '" + extra + "' on line " +
                      std::to_string(lineno));
      }
    }
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw IoError("manifest is empty: " + file.string());
  rebuild_vocab(m);
  return m;
}

Image DiskImageSource::load(int entry_index) const {
  const auto& e = manifest_->entries[static_cast<size_t>(entry_index)];
  fs::path dir(manifest_->root);
  if (!manifest_->images_dir.empty()) dir /= manifest_->images_dir;
  return read_ppm((dir / e.file).string());
}

// ---- batch construction ----

TrainBatch build_batch(const DatasetManifest& manifest, int batch_size, Rng& rng) {
  if (batch_size < 1) throw ConfigError("build_batch: batch_size must be >= 1");

  // Train-split singles grouped by id, in manifest order.
  std::map<int, std::vector<int>> singles_by_id;
  std::vector<int> all_singles;
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.split == Split::train && !e.is_multi()) {
      singles_by_id[e.persons[0].id].push_back(static_cast<int>(i));
      all_singles.push_back(static_cast<int>(i));
    }
  }

  // Galleries eligible for pairing: train multis with >= 2 distinct ids
  // that all have single exemplars.
  std::vector<int> galleries;
  std::vector<std::vector<int>> gallery_ids;
  std::vector<int> layout_pool;
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.split != Split::train || !e.is_multi()) continue;
    layout_pool.push_back(static_cast<int>(i));
    std::set<int> ids;
    for (const auto& p : e.persons) ids.insert(p.id);
    std::vector<int> usable;
    for (int id : ids) {
      if (singles_by_id.count(id)) usable.push_back(id);
    }
    if (usable.size() >= 2) {
      galleries.push_back(static_cast<int>(i));
      gallery_ids.push_back(std::move(usable));
    }
  }

  if (galleries.empty()) {
    throw BatchError(
        "build_batch: no eligible multi-person galleries (need train multis whose ids have "
        "single exemplars; have " +
        std::to_string(layout_pool.size()) + " train multis, " +
        std::to_string(singles_by_id.size()) + " single ids)");
  }
  if (singles_by_id.size() < 2) {
    throw BatchError("build_batch: need singles of at least 2 ids, have " +
                     std::to_string(singles_by_id.size()));
  }

  TrainBatch batch;
  batch.items.reserve(static_cast<size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    BatchItem item;
    const int gi = rng.uniform_int(0, static_cast<int>(galleries.size()) - 1);
    item.gallery = galleries[static_cast<size_t>(gi)];
    const auto& ids = gallery_ids[static_cast<size_t>(gi)];
    const int na = rng.uniform_int(0, static_cast<int>(ids.size()) - 1);
    int nb = rng.uniform_int(0, static_cast<int>(ids.size()) - 2);
    if (nb >= na) ++nb;
    const int id_a = ids[static_cast<size_t>(na)];
    const int id_b = ids[static_cast<size_t>(nb)];
    const auto& pool_a = singles_by_id.at(id_a);
    const auto& pool_b = singles_by_id.at(id_b);
    item.query_a = pool_a[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(pool_a.size()) - 1))];
    item.query_b = pool_b[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(pool_b.size()) - 1))];

    // Corruption source: any train single whose id differs from query_a's.
    int corruption = -1;
    for (int tries = 0; tries < 1000; ++tries) {
      const int cand = all_singles[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(all_singles.size()) - 1))];
      if (manifest.entries[static_cast<size_t>(cand)].persons[0].id != id_a) {
        corruption = cand;
        break;
      }
    }
    if (corruption < 0) {
      throw BatchError("build_batch: could not draw a corruption source with id != " +
                       std::to_string(id_a));
    }
    item.corruption = corruption;

    item.layout_source = layout_pool[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(layout_pool.size()) - 1))];
    item.layout =
        layout_from_entry(manifest.entries[static_cast<size_t>(item.layout_source)]);
    batch.items.push_back(std::move(item));
  }
  return batch;
}

}  // namespace pisnet::data
