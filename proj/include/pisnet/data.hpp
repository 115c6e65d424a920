// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pisnet/image.hpp"
#include "pisnet/rng.hpp"
#include "pisnet/types.hpp"

namespace pisnet::data {

// ---- synthetic identities ----

enum class SpritePattern { solid, stripes_h, stripes_v, checker };

struct SpriteSpec {
  int id = -1;
  std::array<uint8_t, 3> head_color{};
  std::array<uint8_t, 3> torso_color{};
  std::array<uint8_t, 3> leg_color{};
  std::array<uint8_t, 3> accent_color{};
  SpritePattern pattern = SpritePattern::solid;
  int pattern_period = 4;
  double aspect = 0.45;  // sprite box width / height
};

// Deterministic appearance per (seed, id).
SpriteSpec synth_identity(uint64_t seed, int id);

// ---- samples ----

struct Person {
  int id = -1;
  Box box;      // clipped to the crop, normalized [0,1]
  Box raw_box;  // pre-clip geometry; equals box when nothing was clipped
};

struct PISample {
  enum class Kind { single, multi };
  Image image;
  std::vector<Person> persons;
  std::vector<int> z_order;  // paint order for multi samples
  Kind kind = Kind::single;
};

struct RenderParams {
  int height = 64;
  int width = 32;
  double jitter = 1.0;  // 0 disables pose/illumination jitter
};

PISample render_single(const SpriteSpec& spec, Rng& rng, const RenderParams& params = {});

// Places both persons in one crop, resampling offsets until the
// interference criteria hold; throws GenerationError after 100 attempts.
PISample compose_multi(const PISample& a, const PISample& b, Rng& rng);
PISample compose_multi(const std::vector<PISample>& sources, Rng& rng);

// Selection criteria for a multi-person crop: (1) each person box keeps at
// least 70% of its area inside the crop, (2) each contained part covers at
// least 0.3 of the crop area, (3) every box overlaps some other box.
bool validate_pi_criteria(const Box& crop_box, const std::vector<Box>& person_boxes);

BoxLayout extract_layout(const PISample& sample);

// ---- manifests ----

enum class Split { train, query, gallery, distractor };

const char* to_string(Split s);
Split parse_split(const std::string& s);

struct PersonRef {
  int id = -1;
  Box box;
};

struct ManifestEntry {
  std::string file;
  Split split = Split::train;
  std::vector<PersonRef> persons;
  std::vector<int> z_order;  // multi entries only
  int cam = -1;              // camera id when the corpus provides one

  bool is_multi() const { return persons.size() >= 2; }
};

struct DatasetManifest {
  std::string root;
  std::string images_dir = "images";  // empty when entries are rooted directly
  std::vector<ManifestEntry> entries;
  std::vector<int> id_vocab;  // sorted unique train-split ids
  int warnings = 0;           // skipped files during ingestion

  std::vector<int> split_indices(Split s) const;
  int vocab_index(int id) const;  // -1 when absent
};

BoxLayout layout_from_entry(const ManifestEntry& entry);

// Market-style directory of `<personid>_<camid>_<seq>.<ext>` images,
// either flat (everything becomes the train split) or with train/query/
// gallery/distractor subdirectories.
DatasetManifest ingest_reid_dir(const std::string& path);

// ---- synthetic dataset generation ----

struct SynthConfig {
  int ids = 50;
  int singles_per_id = 20;
  int multis = 500;
  int distractors = 500;
  int persons_per_multi = 2;
  uint64_t seed = 0;
  int height = 64;
  int width = 32;
  double train_id_frac = 0.5;
  double train_multi_frac = 0.5;
};

struct SynthDataset {
  DatasetManifest manifest;
  std::vector<PISample> samples;  // aligned with manifest.entries
};

SynthDataset synth_dataset(const SynthConfig& cfg);

void write_dataset(const SynthDataset& ds, const std::string& out_dir);
DatasetManifest load_manifest(const std::string& dir_or_file);

// ---- image access ----

class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual Image load(int entry_index) const = 0;
};

class DiskImageSource : public ImageSource {
 public:
  explicit DiskImageSource(const DatasetManifest& manifest) : manifest_(&manifest) {}
  Image load(int entry_index) const override;

 private:
  const DatasetManifest* manifest_;
};

class MemoryImageSource : public ImageSource {
 public:
  explicit MemoryImageSource(const std::vector<PISample>& samples) : samples_(&samples) {}
  Image load(int entry_index) const override {
    return (*samples_)[static_cast<size_t>(entry_index)].image;
  }

 private:
  const std::vector<PISample>* samples_;
};

// ---- batch construction ----

struct BatchItem {
  int gallery = -1;
  int query_a = -1;
  int query_b = -1;
  int corruption = -1;
  int layout_source = -1;
  BoxLayout layout;
};

struct TrainBatch {
  std::vector<BatchItem> items;
};

// Pairs each multi-person gallery with two distinct in-gallery queries, an
// out-of-target corruption source and an independently drawn layout.
TrainBatch build_batch(const DatasetManifest& manifest, int batch_size, Rng& rng);

}  // namespace pisnet::data
