#pragma once
// Splice-pair synthesis: cut an annotated object out of a donor image,
// transform it, paste it into a probe background and keep both masks.
//
// Geometry convention: integer coordinates are pixel centers. The object
// transform is applied about the center of the object's bounding box in the
// order scale -> rotation -> deformation -> shift. Rendering is by backward
// mapping: every probe pixel is traced to a donor location, pixels are
// sampled bilinearly and the mask by nearest neighbour.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mstaf/image.hpp"
#include "mstaf/rng.hpp"

namespace mstaf {

struct SourceItem {
  std::string id;
  Image image;  // 3 channels
  Image mask;   // 1 channel, binary, nonempty

  void validate() const;
};

struct TransformSpec {
  double dx = 0.0;
  double dy = 0.0;
  double rotation_deg = 0.0;
  double scale = 1.0;
  double luminance = 1.0;
  // Elastic warp: a grid x grid lattice of control displacements drawn
  // uniformly in [-magnitude, magnitude] from `seed`, bilinearly interpolated.
  // magnitude 0 disables it.
  double deform_magnitude = 0.0;
  int deform_grid = 4;
  std::uint64_t seed = 0;

  static TransformSpec identity() { return {}; }
};

enum class PairLabel { positive, negative };
enum class Bin { difficult, normal, easy };

const char* label_name(PairLabel label);
const char* bin_name(Bin bin);
PairLabel parse_label(const std::string& text);
Bin parse_bin(const std::string& text);

struct PairMeta {
  TransformSpec spec;
  std::string donor_id;
  std::string probe_id;
  double area_ratio = 0.0;  // ones(M_p) / (H * W)
};

struct SplicePair {
  Image probe;   // I_p
  Image donor;   // I_d
  Image mask_p;  // M_p
  Image mask_d;  // M_d
  PairLabel label = PairLabel::positive;
  PairMeta meta;

  // Throws DataError if any pair invariant is broken.
  void validate() const;
};

inline constexpr int kMinObjectArea = 16;

// Throws PlacementError when the transformed object leaves the probe frame or
// shrinks below kMinObjectArea, DataError on bad inputs.
SplicePair generate_pair(const SourceItem& donor, const Image& probe_bg, const TransformSpec& spec,
                         const std::string& probe_id = "");

// Two unrelated images, both masks all-zero.
SplicePair negative_pair(const Image& probe, const Image& donor, const std::string& probe_id = "",
                         const std::string& donor_id = "");

// Ratio bins: Difficult [0.01, 0.10), Normal [0.10, 0.30), Easy [0.30, 1].
inline constexpr double kRejectBelow = 0.01;
inline constexpr double kNormalFrom = 0.10;
inline constexpr double kEasyFrom = 0.30;

// nullopt for ratios below kRejectBelow.
std::optional<Bin> bin_for_ratio(double ratio);
// Throws DataError for negative pairs and for rejected (sub-1%) pairs.
Bin difficulty_bin(const SplicePair& pair);

struct TransformRanges {
  double rotation_deg = 30.0;  // U(-r, r)
  double scale_min = 0.5;
  double scale_max = 2.0;
  double luminance_min = 0.8;
  double luminance_max = 1.2;
  double deform_magnitude = 3.0;
  int deform_grid = 4;
};

// Draws everything except the shift, which is chosen uniformly over valid
// placements by place_uniformly.
TransformSpec sample_transform(const TransformRanges& ranges, Rng& rng);

// Sets spec.dx/dy to a uniformly drawn integer shift that keeps the whole
// transformed object inside a height x width frame. Throws PlacementError if
// no shift does.
void place_uniformly(const SourceItem& donor, int height, int width, TransformSpec& spec, Rng& rng);

struct CorpusOptions {
  int resolution = 64;
  int n_pairs = 60;      // positive pairs
  int n_negative = 0;    // extra negative pairs appended after the positives
  bool balanced = true;  // pair i targets bin (i mod 3)
  TransformRanges ranges;
  std::uint64_t seed = 0;
  int max_retries = 50;  // placement attempts per chosen donor
  int workers = 1;
};

struct ManifestRecord {
  std::string id;
  std::string probe;  // paths relative to the manifest's directory
  std::string donor;
  std::string mask_p;
  std::string mask_d;
  PairLabel label = PairLabel::positive;
  std::optional<Bin> bin;
  double area_ratio = 0.0;
  std::string donor_source;
  std::string probe_source;
  TransformSpec spec;
};

struct CorpusResult {
  std::vector<ManifestRecord> records;
  std::vector<std::string> skipped;  // one line per abandoned donor attempt
  std::map<std::string, int> histogram;  // bin name (or "negative") -> count
  std::filesystem::path manifest_path;
};

inline constexpr const char* kManifestName = "manifest.jsonl";

// Writes images, masks and manifest.jsonl under out_dir. Deterministic in
// opts.seed regardless of opts.workers.
CorpusResult build_corpus(const std::vector<SourceItem>& sources, const CorpusOptions& opts,
                          const std::filesystem::path& out_dir);

std::string manifest_line(const ManifestRecord& record);
ManifestRecord parse_manifest_line(const std::string& line);
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);
// Reads the files of one record and re-validates the pair.
SplicePair load_pair(const ManifestRecord& record, const std::filesystem::path& base_dir);

// Textured backgrounds with one smooth blob object each; object radii vary so
// that every difficulty bin is reachable.
std::vector<SourceItem> synthetic_sources(int count, int resolution, std::uint64_t seed);

// Even-odd fill evaluated at pixel centers.
Image rasterize_polygon(const std::vector<std::pair<double, double>>& vertices, int height, int width);

// Plain text, one object per line: "<image_id> x1 y1 x2 y2 ..." ('#' comments).
std::map<std::string, std::vector<std::pair<double, double>>> load_polygons(const std::filesystem::path& path);

// Reads every <id>.ppm/.pgm in `dir` whose object is given either by
// <id>_mask.pgm or by a polygon in `dir`/polygons.txt. Sorted by id.
std::vector<SourceItem> load_sources(const std::filesystem::path& dir);

}  // namespace mstaf
