#include "mstaf/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "mstaf/config.hpp"
#include "mstaf/error.hpp"

namespace mstaf {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* label_name(PairLabel label) { return label == PairLabel::positive ? "positive" : "negative"; }

const char* bin_name(Bin bin) {
  switch (bin) {
    case Bin::difficult: return "difficult";
    case Bin::normal: return "normal";
    case Bin::easy: return "easy";
  }
  return "?";
}

PairLabel parse_label(const std::string& text) {
  if (text == "positive") return PairLabel::positive;
  if (text == "negative") return PairLabel::negative;
  throw DataError("unknown pair label '" + text + "'");
}

Bin parse_bin(const std::string& text) {
  if (text == "difficult") return Bin::difficult;
  if (text == "normal") return Bin::normal;
  if (text == "easy") return Bin::easy;
  throw DataError("unknown difficulty bin '" + text + "'");
}

void SourceItem::validate() const {
  if (image.channels != 3) throw DataError("source " + id + ": image must have 3 channels");
  if (mask.channels != 1 || !mask.same_size(image)) throw DataError("source " + id + ": mask dims differ from image dims");
  if (!is_binary(mask)) throw DataError("source " + id + ": mask is not binary");
  if (count_ones(mask) == 0) throw DataError("source " + id + ": empty object mask");
}

void SplicePair::validate() const {
  const auto fail = [&](const std::string& what) {
    throw DataError("pair " + meta.donor_id + "->" + meta.probe_id + ": " + what);
  };
  if (probe.channels != 3 || donor.channels != 3) fail("images must have 3 channels");
  if (!probe.same_size(donor) || !mask_p.same_size(probe) || !mask_d.same_size(donor)) fail("dimension mismatch");
  if (mask_p.channels != 1 || mask_d.channels != 1) fail("masks must have 1 channel");
  if (!is_binary(mask_p) || !is_binary(mask_d)) fail("masks are not binary");
  const auto ones_p = count_ones(mask_p);
  const auto ones_d = count_ones(mask_d);
  if (label == PairLabel::positive && (ones_p == 0 || ones_d == 0)) fail("positive pair with an empty mask");
  if (label == PairLabel::negative && (ones_p != 0 || ones_d != 0)) fail("negative pair with a nonempty mask");
}

namespace {

struct Box {
  double x0, y0, x1, y1;
};

Box object_box(const Image& mask) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(0, y, x) != 0.0f) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) throw DataError("empty object mask");
  return {double(x0), double(y0), double(x1), double(y1)};
}

// Backward map from pre-shift canvas coordinates to donor coordinates.
class Warp {
 public:
  Warp(const SourceItem& donor, const TransformSpec& spec, int height, int width)
      : spec_(spec), height_(height), width_(width) {
    if (!(spec.scale > 0.0)) throw DataError("transform scale must be > 0");
    const Box b = object_box(donor.mask);
    cx_ = 0.5 * (b.x0 + b.x1);
    cy_ = 0.5 * (b.y0 + b.y1);
    const double rad = spec.rotation_deg * M_PI / 180.0;
    cos_ = std::cos(rad);
    sin_ = std::sin(rad);
    if (spec.deform_magnitude > 0.0) {
      if (spec.deform_grid < 2) throw DataError("deformation grid must be >= 2");
      Rng rng(spec.seed);
      const auto n = static_cast<std::size_t>(spec.deform_grid) * spec.deform_grid;
      field_.resize(2 * n);
      for (auto& v : field_) v = rng.uniform(-spec.deform_magnitude, spec.deform_magnitude);
    }
  }

  // Donor location sampled by canvas point (ux, uy), i.e. probe pixel minus shift.
  std::pair<double, double> source(double ux, double uy) const {
    double vx = ux, vy = uy;
    if (!field_.empty()) {
      const auto [ddx, ddy] = displacement(ux, uy);
      vx += ddx;
      vy += ddy;
    }
    const double a = (vx - cx_) / spec_.scale;
    const double b = (vy - cy_) / spec_.scale;
    return {cx_ + cos_ * a + sin_ * b, cy_ - sin_ * a + cos_ * b};
  }

  // Canvas bounding box that certainly contains every mapped object pixel.
  Box cover(const Box& obj) const {
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (double px : {obj.x0 - 0.5, obj.x1 + 0.5}) {
      for (double py : {obj.y0 - 0.5, obj.y1 + 0.5}) {
        const double a = (px - cx_) * spec_.scale;
        const double b = (py - cy_) * spec_.scale;
        const double fx = cx_ + cos_ * a - sin_ * b;
        const double fy = cy_ + sin_ * a + cos_ * b;
        x0 = std::min(x0, fx);
        x1 = std::max(x1, fx);
        y0 = std::min(y0, fy);
        y1 = std::max(y1, fy);
      }
    }
    const double m = (field_.empty() ? 0.0 : spec_.deform_magnitude) + 1.0;
    return {std::floor(x0 - m), std::floor(y0 - m), std::ceil(x1 + m), std::ceil(y1 + m)};
  }

 private:
  std::pair<double, double> displacement(double ux, double uy) const {
    const int g = spec_.deform_grid;
    const auto coord = [g](double u, int extent) {
      const double t = extent > 1 ? std::clamp(u / (extent - 1), 0.0, 1.0) * (g - 1) : 0.0;
      const int i = std::min(static_cast<int>(t), g - 2);
      return std::pair<int, double>{i, t - i};
    };
    const auto [ix, wx] = coord(ux, width_);
    const auto [iy, wy] = coord(uy, height_);
    const auto at = [&](int j, int i, int axis) { return field_[2 * (static_cast<std::size_t>(j) * g + i) + axis]; };
    double out[2];
    for (int axis = 0; axis < 2; ++axis) {
      const double top = at(iy, ix, axis) * (1 - wx) + at(iy, ix + 1, axis) * wx;
      const double bot = at(iy + 1, ix, axis) * (1 - wx) + at(iy + 1, ix + 1, axis) * wx;
      out[axis] = top * (1 - wy) + bot * wy;
    }
    return {out[0], out[1]};
  }

  TransformSpec spec_;
  int height_, width_;
  double cx_ = 0, cy_ = 0, cos_ = 1, sin_ = 0;
  std::vector<double> field_;  // [grid, grid, 2]
};

bool mask_hit(const Image& mask, double px, double py) {
  const auto x = static_cast<long>(std::floor(px + 0.5));
  const auto y = static_cast<long>(std::floor(py + 0.5));
  if (x < 0 || y < 0 || x >= mask.width || y >= mask.height) return false;
  return mask.at(0, static_cast<int>(y), static_cast<int>(x)) >= 0.5f;
}

double bilinear(const Image& img, int c, double px, double py) {
  px = std::clamp(px, 0.0, double(img.width - 1));
  py = std::clamp(py, 0.0, double(img.height - 1));
  const int x0 = static_cast<int>(px);
  const int y0 = static_cast<int>(py);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double wx = px - x0;
  const double wy = py - y0;
  const double top = img.at(c, y0, x0) * (1 - wx) + img.at(c, y0, x1) * wx;
  const double bot = img.at(c, y1, x0) * (1 - wx) + img.at(c, y1, x1) * wx;
  return top * (1 - wy) + bot * wy;
}

struct Extent {
  long x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  std::int64_t area = 0;
};

// Pixels of the warped object on the unbounded, unshifted canvas.
Extent warped_extent(const SourceItem& donor, const Warp& warp) {
  const Box c = warp.cover(object_box(donor.mask));
  Extent e{long(c.x1), long(c.y1), long(c.x0), long(c.y0), 0};
  for (long y = long(c.y0); y <= long(c.y1); ++y) {
    for (long x = long(c.x0); x <= long(c.x1); ++x) {
      const auto [px, py] = warp.source(double(x), double(y));
      if (!mask_hit(donor.mask, px, py)) continue;
      e.x0 = std::min(e.x0, x);
      e.x1 = std::max(e.x1, x);
      e.y0 = std::min(e.y0, y);
      e.y1 = std::max(e.y1, y);
      ++e.area;
    }
  }
  return e;
}

}  // namespace

SplicePair generate_pair(const SourceItem& donor, const Image& probe_bg, const TransformSpec& spec,
                         const std::string& probe_id) {
  donor.validate();
  if (probe_bg.channels != 3) throw DataError("probe background must have 3 channels");
  if (count_ones(donor.mask) < kMinObjectArea) throw DataError("source " + donor.id + ": object smaller than 16 px");
  const int H = probe_bg.height;
  const int W = probe_bg.width;
  const Warp warp(donor, spec, H, W);

  // Fit check over the whole canvas, not just the frame.
  const Extent e = warped_extent(donor, warp);
  if (e.area < kMinObjectArea) throw PlacementError("transformed object smaller than 16 px");
  const double fx0 = e.x0 + spec.dx, fx1 = e.x1 + spec.dx;
  const double fy0 = e.y0 + spec.dy, fy1 = e.y1 + spec.dy;
  if (std::floor(fx0) < 0 || std::ceil(fx1) > W - 1 || std::floor(fy0) < 0 || std::ceil(fy1) > H - 1) {
    throw PlacementError("transformed object leaves the probe frame");
  }

  SplicePair pair;
  pair.probe = probe_bg;
  pair.donor = donor.image;
  pair.mask_d = donor.mask;
  pair.mask_p = Image(1, H, W);
  pair.label = PairLabel::positive;
  pair.meta.spec = spec;
  pair.meta.donor_id = donor.id;
  pair.meta.probe_id = probe_id;

  std::int64_t area = 0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto [px, py] = warp.source(x - spec.dx, y - spec.dy);
      if (!mask_hit(donor.mask, px, py)) continue;
      pair.mask_p.at(0, y, x) = 1.0f;
      ++area;
      for (int c = 0; c < 3; ++c) {
        const double v = bilinear(donor.image, c, px, py);
        pair.probe.at(c, y, x) = static_cast<float>(std::clamp(v * spec.luminance, 0.0, 1.0));
      }
    }
  }
  if (area < kMinObjectArea) throw PlacementError("transformed object smaller than 16 px inside the frame");
  pair.meta.area_ratio = double(area) / (double(H) * W);
  return pair;
}

SplicePair negative_pair(const Image& probe, const Image& donor, const std::string& probe_id,
                         const std::string& donor_id) {
  SplicePair pair;
  pair.probe = probe;
  pair.donor = donor;
  pair.mask_p = Image(1, probe.height, probe.width);
  pair.mask_d = Image(1, donor.height, donor.width);
  pair.label = PairLabel::negative;
  pair.meta.probe_id = probe_id;
  pair.meta.donor_id = donor_id;
  pair.validate();
  return pair;
}

std::optional<Bin> bin_for_ratio(double ratio) {
  if (ratio < kRejectBelow) return std::nullopt;
  if (ratio < kNormalFrom) return Bin::difficult;
  if (ratio < kEasyFrom) return Bin::normal;
  return Bin::easy;
}

Bin difficulty_bin(const SplicePair& pair) {
  if (pair.label != PairLabel::positive) throw DataError("difficulty bins are defined for positive pairs only");
  const double ratio = double(count_ones(pair.mask_p)) / (double(pair.mask_p.height) * pair.mask_p.width);
  const auto bin = bin_for_ratio(ratio);
  if (!bin) throw DataError("pair rejected: spliced area ratio " + std::to_string(ratio) + " is below 1%");
  return *bin;
}

TransformSpec sample_transform(const TransformRanges& r, Rng& rng) {
  TransformSpec s;
  s.rotation_deg = rng.uniform(-r.rotation_deg, r.rotation_deg);
  s.scale = rng.uniform(r.scale_min, r.scale_max);
  s.luminance = rng.uniform(r.luminance_min, r.luminance_max);
  s.deform_magnitude = r.deform_magnitude;
  s.deform_grid = r.deform_grid;
  s.seed = rng.next_u64();
  return s;
}

void place_uniformly(const SourceItem& donor, int height, int width, TransformSpec& spec, Rng& rng) {
  spec.dx = spec.dy = 0.0;
  const Warp warp(donor, spec, height, width);
  const Extent e = warped_extent(donor, warp);
  if (e.area < kMinObjectArea) throw PlacementError("transformed object smaller than 16 px");
  const long lo_x = -e.x0, hi_x = (width - 1) - e.x1;
  const long lo_y = -e.y0, hi_y = (height - 1) - e.y1;
  if (lo_x > hi_x || lo_y > hi_y) throw PlacementError("transformed object larger than the probe frame");
  spec.dx = double(rng.uniform_int(lo_x, hi_x));
  spec.dy = double(rng.uniform_int(lo_y, hi_y));
}

// ---- manifest ----

namespace {

json spec_json(const TransformSpec& s) {
  return json{{"dx", s.dx},
              {"dy", s.dy},
              {"rotation_deg", s.rotation_deg},
              {"scale", s.scale},
              {"luminance", s.luminance},
              {"deform_magnitude", s.deform_magnitude},
              {"deform_grid", s.deform_grid},
              {"seed", s.seed}};
}

TransformSpec spec_from_json(const json& j) {
  TransformSpec s;
  s.dx = j.at("dx").get<double>();
  s.dy = j.at("dy").get<double>();
  s.rotation_deg = j.at("rotation_deg").get<double>();
  s.scale = j.at("scale").get<double>();
  s.luminance = j.at("luminance").get<double>();
  s.deform_magnitude = j.at("deform_magnitude").get<double>();
  s.deform_grid = j.at("deform_grid").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace

std::string manifest_line(const ManifestRecord& r) {
  json j{{"id", r.id},
         {"probe", r.probe},
         {"donor", r.donor},
         {"mask_p", r.mask_p},
         {"mask_d", r.mask_d},
         {"label", label_name(r.label)},
         {"bin", r.bin ? json(bin_name(*r.bin)) : json(nullptr)},
         {"area_ratio", r.area_ratio},
         {"donor_source", r.donor_source},
         {"probe_source", r.probe_source},
         {"transform", spec_json(r.spec)}};
  return j.dump();
}

ManifestRecord parse_manifest_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.probe = j.at("probe").get<std::string>();
    r.donor = j.at("donor").get<std::string>();
    r.mask_p = j.at("mask_p").get<std::string>();
    r.mask_d = j.at("mask_d").get<std::string>();
    r.label = parse_label(j.at("label").get<std::string>());
    if (!j.at("bin").is_null()) r.bin = parse_bin(j.at("bin").get<std::string>());
    r.area_ratio = j.at("area_ratio").get<double>();
    r.donor_source = j.value("donor_source", "");
    r.probe_source = j.value("probe_source", "");
    if (j.contains("transform")) r.spec = spec_from_json(j.at("transform"));
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest record: ") + e.what());
  }
}

std::vector<ManifestRecord> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(parse_manifest_line(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

SplicePair load_pair(const ManifestRecord& r, const fs::path& base) {
  SplicePair pair;
  pair.probe = to_rgb(read_pnm(base / r.probe));
  pair.donor = to_rgb(read_pnm(base / r.donor));
  pair.mask_p = read_pnm(base / r.mask_p);
  pair.mask_d = read_pnm(base / r.mask_d);
  pair.label = r.label;
  pair.meta.spec = r.spec;
  pair.meta.donor_id = r.donor_source;
  pair.meta.probe_id = r.probe_source;
  pair.validate();
  const double ratio = double(count_ones(pair.mask_p)) / (double(pair.mask_p.height) * pair.mask_p.width);
  pair.meta.area_ratio = ratio;
  if (r.label == PairLabel::positive) {
    if (ratio != r.area_ratio) throw DataError("record " + r.id + ": area ratio differs from the manifest");
    if (!r.bin || difficulty_bin(pair) != *r.bin) throw DataError("record " + r.id + ": bin differs from the manifest");
  } else if (r.bin) {
    throw DataError("record " + r.id + ": negative pair carries a bin");
  }
  return pair;
}

// ---- corpus ----

namespace {

SourceItem fit_source(const SourceItem& s, int res) {
  SourceItem out;
  out.id = s.id;
  out.image = resize_bilinear(to_rgb(s.image), res, res);
  out.mask = resize_nearest(s.mask, res, res);
  return out;
}

// Target area-ratio window per bin, kept inside the bin with some margin.
std::pair<double, double> steer_window(Bin bin) {
  switch (bin) {
    case Bin::difficult: return {0.015, 0.09};
    case Bin::normal: return {0.12, 0.28};
    case Bin::easy: return {0.32, 0.5};
  }
  return {0.0, 1.0};
}

struct PairJob {
  std::optional<SplicePair> pair;
  std::vector<std::string> skipped;
  std::string donor_source, probe_source;
};

PairJob make_positive(const std::vector<SourceItem>& srcs, const CorpusOptions& opts, int index) {
  Rng rng = Rng::stream(opts.seed, static_cast<std::uint64_t>(index));
  const auto n = static_cast<std::int64_t>(srcs.size());
  const bool steer = opts.balanced;
  const Bin target = Bin(index % 3);
  const int res = opts.resolution;
  PairJob job;
  const int donor_attempts = std::max<int>(20, 4 * static_cast<int>(n));
  for (int d = 0; d < donor_attempts; ++d) {
    const auto di = rng.uniform_int(0, n - 1);
    auto pi = rng.uniform_int(0, n - 2);
    if (pi >= di) ++pi;
    const SourceItem& donor = srcs[di];
    const double area0 = double(count_ones(donor.mask));
    std::string reason = "placement failed " + std::to_string(opts.max_retries) + " times";
    for (int attempt = 0; attempt < opts.max_retries; ++attempt) {
      TransformSpec spec = sample_transform(opts.ranges, rng);
      if (steer) {
        const auto [lo, hi] = steer_window(target);
        const double want = rng.uniform(lo, hi);
        spec.scale = std::sqrt(want * res * res / area0);
        if (spec.scale < opts.ranges.scale_min || spec.scale > opts.ranges.scale_max) {
          reason = std::string("object area cannot reach the ") + bin_name(target) + " bin within the scale range";
          break;
        }
      }
      try {
        place_uniformly(donor, res, res, spec, rng);
        SplicePair pair = generate_pair(donor, srcs[pi].image, spec, srcs[pi].id);
        const auto bin = bin_for_ratio(pair.meta.area_ratio);
        if (!bin || (steer && *bin != target)) continue;
        job.pair = std::move(pair);
        job.donor_source = donor.id;
        job.probe_source = srcs[pi].id;
        return job;
      } catch (const PlacementError&) {
      }
    }
    job.skipped.push_back("pair " + std::to_string(index) + ": skipped donor " + donor.id + ": " + reason);
  }
  throw DataError("pair " + std::to_string(index) + ": no source could produce a valid splice");
}

char* format_id(char* buf, std::size_t size, int index) {
  std::snprintf(buf, size, "pair_%06d", index);
  return buf;
}

}  // namespace

CorpusResult build_corpus(const std::vector<SourceItem>& sources, const CorpusOptions& opts, const fs::path& out_dir) {
  if (sources.size() < 2) throw DataError("build_corpus needs at least 2 source items");
  if (opts.n_pairs < 0 || opts.n_negative < 0) throw ConfigError("pair counts must be non-negative");
  if (opts.resolution < 8) throw ConfigError("resolution must be >= 8");
  std::vector<SourceItem> srcs;
  srcs.reserve(sources.size());
  for (const auto& s : sources) {
    s.validate();
    srcs.push_back(fit_source(s, opts.resolution));
    if (count_ones(srcs.back().mask) == 0) throw DataError("source " + s.id + ": object vanishes at the corpus resolution");
  }

  std::error_code ec;
  fs::create_directories(out_dir / "pairs", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "pairs").string() + ": " + ec.message());

  const int total = opts.n_pairs + opts.n_negative;
  std::vector<ManifestRecord> records(total);
  std::vector<std::vector<std::string>> skipped(total);
  std::vector<std::string> errors(total);

  const auto run_one = [&](int i) {
    char id[32];
    format_id(id, sizeof id, i);
    ManifestRecord& r = records[i];
    r.id = id;
    r.probe = std::string("pairs/") + id + "_probe.ppm";
    r.donor = std::string("pairs/") + id + "_donor.ppm";
    r.mask_p = std::string("pairs/") + id + "_mask_p.pgm";
    r.mask_d = std::string("pairs/") + id + "_mask_d.pgm";
    SplicePair pair;
    if (i < opts.n_pairs) {
      PairJob job = make_positive(srcs, opts, i);
      skipped[i] = std::move(job.skipped);
      pair = std::move(*job.pair);
      r.label = PairLabel::positive;
      r.bin = difficulty_bin(pair);
      r.donor_source = job.donor_source;
      r.probe_source = job.probe_source;
      r.spec = pair.meta.spec;
      r.area_ratio = pair.meta.area_ratio;
    } else {
      Rng rng = Rng::stream(opts.seed, static_cast<std::uint64_t>(i));
      const auto n = static_cast<std::int64_t>(srcs.size());
      const auto a = rng.uniform_int(0, n - 1);
      auto b = rng.uniform_int(0, n - 2);
      if (b >= a) ++b;
      pair = negative_pair(srcs[a].image, srcs[b].image, srcs[a].id, srcs[b].id);
      r.label = PairLabel::negative;
      r.probe_source = srcs[a].id;
      r.donor_source = srcs[b].id;
    }
    write_pnm(out_dir / r.probe, pair.probe);
    write_pnm(out_dir / r.donor, pair.donor);
    write_pnm(out_dir / r.mask_p, pair.mask_p);
    write_pnm(out_dir / r.mask_d, pair.mask_d);
  };

  const int workers = std::max(1, std::min(opts.workers, total));
  std::atomic<int> next{0};
  const auto worker = [&] {
    for (int i = next++; i < total; i = next++) {
      try {
        run_one(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw DataError(e);
  }

  CorpusResult result;
  result.records = std::move(records);
  for (auto& s : skipped) result.skipped.insert(result.skipped.end(), s.begin(), s.end());
  for (const auto& r : result.records) ++result.histogram[r.bin ? bin_name(*r.bin) : "negative"];

  result.manifest_path = out_dir / kManifestName;
  std::ofstream out(result.manifest_path, std::ios::binary);
  if (!out) throw DataError("cannot write " + result.manifest_path.string());
  for (const auto& r : result.records) out << manifest_line(r) << '\n';
  if (!out) throw DataError("write failed for " + result.manifest_path.string());
  return result;
}

// ---- sources ----

Image rasterize_polygon(const std::vector<std::pair<double, double>>& v, int height, int width) {
  Image mask(1, height, width);
  if (v.size() < 3) return mask;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      bool inside = false;
      for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
        const auto [xi, yi] = v[i];
        const auto [xj, yj] = v[j];
        if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
      }
      if (inside) mask.at(0, y, x) = 1.0f;
    }
  }
  return mask;
}

std::vector<SourceItem> synthetic_sources(int count, int res, std::uint64_t seed) {
  if (count < 1 || res < 8) throw ConfigError("synthetic_sources needs count >= 1 and resolution >= 8");
  std::vector<SourceItem> out;
  for (int k = 0; k < count; ++k) {
    Rng rng = Rng::stream(seed ^ 0x5eed5eedULL, static_cast<std::uint64_t>(k));
    SourceItem s;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04d", k);
    s.id = id;

    // Two independent textures: one for the scene, one for the object.
    const auto texture = [&](Image& img) {
      for (int c = 0; c < 3; ++c) {
        const double base = rng.uniform(0.2, 0.8);
        double fx[3], fy[3], ph[3], amp[3];
        for (int w = 0; w < 3; ++w) {
          const double f = rng.uniform(0.03, 0.3) * 2 * M_PI;
          const double th = rng.uniform(0, M_PI);
          fx[w] = f * std::cos(th);
          fy[w] = f * std::sin(th);
          ph[w] = rng.uniform(0, 2 * M_PI);
          amp[w] = rng.uniform(0.04, 0.14);
        }
        for (int y = 0; y < img.height; ++y) {
          for (int x = 0; x < img.width; ++x) {
            double v = base + 0.02 * rng.normal();
            for (int w = 0; w < 3; ++w) v += amp[w] * std::sin(fx[w] * x + fy[w] * y + ph[w]);
            img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
    };
    s.image = Image(3, res, res);
    texture(s.image);
    Image object(3, res, res);
    texture(object);

    const double radius = res * rng.uniform(0.07, 0.3);
    const double margin = radius * 1.3 + 1;
    const double cx = rng.uniform(std::min(margin, res / 2.0), std::max(res - 1 - margin, res / 2.0));
    const double cy = rng.uniform(std::min(margin, res / 2.0), std::max(res - 1 - margin, res / 2.0));
    const double a1 = rng.uniform(0.0, 0.2), a2 = rng.uniform(0.0, 0.12);
    const double p1 = rng.uniform(0, 2 * M_PI), p2 = rng.uniform(0, 2 * M_PI);
    std::vector<std::pair<double, double>> poly;
    for (int i = 0; i < 24; ++i) {
      const double t = 2 * M_PI * i / 24;
      const double r = radius * (1 + a1 * std::sin(2 * t + p1) + a2 * std::sin(3 * t + p2));
      poly.emplace_back(cx + r * std::cos(t), cy + r * std::sin(t));
    }
    s.mask = rasterize_polygon(poly, res, res);
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) {
        if (s.mask.at(0, y, x) == 0.0f) continue;
        for (int c = 0; c < 3; ++c) s.image.at(c, y, x) = object.at(c, y, x);
      }
    }
    if (count_ones(s.mask) < kMinObjectArea) throw DataError("synthetic object too small; raise the resolution");
    out.push_back(std::move(s));
  }
  return out;
}

std::map<std::string, std::vector<std::pair<double, double>>> load_polygons(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open polygon file " + path.string());
  std::map<std::string, std::vector<std::pair<double, double>>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string id;
    if (!(ss >> id)) continue;
    std::vector<double> nums;
    double v;
    while (ss >> v) nums.push_back(v);
    const auto where = path.string() + ":" + std::to_string(lineno);
    if (!ss.eof()) throw DataError(where + ": non-numeric vertex coordinate");
    if (nums.size() < 6 || nums.size() % 2 != 0) throw DataError(where + ": need at least 3 (x, y) vertex pairs");
    if (out.count(id)) throw DataError(where + ": duplicate polygon for " + id);
    auto& poly = out[id];
    for (std::size_t i = 0; i < nums.size(); i += 2) poly.emplace_back(nums[i], nums[i + 1]);
  }
  return out;
}

std::vector<SourceItem> load_sources(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("source directory " + dir.string() + " does not exist");
  std::map<std::string, std::vector<std::pair<double, double>>> polygons;
  if (fs::exists(dir / "polygons.txt")) polygons = load_polygons(dir / "polygons.txt");

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    const auto stem = entry.path().stem().string();
    if ((ext == ".ppm" || ext == ".pgm") && !(stem.size() > 5 && stem.ends_with("_mask"))) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<SourceItem> out;
  for (const auto& f : files) {
    SourceItem s;
    s.id = f.stem().string();
    s.image = to_rgb(read_pnm(f));
    const auto mask_file = dir / (s.id + "_mask.pgm");
    if (fs::exists(mask_file)) {
      s.mask = read_pnm(mask_file);
      if (s.mask.channels != 1) throw DataError(mask_file.string() + ": mask must be grayscale");
      for (auto& v : s.mask.data) v = v >= 0.5f ? 1.0f : 0.0f;
    } else if (auto it = polygons.find(s.id); it != polygons.end()) {
      s.mask = rasterize_polygon(it->second, s.image.height, s.image.width);
    } else {
      throw DataError("source " + s.id + " has neither " + mask_file.filename().string() + " nor a polygon");
    }
    s.validate();
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("no source images in " + dir.string());
  return out;
}

}  // namespace mstaf
