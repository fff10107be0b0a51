#include "mstaf/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include "json.hpp"

#include "mstaf/datagen.hpp"
#include "mstaf/error.hpp"

namespace mstaf {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

Image binarize(const Image& mask, double threshold) {
  Image out = mask;
  for (auto& v : out.data) v = v >= threshold ? 1.0f : 0.0f;
  return out;
}

ConfusionCounts confusion(const Image& pred, const Image& gt) {
  if (pred.channels != gt.channels || !pred.same_size(gt)) {
    throw DimensionError("mask size mismatch: " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " vs " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0.0f;
    const bool g = gt.data[i] != 0.0f;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double iou(const ConfusionCounts& c) {
  const auto uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : double(c.tp) / double(uni);
}

double iou(const Image& pred, const Image& gt) { return iou(confusion(pred, gt)); }

double mcc(const ConfusionCounts& c) {
  const double tp = double(c.tp), fp = double(c.fp), fn = double(c.fn), tn = double(c.tn);
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (den == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(den);
}

std::optional<double> nmm(const ConfusionCounts& c) {
  const auto gt = c.gt_size();
  if (gt == 0) return std::nullopt;
  return std::max(-1.0, double(c.tp - c.fn - c.fp) / double(gt));
}

bool detect_pair(const Image& mask_p, const Image& mask_d, double threshold) {
  const auto any = [threshold](const Image& m) {
    return std::any_of(m.data.begin(), m.data.end(), [threshold](float v) { return v >= threshold; });
  };
  return any(mask_p) || any(mask_d);
}

PairScore score_pair(const PairInput& in, double threshold) {
  PairScore s;
  s.id = in.id;
  s.positive = in.positive;
  s.detected = detect_pair(in.pred_p, in.pred_d, threshold);
  if (!in.positive) return s;
  const auto cp = confusion(binarize(in.pred_p, threshold), in.gt_p);
  const auto cd = confusion(binarize(in.pred_d, threshold), in.gt_d);
  s.iou_p = iou(cp);
  s.iou_d = iou(cd);
  s.mcc_p = mcc(cp);
  s.mcc_d = mcc(cd);
  s.nmm_p = nmm(cp);
  s.nmm_d = nmm(cd);
  s.nmm_excluded = !s.nmm_p || !s.nmm_d;
  return s;
}

MetricReport aggregate(std::vector<PairScore> scores) {
  MetricReport r;
  r.pairs = std::move(scores);
  double iou_sum = 0, mcc_sum = 0, nmm_sum = 0;
  for (const auto& s : r.pairs) {
    auto& d = r.detection;
    if (s.positive) (s.detected ? d.tp : d.fn)++;
    else (s.detected ? d.fp : d.tn)++;
    if (!s.positive) continue;
    ++r.localized_pairs;
    iou_sum += *s.iou_p + *s.iou_d;
    mcc_sum += *s.mcc_p + *s.mcc_d;
    for (const auto& v : {s.nmm_p, s.nmm_d}) {
      if (v) {
        nmm_sum += *v;
        ++r.nmm_masks;
      }
    }
  }
  if (r.localized_pairs > 0) {
    r.mean_iou = iou_sum / double(2 * r.localized_pairs);
    r.mean_mcc = mcc_sum / double(2 * r.localized_pairs);
  }
  if (r.nmm_masks > 0) r.mean_nmm = nmm_sum / double(r.nmm_masks);

  const auto& d = r.detection;
  r.precision_undefined = d.tp + d.fp == 0;
  r.recall_undefined = d.tp + d.fn == 0;
  r.precision = r.precision_undefined ? 0.0 : double(d.tp) / double(d.tp + d.fp);
  r.recall = r.recall_undefined ? 0.0 : double(d.tp) / double(d.tp + d.fn);
  r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  const auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw DataError(e);
  }
}

}  // namespace

MetricReport score_pairs(const std::vector<PairInput>& inputs, double threshold, int workers) {
  std::vector<PairScore> scores(inputs.size());
  parallel_for(inputs.size(), workers, [&](std::size_t i) { scores[i] = score_pair(inputs[i], threshold); });
  return aggregate(std::move(scores));
}

MetricReport score_dataset(const fs::path& predictions, const fs::path& manifest, double threshold, int workers) {
  const auto records = load_manifest(manifest);
  const auto base = manifest.parent_path();
  for (const auto& r : records) {
    for (const char* suffix : {"_mask_p.pgm", "_mask_d.pgm"}) {
      const auto f = predictions / (r.id + suffix);
      if (!fs::exists(f)) throw DataError("record " + r.id + ": missing prediction " + f.string());
    }
  }
  std::vector<PairScore> scores(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) {
    const auto& r = records[i];
    PairInput in;
    in.id = r.id;
    in.positive = r.label == PairLabel::positive;
    in.pred_p = read_pnm(predictions / (r.id + "_mask_p.pgm"));
    in.pred_d = read_pnm(predictions / (r.id + "_mask_d.pgm"));
    in.gt_p = read_pnm(base / r.mask_p);
    in.gt_d = read_pnm(base / r.mask_d);
    scores[i] = score_pair(in, threshold);
  });
  return aggregate(std::move(scores));
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void write_report_jsonl(const MetricReport& r, std::ostream& out) {
  for (const auto& s : r.pairs) {
    json j;
    j["id"] = s.id;
    j["label"] = s.positive ? "positive" : "negative";
    j["detected"] = s.detected;
    j["iou_p"] = opt(s.iou_p);
    j["iou_d"] = opt(s.iou_d);
    j["mcc_p"] = opt(s.mcc_p);
    j["mcc_d"] = opt(s.mcc_d);
    j["nmm_p"] = opt(s.nmm_p);
    j["nmm_d"] = opt(s.nmm_d);
    if (s.nmm_excluded) j["nmm_excluded"] = true;
    out << j.dump() << '\n';
  }
  json sum;
  sum["localized_pairs"] = r.localized_pairs;
  if (r.localized_pairs > 0) {
    sum["iou"] = r.mean_iou;
    sum["mcc"] = r.mean_mcc;
  } else {
    sum["iou"] = nullptr;
    sum["mcc"] = nullptr;
  }
  sum["nmm"] = r.nmm_masks > 0 ? json(r.mean_nmm) : json(nullptr);
  sum["nmm_masks"] = r.nmm_masks;
  const auto& d = r.detection;
  sum["detection"] = json{{"tp", d.tp}, {"fp", d.fp}, {"fn", d.fn}, {"tn", d.tn}};
  sum["precision"] = r.precision;
  sum["recall"] = r.recall;
  sum["f1"] = r.f1;
  sum["precision_undefined"] = r.precision_undefined;
  sum["recall_undefined"] = r.recall_undefined;
  out << json{{"summary", sum}}.dump() << '\n';
}

void write_report_table(const MetricReport& r, std::ostream& out, bool per_pair) {
  char line[160];
  const auto fmt = [&](const std::optional<double>& v) {
    static thread_local char buf[4][16];
    static thread_local int k = 0;
    char* b = buf[k++ % 4];
    if (v) std::snprintf(b, 16, "%8.4f", *v);
    else std::snprintf(b, 16, "%8s", "-");
    return b;
  };
  std::snprintf(line, sizeof line, "%-14s %-8s %-4s %8s %8s %8s %8s\n", "pair", "label", "det", "iou_p", "iou_d",
                "mcc_p", "mcc_d");
  if (per_pair) out << line;
  for (const auto& s : r.pairs) {
    if (!per_pair) break;
    std::snprintf(line, sizeof line, "%-14s %-8s %-4s %s %s ", s.id.c_str(), s.positive ? "pos" : "neg",
                  s.detected ? "yes" : "no", fmt(s.iou_p), fmt(s.iou_d));
    out << line;
    std::snprintf(line, sizeof line, "%s %s\n", fmt(s.mcc_p), fmt(s.mcc_d));
    out << line;
  }
  if (per_pair) out << '\n';
  if (r.localized_pairs > 0) {
    std::snprintf(line, sizeof line, "localization over %lld positive pairs (both masks): IoU %.4f  MCC %.4f  NMM %s\n",
                  static_cast<long long>(r.localized_pairs), r.mean_iou, r.mean_mcc,
                  r.nmm_masks > 0 ? fmt(r.mean_nmm) : "undefined");
    out << line;
  } else {
    out << "localization: no positive pairs\n";
  }
  const auto& d = r.detection;
  std::snprintf(line, sizeof line, "detection: TP %lld  FP %lld  FN %lld  TN %lld\n", static_cast<long long>(d.tp),
                static_cast<long long>(d.fp), static_cast<long long>(d.fn), static_cast<long long>(d.tn));
  out << line;
  std::snprintf(line, sizeof line, "precision %.4f%s  recall %.4f%s  F1 %.4f\n", r.precision,
                r.precision_undefined ? " (undefined: nothing predicted positive)" : "", r.recall,
                r.recall_undefined ? " (undefined: no positive pairs)" : "", r.f1);
  out << line;
}

}  // namespace mstaf
