#pragma once
// Pixel-level localization metrics and the image-pair detection rule.
//
// Conventions: binarize sends values >= threshold to 1; IoU of two empty
// masks is 1; MCC with any zero factor in its denominator is 0; NMM follows
// the MFC evaluation definition max(-1, (TP - FN - FP) / |GT|) and is
// undefined for an empty ground truth.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mstaf/image.hpp"

namespace mstaf {

inline constexpr double kDefaultThreshold = 0.5;

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  std::int64_t gt_size() const { return tp + fn; }
};

Image binarize(const Image& mask, double threshold = kDefaultThreshold);

// Both inputs binary and the same size; DimensionError otherwise.
ConfusionCounts confusion(const Image& pred, const Image& gt);

double iou(const ConfusionCounts& c);
double iou(const Image& pred, const Image& gt);
double mcc(const ConfusionCounts& c);
// nullopt when the ground truth is empty.
std::optional<double> nmm(const ConfusionCounts& c);

bool detect_pair(const Image& mask_p, const Image& mask_d, double threshold = kDefaultThreshold);

struct PairInput {
  std::string id;
  bool positive = true;
  Image pred_p;  // probabilities in [0, 1]
  Image pred_d;
  Image gt_p;    // binary
  Image gt_d;
};

struct PairScore {
  std::string id;
  bool positive = true;
  bool detected = false;
  // Filled for positive pairs only.
  std::optional<double> iou_p, iou_d, mcc_p, mcc_d, nmm_p, nmm_d;
  bool nmm_excluded = false;  // an empty ground-truth mask made NMM undefined
};

struct DetectionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct MetricReport {
  std::vector<PairScore> pairs;  // input order

  // Means over both masks of every positive pair.
  std::int64_t localized_pairs = 0;
  double mean_iou = 0.0;
  double mean_mcc = 0.0;
  double mean_nmm = 0.0;
  std::int64_t nmm_masks = 0;  // masks that entered mean_nmm

  DetectionCounts detection;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  // no pair predicted positive; reported as 0
  bool recall_undefined = false;     // no positive pair in the set; reported as 0
};

PairScore score_pair(const PairInput& input, double threshold = kDefaultThreshold);
// Folds per-pair scores in order.
MetricReport aggregate(std::vector<PairScore> scores);
MetricReport score_pairs(const std::vector<PairInput>& inputs, double threshold = kDefaultThreshold, int workers = 1);

// Predictions are <id>_mask_p.pgm and <id>_mask_d.pgm inside `predictions`.
// A missing file is a DataError naming the record.
MetricReport score_dataset(const std::filesystem::path& predictions, const std::filesystem::path& manifest,
                           double threshold = kDefaultThreshold, int workers = 1);

// One JSON object per pair, then one {"summary": ...} line.
void write_report_jsonl(const MetricReport& report, std::ostream& out);
void write_report_table(const MetricReport& report, std::ostream& out, bool per_pair = true);

}  // namespace mstaf
