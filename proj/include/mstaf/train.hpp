#pragma once
// Minibatch Adam training on splice pairs, batched inference and in-memory
// evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "mstaf/datagen.hpp"
#include "mstaf/metrics.hpp"
#include "mstaf/model.hpp"

namespace mstaf {

template <typename T>
struct PairBatch {
  Tensor<T> probe;   // [B, 3, R, R]
  Tensor<T> donor;
  Tensor<T> mask_p;  // [B, 1, R, R]
  Tensor<T> mask_d;
};

// Images are resized to `resolution` (bilinear, masks nearest) when needed.
template <typename T>
PairBatch<T> make_batch(const std::vector<const SplicePair*>& pairs, int resolution);

template <typename T>
Tensor<T> image_tensor(const std::vector<const Image*>& images, int resolution);

// Batch item `b` of a [B, 1, H, W] tensor.
template <typename T>
Image mask_image(const Tensor<T>& masks, std::int64_t b);

struct StepLog {
  int step = 0;  // 0-based
  int epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  int steps = 500;
  int batch_size = 4;
  double lr = 1e-4;
  std::uint64_t seed = 0;  // shuffling
  int checkpoint_every = 0;  // 0: final checkpoint only
  // When set: loss.jsonl, checkpoints and a NaN dump are written here.
  std::filesystem::path run_dir;
  std::function<void(const StepLog&)> on_step;
  // Return true to stop early, checked after every step.
  std::function<bool(const StepLog&)> should_stop;
};

struct TrainResult {
  std::vector<StepLog> log;
  std::filesystem::path final_checkpoint;
};

// Minimizes the mean of the two masks' BCE. Throws NumericError on a
// non-finite loss or gradient, after writing nan_dump.json to run_dir.
template <typename T>
TrainResult train(ParamStore<T>& params, const ModelConfig& cfg, const std::vector<SplicePair>& data,
                  const TrainOptions& opts);

template <typename T>
struct MaskPair {
  Image mask_p;
  Image mask_d;
};

// Batches are spread over `workers` threads; results keep input order.
template <typename T>
std::vector<MaskPair<T>> predict(const ParamStore<T>& params, const ModelConfig& cfg,
                                 const std::vector<const SplicePair*>& pairs, int batch_size = 8, int workers = 1);

// Predicts every pair and scores it against its own masks.
template <typename T>
MetricReport evaluate(const ParamStore<T>& params, const ModelConfig& cfg, const std::vector<SplicePair>& data,
                      int batch_size = 8);

// Mean BCE over `data` without recording a graph.
template <typename T>
double mean_loss(const ParamStore<T>& params, const ModelConfig& cfg, const std::vector<SplicePair>& data,
                 int batch_size = 8);

}  // namespace mstaf
