#pragma once
// Fully resolved settings for one CLI run. Precedence, lowest first:
// preset defaults, config file, command-line flags and --set overrides.
//
// Keys: preset, seed, workers, out; model.<key> for every ModelConfig key;
// data.*, train.* and eval.* as listed in RunConfig::to_kv. Unknown keys are
// a ConfigError so typos do not silently fall back to defaults.

#include <cstdint>
#include <string>

#include "mstaf/config.hpp"
#include "mstaf/datagen.hpp"
#include "mstaf/model.hpp"

namespace mstaf {

struct DataSection {
  std::string sources;  // source directory; empty -> synthetic sources
  int synthetic_sources = 6;
  std::string corpus;  // directory holding manifest.jsonl
  int pairs = 60;
  int negatives = 0;
  bool balanced = true;
  TransformRanges ranges;
  int max_retries = 50;
};

struct TrainSection {
  int steps = 500;
  int batch_size = 4;
  double lr = 1e-4;
  int checkpoint_every = 100;
};

struct EvalSection {
  double threshold = 0.5;
  int batch_size = 8;
};

struct RunConfig {
  std::string preset = "toy";
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out = "run";
  ModelConfig model = ModelConfig::toy();
  DataSection data;
  TrainSection train;
  EvalSection eval;

  // `layers` are applied in order; later layers win.
  static RunConfig resolve(const std::vector<KeyValues>& layers);
  KeyValues to_kv() const;
  void validate() const;
};

}  // namespace mstaf
