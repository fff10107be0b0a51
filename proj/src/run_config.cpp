#include "mstaf/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <set>

#include "mstaf/error.hpp"

namespace mstaf {

namespace {

std::string num(double v) {
  // Shortest text that parses back to the same double.
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

const char* flag(bool v) { return v ? "true" : "false"; }

}  // namespace

KeyValues RunConfig::to_kv() const {
  KeyValues kv;
  kv.set("preset", preset);
  kv.set("seed", std::to_string(seed));
  kv.set("workers", std::to_string(workers));
  kv.set("out", out);
  const KeyValues model_kv = model.to_kv();
  for (const auto& [k, v] : model_kv.items()) kv.set("model." + k, v);

  kv.set("data.sources", data.sources);
  kv.set("data.synthetic_sources", std::to_string(data.synthetic_sources));
  kv.set("data.corpus", data.corpus);
  kv.set("data.pairs", std::to_string(data.pairs));
  kv.set("data.negatives", std::to_string(data.negatives));
  kv.set("data.balanced", flag(data.balanced));
  kv.set("data.rotation_deg", num(data.ranges.rotation_deg));
  kv.set("data.scale_min", num(data.ranges.scale_min));
  kv.set("data.scale_max", num(data.ranges.scale_max));
  kv.set("data.luminance_min", num(data.ranges.luminance_min));
  kv.set("data.luminance_max", num(data.ranges.luminance_max));
  kv.set("data.deform_magnitude", num(data.ranges.deform_magnitude));
  kv.set("data.deform_grid", std::to_string(data.ranges.deform_grid));
  kv.set("data.max_retries", std::to_string(data.max_retries));

  kv.set("train.steps", std::to_string(train.steps));
  kv.set("train.batch_size", std::to_string(train.batch_size));
  kv.set("train.lr", num(train.lr));
  kv.set("train.checkpoint_every", std::to_string(train.checkpoint_every));

  kv.set("eval.threshold", num(eval.threshold));
  kv.set("eval.batch_size", std::to_string(eval.batch_size));
  return kv;
}

RunConfig RunConfig::resolve(const std::vector<KeyValues>& layers) {
  KeyValues merged;
  for (const auto& l : layers) merged.merge(l);

  RunConfig rc;
  rc.preset = merged.get("preset", rc.preset);
  rc.model = ModelConfig::preset(rc.preset);

  // Defaults of the chosen preset define the accepted key set.
  std::set<std::string> known;
  const KeyValues defaults = rc.to_kv();
  for (const auto& [k, _] : defaults.items()) known.insert(k);
  for (const auto& [k, _] : merged.items()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

  rc.seed = static_cast<std::uint64_t>(merged.get_int("seed", 0));
  rc.workers = static_cast<int>(merged.get_int("workers", rc.workers));
  rc.out = merged.get("out", rc.out);

  KeyValues model_kv;
  for (const auto& [k, v] : merged.items()) {
    if (k.rfind("model.", 0) == 0) model_kv.set(k.substr(6), v);
  }
  // The run seed drives initialization unless the model seed is pinned.
  if (!model_kv.has("seed")) model_kv.set("seed", std::to_string(rc.seed));
  rc.model = ModelConfig::from_kv(model_kv, rc.model);

  auto& d = rc.data;
  d.sources = merged.get("data.sources", d.sources);
  d.synthetic_sources = static_cast<int>(merged.get_int("data.synthetic_sources", d.synthetic_sources));
  d.corpus = merged.get("data.corpus", d.corpus);
  d.pairs = static_cast<int>(merged.get_int("data.pairs", d.pairs));
  d.negatives = static_cast<int>(merged.get_int("data.negatives", d.negatives));
  d.balanced = merged.get_bool("data.balanced", d.balanced);
  d.ranges.rotation_deg = merged.get_double("data.rotation_deg", d.ranges.rotation_deg);
  d.ranges.scale_min = merged.get_double("data.scale_min", d.ranges.scale_min);
  d.ranges.scale_max = merged.get_double("data.scale_max", d.ranges.scale_max);
  d.ranges.luminance_min = merged.get_double("data.luminance_min", d.ranges.luminance_min);
  d.ranges.luminance_max = merged.get_double("data.luminance_max", d.ranges.luminance_max);
  d.ranges.deform_magnitude = merged.get_double("data.deform_magnitude", d.ranges.deform_magnitude);
  d.ranges.deform_grid = static_cast<int>(merged.get_int("data.deform_grid", d.ranges.deform_grid));
  d.max_retries = static_cast<int>(merged.get_int("data.max_retries", d.max_retries));

  auto& t = rc.train;
  t.steps = static_cast<int>(merged.get_int("train.steps", t.steps));
  t.batch_size = static_cast<int>(merged.get_int("train.batch_size", t.batch_size));
  t.lr = merged.get_double("train.lr", t.lr);
  t.checkpoint_every = static_cast<int>(merged.get_int("train.checkpoint_every", t.checkpoint_every));

  rc.eval.threshold = merged.get_double("eval.threshold", rc.eval.threshold);
  rc.eval.batch_size = static_cast<int>(merged.get_int("eval.batch_size", rc.eval.batch_size));

  rc.validate();
  return rc;
}

void RunConfig::validate() const {
  model.validate();
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (data.synthetic_sources < 2 && data.sources.empty()) throw ConfigError("data.synthetic_sources must be >= 2");
  if (data.pairs < 0 || data.negatives < 0) throw ConfigError("data.pairs and data.negatives must be >= 0");
  const auto& r = data.ranges;
  if (!(r.scale_min > 0) || r.scale_max < r.scale_min) throw ConfigError("need 0 < data.scale_min <= data.scale_max");
  if (r.luminance_min < 0 || r.luminance_max < r.luminance_min) throw ConfigError("bad luminance range");
  if (r.rotation_deg < 0 || r.deform_magnitude < 0) throw ConfigError("rotation and deformation must be >= 0");
  if (r.deform_grid < 2) throw ConfigError("data.deform_grid must be >= 2");
  if (data.max_retries < 1) throw ConfigError("data.max_retries must be >= 1");
  if (train.steps < 0 || train.batch_size < 1 || !(train.lr > 0)) throw ConfigError("bad train.* settings");
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (!(eval.threshold > 0 && eval.threshold <= 1) || eval.batch_size < 1) throw ConfigError("bad eval.* settings");
}

}  // namespace mstaf
