#include "mstaf/model.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "mstaf/error.hpp"
#include "mstaf/ops.hpp"
#include "mstaf/rng.hpp"

namespace mstaf {
namespace {

std::string fmt_double(double v) {
  // Shortest text that parses back to the same double.
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

template <typename C>
std::string join(const C& items) {
  std::ostringstream os;
  bool first = true;
  for (const auto& v : items) {
    os << (first ? "" : ",");
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>)
      os << fmt_double(v);
    else
      os << v;
    first = false;
  }
  return os.str();
}

std::string stage_prefix(int stage) { return "stage" + std::to_string(stage); }
std::string block_prefix(int stage, int block) {
  return stage_prefix(stage) + ".block" + std::to_string(block);
}

}  // namespace

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig cfg;
  cfg.resolution = 256;
  cfg.depths = {3, 4, 6};
  cfg.widths = {64, 128, 256};
  return cfg;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "paper") return paper();
  throw ConfigError("unknown preset '" + name + "' (expected toy or paper)");
}

std::array<std::int64_t, 3> ModelConfig::stage_grids() const {
  std::array<std::int64_t, 3> grids{};
  std::int64_t side = resolution;
  int in_ch = 3;
  for (int s = 1; s <= 3; ++s) {
    const auto pe = PatchEmbedConfig::for_stage(s, in_ch, widths[s - 1]);
    side = pe.output_grid(side, side).first;
    grids[s - 1] = side;
    in_ch = widths[s - 1];
  }
  return grids;
}

void ModelConfig::validate() const {
  if (resolution < 16 || resolution % 16 != 0)
    throw ConfigError("model config: resolution must be a positive multiple of 16 (got " +
                      std::to_string(resolution) + ")");
  for (int s = 0; s < 3; ++s) {
    if (depths[s] < 1) throw ConfigError("model config: stage depths must be positive");
    if (widths[s] < 2 || widths[s] % 2 != 0)
      throw ConfigError("model config: stage widths must be positive and even (heads are C/2)");
  }
  if (ffn_ratio < 1) throw ConfigError("model config: ffn_ratio must be >= 1");
  for (int c = 0; c < 3; ++c)
    if (!(norm_std[c] > 0)) throw ConfigError("model config: norm_std must be positive");
  const auto grids = stage_grids();
  if (grids[2] * 16 != resolution)
    throw ConfigError("model config: stage grids do not reach resolution/16");
  for (auto w : decoder_widths)
    if (w < 1) throw ConfigError("model config: decoder widths must be positive");
  const int levels = decoder_levels(grids[2], resolution);
  if (static_cast<int>(decoder_widths.size()) != levels)
    throw ConfigError("model config: decoder needs " + std::to_string(levels) + " widths, got " +
                      std::to_string(decoder_widths.size()));
  if (multiscale)
    for (auto g : grids) multiscale_branches.validate_for_grid(g, g);
}

BlockMode ModelConfig::block_mode(int stage, int block) const {
  if (pipeline == PipelineMode::unified) return BlockMode::unified;
  const bool last = stage == 3 && block == depths[2];
  return last ? BlockMode::cross_only : BlockMode::self_only;
}

KeyValues ModelConfig::to_kv() const {
  KeyValues kv;
  kv.set("resolution", std::to_string(resolution));
  kv.set("depths", join(depths));
  kv.set("widths", join(widths));
  kv.set("multiscale", multiscale ? "true" : "false");
  kv.set("pipeline", pipeline == PipelineMode::unified ? "unified" : "separate");
  kv.set("softmax_scale", softmax_scale == SoftmaxScale::sqrt_c ? "sqrt_c" : "sqrt_half_c");
  kv.set("pre_norm", pre_norm ? "true" : "false");
  kv.set("ffn_ratio", std::to_string(ffn_ratio));
  kv.set("seed", std::to_string(seed));
  kv.set("norm_mean", join(norm_mean));
  kv.set("norm_std", join(norm_std));
  std::ostringstream br;
  for (int i = 0; i < 3; ++i) {
    const auto& b = multiscale_branches.branches[i];
    br << (i ? "," : "") << b.kernel << '/' << b.stride << '/' << b.padding;
  }
  kv.set("ms_branches", br.str());
  kv.set("decoder_widths", join(decoder_widths));
  return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv, const ModelConfig& base) {
  ModelConfig cfg = base;
  cfg.resolution = static_cast<int>(kv.get_int("resolution", cfg.resolution));
  auto triple = [&](const std::string& key, std::array<int, 3>& dst) {
    if (!kv.has(key)) return;
    const auto v = kv.get_ints(key, {});
    if (v.size() != 3) throw ConfigError("config key '" + key + "' needs three values");
    for (int i = 0; i < 3; ++i) dst[i] = static_cast<int>(v[i]);
  };
  triple("depths", cfg.depths);
  triple("widths", cfg.widths);
  cfg.multiscale = kv.get_bool("multiscale", cfg.multiscale);
  const auto pipeline = kv.get("pipeline", cfg.pipeline == PipelineMode::unified ? "unified" : "separate");
  if (pipeline == "unified")
    cfg.pipeline = PipelineMode::unified;
  else if (pipeline == "separate")
    cfg.pipeline = PipelineMode::separate;
  else
    throw ConfigError("config key 'pipeline': expected unified or separate, got '" + pipeline + "'");
  const auto scale = kv.get("softmax_scale", cfg.softmax_scale == SoftmaxScale::sqrt_c ? "sqrt_c" : "sqrt_half_c");
  if (scale == "sqrt_c")
    cfg.softmax_scale = SoftmaxScale::sqrt_c;
  else if (scale == "sqrt_half_c")
    cfg.softmax_scale = SoftmaxScale::sqrt_half_c;
  else
    throw ConfigError("config key 'softmax_scale': expected sqrt_c or sqrt_half_c, got '" + scale + "'");
  cfg.pre_norm = kv.get_bool("pre_norm", cfg.pre_norm);
  cfg.ffn_ratio = static_cast<int>(kv.get_int("ffn_ratio", cfg.ffn_ratio));
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(cfg.seed)));
  auto dtriple = [&](const std::string& key, std::array<double, 3>& dst) {
    if (!kv.has(key)) return;
    const auto v = kv.get_doubles(key, {});
    if (v.size() == 1)
      dst = {v[0], v[0], v[0]};
    else if (v.size() == 3)
      dst = {v[0], v[1], v[2]};
    else
      throw ConfigError("config key '" + key + "' needs one or three values");
  };
  dtriple("norm_mean", cfg.norm_mean);
  dtriple("norm_std", cfg.norm_std);
  if (kv.has("ms_branches")) {
    const auto parts = split(kv.get("ms_branches", ""), ',');
    if (parts.size() != 3) throw ConfigError("config key 'ms_branches' needs three kernel/stride/padding triples");
    for (int i = 0; i < 3; ++i) {
      const auto f = split(parts[i], '/');
      if (f.size() != 3) throw ConfigError("config key 'ms_branches': bad triple '" + parts[i] + "'");
      KeyValues tmp;
      tmp.set("k", f[0]);
      tmp.set("s", f[1]);
      tmp.set("p", f[2]);
      cfg.multiscale_branches.branches[i] = {static_cast<int>(tmp.get_int("k", 0)),
                                             static_cast<int>(tmp.get_int("s", 0)),
                                             static_cast<int>(tmp.get_int("p", 0))};
    }
  }
  if (kv.has("decoder_widths")) {
    cfg.decoder_widths.clear();
    for (auto v : kv.get_ints("decoder_widths", {})) cfg.decoder_widths.push_back(static_cast<int>(v));
  }
  return cfg;
}

bool ModelConfig::operator==(const ModelConfig& other) const { return to_kv().items() == other.to_kv().items(); }

BlockOptions block_options(const ModelConfig& cfg, int stage, int block) {
  BlockOptions opts;
  opts.mode = cfg.block_mode(stage, block);
  opts.scale = cfg.softmax_scale;
  opts.multiscale = cfg.multiscale_branches;
  return opts;
}

template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamStore<T> store;
  auto weight = [&](const std::string& name, Shape shape) {
    std::vector<T> data(static_cast<std::size_t>(numel(shape)));
    for (auto& v : data) v = static_cast<T>(rng.truncated_normal(0.02));
    store.add(name, Tensor<T>::from_data(std::move(shape), std::move(data)));
  };
  auto fill = [&](const std::string& name, Shape shape, T value) {
    store.add(name, Tensor<T>::full(std::move(shape), value));
  };

  std::int64_t in_ch = 3;
  for (int s = 1; s <= 3; ++s) {
    const std::int64_t c = cfg.widths[s - 1];
    const auto pe = PatchEmbedConfig::for_stage(s, static_cast<int>(in_ch), static_cast<int>(c));
    const auto sp = stage_prefix(s);
    weight(sp + ".embed.conv.weight", {c, in_ch, pe.kernel, pe.kernel});
    fill(sp + ".embed.conv.bias", {c}, T(0));
    fill(sp + ".embed.norm.gamma", {c}, T(1));
    fill(sp + ".embed.norm.beta", {c}, T(0));
    const std::int64_t half = c / 2, hidden = c * cfg.ffn_ratio;
    for (int b = 1; b <= cfg.depths[s - 1]; ++b) {
      const auto bp = block_prefix(s, b);
      if (cfg.pre_norm) {
        fill(bp + ".norm.gamma", {c}, T(1));
        fill(bp + ".norm.beta", {c}, T(0));
      }
      if (cfg.multiscale) {
        for (int i = 0; i < 3; ++i) {
          const auto& br = cfg.multiscale_branches.branches[i];
          const auto name = bp + ".msproj.branch" + std::to_string(i + 1);
          weight(name + ".weight", {half, c, br.kernel, br.kernel});
          fill(name + ".bias", {half}, T(0));
        }
        weight(bp + ".msproj.wq", {half, half});
        weight(bp + ".msproj.wk", {half, half});
        weight(bp + ".msproj.wv", {half, half});
      } else {
        weight(bp + ".qkv.wq", {c, half});
        weight(bp + ".qkv.wk", {c, half});
        weight(bp + ".qkv.wv", {c, half});
      }
      weight(bp + ".ffn.fc1.weight", {c, hidden});
      fill(bp + ".ffn.fc1.bias", {hidden}, T(0));
      weight(bp + ".ffn.dw.weight", {hidden, 1, 3, 3});
      fill(bp + ".ffn.dw.bias", {hidden}, T(0));
      weight(bp + ".ffn.fc2.weight", {hidden, c});
      fill(bp + ".ffn.fc2.bias", {c}, T(0));
    }
    in_ch = c;
  }
  std::int64_t prev = cfg.widths[2];
  for (std::size_t l = 0; l < cfg.decoder_widths.size(); ++l) {
    const std::int64_t out = cfg.decoder_widths[l];
    const auto name = "decoder.level" + std::to_string(l + 1) + ".conv";
    weight(name + ".weight", {out, prev, 3, 3});
    fill(name + ".bias", {out}, T(0));
    prev = out;
  }
  weight("decoder.head.weight", {1, prev, 1, 1});
  fill("decoder.head.bias", {1}, T(0));
  return store;
}

template <typename T>
PatchEmbedParams<T> embed_params(const ParamStore<T>& params, int stage) {
  const auto sp = stage_prefix(stage) + ".embed.";
  return {params.get(sp + "conv.weight"), params.get(sp + "conv.bias"), params.get(sp + "norm.gamma"),
          params.get(sp + "norm.beta")};
}

template <typename T>
TaaParams<T> block_params(const ParamStore<T>& params, const ModelConfig& cfg, int stage, int block) {
  const auto bp = block_prefix(stage, block) + ".";
  TaaParams<T> p;
  if (cfg.pre_norm) {
    p.norm_gamma = params.get(bp + "norm.gamma");
    p.norm_beta = params.get(bp + "norm.beta");
  }
  if (cfg.multiscale) {
    MultiScaleParams<T> ms;
    for (int i = 0; i < 3; ++i) {
      const auto name = bp + "msproj.branch" + std::to_string(i + 1);
      ms.conv_w[i] = params.get(name + ".weight");
      ms.conv_b[i] = params.get(name + ".bias");
    }
    ms.wq = params.get(bp + "msproj.wq");
    ms.wk = params.get(bp + "msproj.wk");
    ms.wv = params.get(bp + "msproj.wv");
    p.msproj = std::move(ms);
  } else {
    p.qkv = QkvParams<T>{params.get(bp + "qkv.wq"), params.get(bp + "qkv.wk"), params.get(bp + "qkv.wv")};
  }
  p.ffn = {params.get(bp + "ffn.fc1.weight"), params.get(bp + "ffn.fc1.bias"),
           params.get(bp + "ffn.dw.weight"),  params.get(bp + "ffn.dw.bias"),
           params.get(bp + "ffn.fc2.weight"), params.get(bp + "ffn.fc2.bias")};
  return p;
}

template <typename T>
DecoderParams<T> decoder_params(const ParamStore<T>& params, const ModelConfig& cfg) {
  DecoderParams<T> d;
  for (std::size_t l = 0; l < cfg.decoder_widths.size(); ++l) {
    const auto name = "decoder.level" + std::to_string(l + 1) + ".conv";
    d.conv_w.push_back(params.get(name + ".weight"));
    d.conv_b.push_back(params.get(name + ".bias"));
  }
  d.head_w = params.get("decoder.head.weight");
  d.head_b = params.get("decoder.head.bias");
  return d;
}

namespace {

template <typename T>
Tensor<T> normalize_image(const Tensor<T>& image, const ModelConfig& cfg) {
  const auto planes = image.dim(0) * 3;
  const auto area = image.dim(2) * image.dim(3);
  std::vector<T> out(image.values());
  for (std::int64_t p = 0; p < planes; ++p) {
    const auto c = static_cast<std::size_t>(p % 3);
    const T mu = static_cast<T>(cfg.norm_mean[c]);
    const T sd = static_cast<T>(cfg.norm_std[c]);
    for (std::int64_t i = 0; i < area; ++i) out[p * area + i] = (out[p * area + i] - mu) / sd;
  }
  return Tensor<T>::from_data(image.shape(), std::move(out));
}

}  // namespace

template <typename T>
ModelOutput<T> forward(const Tensor<T>& probe, const Tensor<T>& donor, const ParamStore<T>& params,
                       const ModelConfig& cfg, const AttentionHook<T>* hook) {
  if (probe.shape() != donor.shape())
    throw DimensionError("forward: probe " + shape_str(probe.shape()) + " and donor " + shape_str(donor.shape()) +
                         " differ");
  if (probe.ndim() != 4 || probe.dim(1) != 3 || probe.dim(2) != cfg.resolution || probe.dim(3) != cfg.resolution)
    throw DimensionError("forward: expected [B,3," + std::to_string(cfg.resolution) + "," +
                         std::to_string(cfg.resolution) + "] images, got " + shape_str(probe.shape()));

  ModelOutput<T> out;
  TokenGrid<T> fp, fd;
  int in_ch = 3;
  for (int s = 1; s <= 3; ++s) {
    const auto pe = PatchEmbedConfig::for_stage(s, in_ch, cfg.widths[s - 1]);
    const auto ep = embed_params(params, s);
    if (s == 1) {
      fp = embed(normalize_image(probe, cfg), pe, ep);
      fd = embed(normalize_image(donor, cfg), pe, ep);
    } else {
      fp = embed(fp, pe, ep);
      fd = embed(fd, pe, ep);
    }
    for (int b = 1; b <= cfg.depths[s - 1]; ++b) {
      const auto opts = block_options(cfg, s, b);
      const auto bparams = block_params(params, cfg, s, b);
      AttentionSink<T> sink;
      if (hook && *hook) {
        const auto query_grid = std::make_pair(fp.h, fp.w);
        sink = [hook, s, b, query_grid](Side side, HeadKind head, int slot, const Tensor<T>& weights,
                                        const std::vector<std::pair<std::int64_t, std::int64_t>>& key_grids) {
          (*hook)(AttentionRecord<T>{s, b, side, head, slot, weights, query_grid, key_grids});
        };
      }
      auto [np, nd] = taa_block(fp, fd, bparams, opts, hook ? &sink : nullptr);
      fp = std::move(np);
      fd = std::move(nd);
    }
    out.stage_grids[s - 1] = {fp.h, fp.w};
    out.stage_tokens[s - 1] = fp.count();
    in_ch = cfg.widths[s - 1];
  }
  const auto dp = decoder_params(params, cfg);
  out.mask_p = decode(fp, dp, cfg.resolution, cfg.resolution);
  out.mask_d = decode(fd, dp, cfg.resolution, cfg.resolution);
  return out;
}

#define MSTAF_INSTANTIATE(T)                                                                                  \
  template ParamStore<T> init_params<T>(const ModelConfig&, std::uint64_t);                                   \
  template PatchEmbedParams<T> embed_params<T>(const ParamStore<T>&, int);                                    \
  template TaaParams<T> block_params<T>(const ParamStore<T>&, const ModelConfig&, int, int);                  \
  template DecoderParams<T> decoder_params<T>(const ParamStore<T>&, const ModelConfig&);                      \
  template ModelOutput<T> forward<T>(const Tensor<T>&, const Tensor<T>&, const ParamStore<T>&, const ModelConfig&, \
                                     const AttentionHook<T>*);
MSTAF_INSTANTIATE(float)
MSTAF_INSTANTIATE(double)
#undef MSTAF_INSTANTIATE

}  // namespace mstaf
