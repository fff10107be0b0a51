#pragma once
// The full dual-image network: three stages of (patch embedding + stacked
// target-aware attention blocks) followed by one decoder shared by both images.

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "mstaf/block.hpp"
#include "mstaf/config.hpp"
#include "mstaf/decoder.hpp"
#include "mstaf/params.hpp"

namespace mstaf {

enum class PipelineMode {
  unified,   // every block runs one self head and one cross head
  separate,  // self-only blocks, then a single cross-only final block
};

struct ModelConfig {
  int resolution = 64;
  std::array<int, 3> depths{1, 1, 1};
  std::array<int, 3> widths{16, 32, 64};
  bool multiscale = true;
  PipelineMode pipeline = PipelineMode::unified;
  SoftmaxScale softmax_scale = SoftmaxScale::sqrt_c;
  bool pre_norm = true;
  int ffn_ratio = 4;
  std::uint64_t seed = 0;
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.5, 0.5, 0.5};
  MultiScaleConfig multiscale_branches;
  std::vector<int> decoder_widths{128, 64, 32, 16};

  // 64x64 input, depths [1,1,1], widths [16,32,64].
  static ModelConfig toy();
  // 256x256 input, depths [3,4,6], widths [64,128,256].
  static ModelConfig paper();
  // "toy" or "paper"; throws ConfigError otherwise.
  static ModelConfig preset(const std::string& name);

  // Throws ConfigError naming the first violated invariant.
  void validate() const;

  // Token grid side after each stage.
  std::array<std::int64_t, 3> stage_grids() const;
  BlockMode block_mode(int stage, int block) const;

  // Round-trips through to_kv/from_kv exactly.
  KeyValues to_kv() const;
  // Keys absent from `kv` keep the values of `base`.
  static ModelConfig from_kv(const KeyValues& kv, const ModelConfig& base = toy());

  bool operator==(const ModelConfig& other) const;
};

// Deterministic init: conv/linear weights ~ truncated normal (std 0.02,
// cut at 2 std), norms gamma=1 beta=0, biases 0.
template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
struct AttentionRecord {
  int stage;  // 1-based
  int block;  // 1-based within the stage
  Side side;
  HeadKind head;
  int slot;  // 0: first C/2 channels of the concat, 1: last C/2
  Tensor<T> weights;  // [B, Nq, Nk]
  std::pair<std::int64_t, std::int64_t> query_grid;
  std::vector<std::pair<std::int64_t, std::int64_t>> key_grids;
};

template <typename T>
using AttentionHook = std::function<void(const AttentionRecord<T>&)>;

template <typename T>
struct ModelOutput {
  Tensor<T> mask_p;  // [B, 1, H, W]
  Tensor<T> mask_d;
  std::array<std::pair<std::int64_t, std::int64_t>, 3> stage_grids;
  std::array<std::int64_t, 3> stage_tokens;
};

// images: [B, 3, H, W] with values in [0, 1]; normalized internally with the
// configured per-channel mean/std.
template <typename T>
ModelOutput<T> forward(const Tensor<T>& probe, const Tensor<T>& donor, const ParamStore<T>& params,
                       const ModelConfig& cfg, const AttentionHook<T>* hook = nullptr);

// Per-module views onto a parameter store.
template <typename T>
PatchEmbedParams<T> embed_params(const ParamStore<T>& params, int stage);
template <typename T>
TaaParams<T> block_params(const ParamStore<T>& params, const ModelConfig& cfg, int stage, int block);
template <typename T>
DecoderParams<T> decoder_params(const ParamStore<T>& params, const ModelConfig& cfg);

BlockOptions block_options(const ModelConfig& cfg, int stage, int block);


}  // namespace mstaf
