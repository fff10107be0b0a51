#include <cstring>
#include <fstream>
#include <iterator>

#include "criteria.hpp"
#include "doctest.h"
#include "mstaf/checkpoint.hpp"
#include "mstaf/error.hpp"
#include "mstaf/rng.hpp"

using namespace mstaf;
namespace fs = std::filesystem;

namespace {

// Parameter count of a unified multi-scale model, written out per layer.
std::int64_t count_by_hand(const ModelConfig& cfg) {
  std::int64_t n = 0, cin = 3;
  for (int s = 0; s < 3; ++s) {
    const std::int64_t c = cfg.widths[s], h = c / 2, r = cfg.ffn_ratio, k = s == 0 ? 7 : 3;
    n += c * cin * k * k + c + 2 * c;  // conv, bias, norm
    std::int64_t block = 2 * c;        // pre-norm
    for (const auto& b : cfg.multiscale_branches.branches) block += h * c * b.kernel * b.kernel + h;
    block += 3 * h * h;
    block += c * r * c + r * c + r * c * 9 + r * c + r * c * c + c;  // Mix-FFN
    n += block * cfg.depths[s];
    cin = c;
  }
  for (int w : cfg.decoder_widths) {
    n += std::int64_t(w) * cin * 9 + w;
    cin = w;
  }
  return n + cin + 1;
}

Tensor<float> images(std::uint64_t seed, std::int64_t b, int r) {
  Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(b * 3 * r * r));
  for (auto& x : v) x = float(rng.uniform());
  return Tensor<float>::from_data({b, 3, r, r}, std::move(v));
}

template <typename T>
bool same_bytes(const ParamStore<T>& a, const ParamStore<T>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& [na, ta] = a.entries()[i];
    const auto& [nb, tb] = b.entries()[i];
    if (na != nb || ta.shape() != tb.shape() ||
        std::memcmp(ta.data().data(), tb.data().data(), ta.data().size_bytes()) != 0)
      return false;
  }
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

std::string load_error(const fs::path& p) {
  try {
    load_checkpoint<float>(p);
  } catch (const LoadError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("presets and parameter counts") {
    const auto toy = ModelConfig::toy();
    CHECK(toy.resolution == 64);
    CHECK(toy.depths == std::array<int, 3>{1, 1, 1});
    CHECK(toy.widths == std::array<int, 3>{16, 32, 64});
    const auto paper = ModelConfig::paper();
    CHECK(paper.resolution == 256);
    CHECK(paper.depths == std::array<int, 3>{3, 4, 6});
    CHECK(paper.widths == std::array<int, 3>{64, 128, 256});
    CHECK(init_params<float>(toy, 0).parameter_count() == 364537);
    CHECK(count_by_hand(toy) == 364537);
    CHECK(init_params<float>(paper, 0).parameter_count() == count_by_hand(paper));
    CHECK_THROWS_AS(ModelConfig::preset("huge"), ConfigError);
  }

  TEST_CASE("config invariants") {
    auto c = ModelConfig::toy();
    c.widths[1] = 33;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig::toy();
    c.depths[0] = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig::toy();
    c.resolution = 72;
    CHECK_THROWS_AS(init_params<float>(c, 0), ConfigError);
    c = ModelConfig::toy();
    c.multiscale = false;
    c.pipeline = PipelineMode::separate;
    c.softmax_scale = SoftmaxScale::sqrt_half_c;
    const auto kv = c.to_kv();
    CHECK(ModelConfig::from_kv(kv) == c);
  }

  TEST_CASE("init is deterministic in the seed") {
    const auto cfg = ModelConfig::toy();
    CHECK(same_bytes(init_params<float>(cfg, 3), init_params<float>(cfg, 3)));
    CHECK_FALSE(same_bytes(init_params<float>(cfg, 3), init_params<float>(cfg, 4)));
    const auto p = init_params<float>(cfg, 3);
    for (const auto& [name, t] : p.entries()) {
      for (float v : t.data()) {
        INFO(name);
        CHECK(std::abs(v) <= (name.find("gamma") != std::string::npos ? 1.0f : 0.04f));
      }
    }
  }

  TEST_CASE("shape chain") {
    const auto o = criteria::shape_chain();
    INFO(o.detail);
    CHECK(o.pass);
    const auto grids = ModelConfig::paper().stage_grids();
    CHECK(grids == std::array<std::int64_t, 3>{64, 32, 16});
    CHECK(ModelConfig::toy().stage_grids() == std::array<std::int64_t, 3>{16, 8, 4});
  }

  TEST_CASE("forward is deterministic and checks its inputs") {
    const auto cfg = ModelConfig::toy();
    auto params = init_params<float>(cfg, 1);
    criteria::randomize(params, 2);
    const auto a = images(1, 2, 64), b = images(2, 2, 64);
    NoGradGuard no_grad;
    const auto x = forward(a, b, params, cfg), y = forward(a, b, params, cfg);
    CHECK(std::memcmp(x.mask_p.data().data(), y.mask_p.data().data(), x.mask_p.data().size_bytes()) == 0);
    for (float v : x.mask_p.data()) CHECK((v > 0.0f && v < 1.0f));
    CHECK_THROWS_AS(forward(images(3, 2, 32), images(4, 2, 32), params, cfg), DimensionError);
    CHECK_THROWS_AS(forward(a, images(4, 1, 64), params, cfg), DimensionError);
  }

  TEST_CASE("swap symmetry") {
    const auto o = criteria::swap_symmetry(10);
    INFO(o.detail);
    CHECK(o.pass);
  }

  TEST_CASE("separate pipeline schedule") {
    auto cfg = ModelConfig::paper();
    cfg.pipeline = PipelineMode::separate;
    int cross = 0;
    for (int s = 1; s <= 3; ++s)
      for (int b = 1; b <= cfg.depths[s - 1]; ++b) {
        const auto m = cfg.block_mode(s, b);
        CHECK(m != BlockMode::unified);
        cross += m == BlockMode::cross_only;
      }
    CHECK(cross == 1);
    CHECK(cfg.block_mode(3, 6) == BlockMode::cross_only);
    CHECK(ModelConfig::paper().block_mode(2, 3) == BlockMode::unified);
  }

  TEST_CASE("attention hook sees every head") {
    const auto cfg = ModelConfig::toy();
    const auto params = init_params<float>(cfg, 0);
    int records = 0;
    bool rows_ok = true;
    const AttentionHook<float> hook = [&](const AttentionRecord<float>& r) {
      ++records;
      const auto n = r.weights.dim(1), k = r.weights.dim(2);
      for (std::int64_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::int64_t j = 0; j < k; ++j) s += r.weights.at({0, i, j});
        rows_ok = rows_ok && std::abs(s - 1.0) < 1e-5;
      }
    };
    NoGradGuard no_grad;
    forward(images(5, 1, 64), images(6, 1, 64), params, cfg, &hook);
    CHECK(records == 3 * 2 * 2);  // stages x sides x heads
    CHECK(rows_ok);
  }

  TEST_CASE("checkpoint round trip and validation") {
    criteria::TempDir dir("ckpt");
    auto cfg = ModelConfig::toy();
    cfg.seed = 12;
    auto params = init_params<float>(cfg, 12);
    criteria::randomize(params, 13);
    const auto path = dir.path / "model.bin";
    save_checkpoint(params, cfg, path);

    const auto [loaded, loaded_cfg] = load_checkpoint<float>(path);
    CHECK(loaded_cfg == cfg);
    CHECK(same_bytes(params, loaded));
    CHECK(read_checkpoint_config(path) == cfg);
    const auto a = images(7, 1, 64), b = images(8, 1, 64);
    {
      NoGradGuard no_grad;
      const auto x = forward(a, b, params, cfg), y = forward(a, b, loaded, loaded_cfg);
      CHECK(std::memcmp(x.mask_d.data().data(), y.mask_d.data().data(), x.mask_d.data().size_bytes()) == 0);
    }

    const std::string bytes = slurp(path);
    SUBCASE("tampered shape names the tensor") {
      // Header: magic, version, config text, tensor count; then the first tensor.
      std::uint32_t cfg_len;
      std::memcpy(&cfg_len, bytes.data() + 12, 4);
      std::size_t pos = 16 + cfg_len + 4;
      std::uint32_t name_len;
      std::memcpy(&name_len, bytes.data() + pos, 4);
      const std::string name = bytes.substr(pos + 4, name_len);
      pos += 4 + name_len + 1 + 4;  // name, dtype, ndim
      std::string bad = bytes;
      std::uint64_t dim0;
      std::memcpy(&dim0, bad.data() + pos, 8);
      ++dim0;
      std::memcpy(bad.data() + pos, &dim0, 8);
      spit(path, bad);
      const auto msg = load_error(path);
      CHECK(name == "stage1.embed.conv.weight");
      CHECK(msg.find(name) != std::string::npos);
    }
    SUBCASE("version mismatch") {
      std::string bad = bytes;
      bad[8] = 9;
      spit(path, bad);
      CHECK(load_error(path).find("version") != std::string::npos);
    }
    SUBCASE("truncated file") {
      spit(path, bytes.substr(0, bytes.size() / 2));
      CHECK_FALSE(load_error(path).empty());
    }
    SUBCASE("bad magic") {
      spit(path, "NOTACKPT" + bytes.substr(8));
      CHECK_FALSE(load_error(path).empty());
    }
    SUBCASE("missing file") { CHECK_FALSE(load_error(dir.path / "absent.bin").empty()); }
  }

  TEST_CASE("f64 checkpoints load as f64") {
    criteria::TempDir dir("ckpt64");
    const auto cfg = ModelConfig::toy();
    const auto params = init_params<double>(cfg, 3);
    save_checkpoint(params, cfg, dir.path / "m.bin");
    CHECK(same_bytes(params, load_checkpoint<double>(dir.path / "m.bin").first));
  }
}
