#include <cmath>
#include <fstream>
#include <limits>

#include "criteria.hpp"
#include "doctest.h"
#include "json.hpp"
#include "mstaf/datagen.hpp"
#include "mstaf/error.hpp"
#include "mstaf/train.hpp"

using namespace mstaf;
namespace fs = std::filesystem;

namespace {

std::vector<SplicePair> small_set(int n) {
  const auto src = synthetic_sources(4, 64, 2);
  std::vector<SplicePair> out;
  Rng rng(4);
  for (int i = 0; out.size() < std::size_t(n); ++i) {
    auto spec = sample_transform(TransformRanges{}, rng);
    try {
      place_uniformly(src[i % 4], 64, 64, spec, rng);
      out.push_back(generate_pair(src[i % 4], src[(i + 1) % 4].image, spec));
    } catch (const PlacementError&) {
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("two runs with the same seed give identical loss curves") {
    const auto data = small_set(6);
    const auto cfg = ModelConfig::toy();
    TrainOptions opts;
    opts.steps = 4;
    opts.batch_size = 4;
    opts.lr = 1e-3;
    opts.seed = 3;
    auto p1 = init_params<float>(cfg, 1), p2 = init_params<float>(cfg, 1);
    const auto a = train(p1, cfg, data, opts), b = train(p2, cfg, data, opts);
    REQUIRE(a.log.size() == 4);
    for (std::size_t i = 0; i < a.log.size(); ++i) {
      CHECK(a.log[i].loss == b.log[i].loss);
      CHECK(a.log[i].grad_norm == b.log[i].grad_norm);
    }
    CHECK(a.log[0].epoch == 0);
    CHECK(a.log[1].epoch == 1);  // 6 pairs, batch 4: the second batch wraps
  }

  TEST_CASE("run directory outputs") {
    criteria::TempDir dir("train_run");
    const auto data = small_set(2);
    const auto cfg = ModelConfig::toy();
    auto p = init_params<float>(cfg, 0);
    TrainOptions opts;
    opts.steps = 2;
    opts.batch_size = 2;
    opts.checkpoint_every = 1;
    opts.run_dir = dir.path;
    int seen = 0;
    opts.on_step = [&](const StepLog&) { ++seen; };
    const auto r = train(p, cfg, data, opts);
    CHECK(seen == 2);
    CHECK(fs::exists(dir.path / "loss.jsonl"));
    CHECK(fs::exists(dir.path / "checkpoint_step1.bin"));
    CHECK(fs::exists(dir.path / "checkpoint_step2.bin"));
    CHECK(r.final_checkpoint == dir.path / "checkpoint.bin");
    std::ifstream log(dir.path / "loss.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) ++lines;
    CHECK(lines == 2);
  }

  TEST_CASE("non-finite loss aborts with a dump") {
    criteria::TempDir dir("train_nan");
    const auto data = small_set(2);
    const auto cfg = ModelConfig::toy();
    auto p = init_params<float>(cfg, 0);
    p.get("decoder.head.bias").mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    TrainOptions opts;
    opts.steps = 3;
    opts.run_dir = dir.path;
    CHECK_THROWS_AS(train(p, cfg, data, opts), NumericError);
    REQUIRE(fs::exists(dir.path / "nan_dump.json"));
    const auto dump = nlohmann::json::parse(std::ifstream(dir.path / "nan_dump.json"));
    CHECK(dump.at("step") == 0);
    CHECK(dump.at("batch").size() == 2);
  }

  TEST_CASE("prediction is independent of batching and worker count") {
    const auto data = small_set(5);
    const auto cfg = ModelConfig::toy();
    auto p = init_params<float>(cfg, 6);
    criteria::randomize(p, 7);
    std::vector<const SplicePair*> ptrs;
    for (const auto& d : data) ptrs.push_back(&d);
    const auto a = predict(p, cfg, ptrs, 5, 1), b = predict(p, cfg, ptrs, 2, 3);
    for (std::size_t i = 0; i < data.size(); ++i) {
      CHECK(a[i].mask_p.data == b[i].mask_p.data);
      CHECK(a[i].mask_d.data == b[i].mask_d.data);
    }
    const auto r1 = evaluate(p, cfg, data), r2 = evaluate(p, cfg, data);
    CHECK(r1.mean_iou == r2.mean_iou);
    CHECK(std::isfinite(mean_loss(p, cfg, data)));
  }

  TEST_CASE("inputs are resized to the model resolution") {
    const auto data = small_set(1);
    const auto big = resize_bilinear(data[0].probe, 96, 96);
    const auto t = image_tensor<float>({&big}, 64);
    CHECK(t.shape() == Shape{1, 3, 64, 64});
    const auto b = make_batch<float>({&data[0]}, 64);
    CHECK(b.mask_p.shape() == Shape{1, 1, 64, 64});
    CHECK(mask_image(b.mask_p, 0).data == data[0].mask_p.data);
  }

  TEST_CASE("training errors") {
    const auto cfg = ModelConfig::toy();
    auto p = init_params<float>(cfg, 0);
    CHECK_THROWS_AS(train(p, cfg, {}, TrainOptions{}), DataError);
    TrainOptions bad;
    bad.batch_size = 0;
    CHECK_THROWS_AS(train(p, cfg, small_set(1), bad), ConfigError);
  }
}
