// mstaf: data generation, training, evaluation, inference and attention
// visualization for the dual-image splicing localizer.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "mstaf/checkpoint.hpp"
#include "mstaf/datagen.hpp"
#include "mstaf/error.hpp"
#include "mstaf/kernels/kernels.hpp"
#include "mstaf/metrics.hpp"
#include "mstaf/run_config.hpp"
#include "mstaf/train.hpp"
#include "mstaf/viz.hpp"

namespace fs = std::filesystem;
using namespace mstaf;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> workers;
  std::string preset;
  std::vector<std::string> sets;
};

RunConfig resolve(const Common& c, KeyValues flags) {
  std::vector<KeyValues> layers;
  if (!c.config.empty()) layers.push_back(KeyValues::load(c.config));
  KeyValues cli;
  if (!c.preset.empty()) cli.set("preset", c.preset);
  if (c.seed) cli.set("seed", std::to_string(*c.seed));
  if (!c.out.empty()) cli.set("out", c.out);
  if (c.workers) cli.set("workers", std::to_string(*c.workers));
  cli.merge(flags);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    cli.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  layers.push_back(cli);
  return RunConfig::resolve(layers);
}

void echo_config(const RunConfig& rc, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.txt");
  out << rc.to_kv().to_text();
  if (!out) throw DataError("cannot write " + (dir / "config.txt").string());
}

fs::path corpus_dir(const RunConfig& rc) {
  if (rc.data.corpus.empty()) throw ConfigError("no corpus given (use --data or data.corpus)");
  return rc.data.corpus;
}

std::vector<SplicePair> load_corpus(const fs::path& dir, int resolution) {
  const auto records = load_manifest(dir / kManifestName);
  std::vector<SplicePair> pairs;
  pairs.reserve(records.size());
  for (const auto& r : records) {
    pairs.push_back(load_pair(r, dir));
    if (pairs.back().probe.height != resolution || pairs.back().probe.width != resolution) {
      throw ConfigError("corpus record " + r.id + " is " + std::to_string(pairs.back().probe.height) + "x" +
                        std::to_string(pairs.back().probe.width) + " but the model expects " +
                        std::to_string(resolution) + "x" + std::to_string(resolution));
    }
  }
  if (pairs.empty()) throw DataError("corpus " + dir.string() + " is empty");
  return pairs;
}

// 8-bit quantization shared by the written files and the verdict.
Image quantize(const Image& m) {
  Image q = m;
  for (auto& v : q.data) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return q;
}

int cmd_gen_data(const RunConfig& rc) {
  const fs::path out = rc.out;
  std::vector<SourceItem> sources = rc.data.sources.empty()
                                        ? synthetic_sources(rc.data.synthetic_sources, rc.model.resolution, rc.seed)
                                        : load_sources(rc.data.sources);
  CorpusOptions opts;
  opts.resolution = rc.model.resolution;
  opts.n_pairs = rc.data.pairs;
  opts.n_negative = rc.data.negatives;
  opts.balanced = rc.data.balanced;
  opts.ranges = rc.data.ranges;
  opts.seed = rc.seed;
  opts.max_retries = rc.data.max_retries;
  opts.workers = rc.workers;
  echo_config(rc, out);
  const auto result = build_corpus(sources, opts, out);
  if (!result.skipped.empty()) {
    std::ofstream log(out / "skipped.txt");
    for (const auto& s : result.skipped) log << s << '\n';
    std::printf("%zu donor attempts skipped, reasons in %s\n", result.skipped.size(),
                (out / "skipped.txt").string().c_str());
  }
  int total = 0;
  std::printf("%zu source items -> %zu pairs at %dx%d in %s\n", sources.size(), result.records.size(),
              opts.resolution, opts.resolution, out.string().c_str());
  for (const char* key : {"difficult", "normal", "easy", "negative"}) {
    const auto it = result.histogram.find(key);
    const int n = it == result.histogram.end() ? 0 : it->second;
    total += n;
    std::printf("  %-10s %d\n", key, n);
  }
  std::printf("  %-10s %d\n", "total", total);
  return kOk;
}

int cmd_train(const RunConfig& rc, const std::string& init_checkpoint) {
  const auto data = load_corpus(corpus_dir(rc), rc.model.resolution);
  ParamStore<float> params;
  ModelConfig cfg = rc.model;
  if (!init_checkpoint.empty()) {
    auto [p, c] = load_checkpoint<float>(init_checkpoint);
    params = std::move(p);
    cfg = c;
    if (cfg.resolution != rc.model.resolution) throw ConfigError("checkpoint resolution differs from the run config");
  } else {
    params = init_params<float>(cfg, cfg.seed);
  }
  const fs::path out = rc.out;
  echo_config(rc, out);

  TrainOptions t;
  t.steps = rc.train.steps;
  t.batch_size = rc.train.batch_size;
  t.lr = rc.train.lr;
  t.seed = rc.seed;
  t.checkpoint_every = rc.train.checkpoint_every;
  t.run_dir = out;
  const int every = std::max(1, rc.train.steps / 20);
  t.on_step = [&](const StepLog& l) {
    if (l.step % every == 0 || l.step + 1 == rc.train.steps) {
      std::printf("step %5d  epoch %3d  loss %.5f  grad-norm %.4g\n", l.step, l.epoch, l.loss, l.grad_norm);
      std::fflush(stdout);
    }
  };
  std::printf("training %lld parameters on %zu pairs (%s kernels)\n",
              static_cast<long long>(params.parameter_count()), data.size(),
              kernels::isa_name(kernels::active_isa()));
  const auto result = train(params, cfg, data, t);
  std::printf("final checkpoint: %s\n", result.final_checkpoint.string().c_str());
  return kOk;
}

int cmd_eval(const RunConfig& rc, const std::string& checkpoint) {
  if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  auto [params, cfg] = load_checkpoint<float>(checkpoint);
  const auto dir = corpus_dir(rc);
  const auto records = load_manifest(dir / kManifestName);
  const auto data = load_corpus(dir, cfg.resolution);
  const fs::path out = rc.out;
  RunConfig echoed = rc;
  echoed.model = cfg;
  echo_config(echoed, out);
  const auto pred_dir = out / "predictions";
  fs::create_directories(pred_dir);

  std::vector<const SplicePair*> ptrs;
  for (const auto& p : data) ptrs.push_back(&p);
  const auto preds = predict(params, cfg, ptrs, rc.eval.batch_size, rc.workers);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    write_pnm(pred_dir / (records[i].id + "_mask_p.pgm"), quantize(preds[i].mask_p));
    write_pnm(pred_dir / (records[i].id + "_mask_d.pgm"), quantize(preds[i].mask_d));
  }
  const auto report = score_dataset(pred_dir, dir / kManifestName, rc.eval.threshold, rc.workers);
  std::ofstream jl(out / "report.jsonl");
  write_report_jsonl(report, jl);
  std::ofstream tbl(out / "report.txt");
  write_report_table(report, tbl);
  write_report_table(report, std::cout, report.pairs.size() <= 20);
  return kOk;
}

int cmd_infer(const std::string& checkpoint, const std::string& probe_path, const std::string& donor_path,
              const fs::path& out) {
  if (checkpoint.empty()) throw ConfigError("infer needs --checkpoint");
  auto [params, cfg] = load_checkpoint<float>(checkpoint);
  const Image probe = to_rgb(read_pnm(probe_path));
  const Image donor = to_rgb(read_pnm(donor_path));
  if (!probe.same_size(donor)) throw DataError("probe and donor must have the same size");

  SplicePair pair;
  pair.probe = probe;
  pair.donor = donor;
  const auto pred = predict(params, cfg, {&pair}, 1).front();
  const Image mp = quantize(resize_bilinear(pred.mask_p, probe.height, probe.width));
  const Image md = quantize(resize_bilinear(pred.mask_d, donor.height, donor.width));
  fs::create_directories(out);
  write_pnm(out / "mask_p.pgm", mp);
  write_pnm(out / "mask_d.pgm", md);
  const bool positive = detect_pair(mp, md);
  const std::string verdict = positive ? "positive" : "negative";
  std::ofstream(out / "verdict.txt") << verdict << '\n';
  std::printf("verdict: %s\n", verdict.c_str());
  return kOk;
}

struct VizArgs {
  std::string checkpoint, probe, donor, side = "probe";
  int stage = 1, block = 1, row = 0, col = 0;
};

int cmd_viz_attn(const VizArgs& a, const fs::path& out) {
  if (a.checkpoint.empty()) throw ConfigError("viz-attn needs --checkpoint");
  if (a.side != "probe" && a.side != "donor") throw UsageError("--side must be probe or donor");
  auto [params, cfg] = load_checkpoint<float>(a.checkpoint);
  const Image probe = resize_bilinear(to_rgb(read_pnm(a.probe)), cfg.resolution, cfg.resolution);
  const Image donor = resize_bilinear(to_rgb(read_pnm(a.donor)), cfg.resolution, cfg.resolution);
  const Side side = a.side == "probe" ? Side::probe : Side::donor;
  const auto rows = query_attention(params, cfg, probe, donor, a.stage, a.block, side, a.row, a.col);
  const auto grid = cfg.stage_grids()[a.stage - 1];

  fs::create_directories(out);
  nlohmann::ordered_json summary{{"stage", a.stage}, {"block", a.block}, {"side", a.side},
                                 {"token", {a.row, a.col}}, {"grid", {grid, grid}}};
  auto heads = nlohmann::ordered_json::array();
  for (const auto& q : rows) {
    const bool self = q.head == HeadKind::self;
    const Image& own = side == Side::probe ? probe : donor;
    const Image& other = side == Side::probe ? donor : probe;
    nlohmann::ordered_json h{{"head", self ? "self" : "cross"}, {"slot", q.slot}, {"row_sum", q.row_sum}};
    auto branches = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < q.branches.size(); ++k) {
      const auto& b = q.branches[k];
      Image img = render_heatmap(b, self ? own : other);
      if (self) mark_token(img, grid, grid, a.row, a.col);
      const std::string name = std::string(self ? "self" : "cross") + std::to_string(q.slot) + "_branch" +
                               std::to_string(k + 1) + ".ppm";
      write_pnm(out / name, img);
      double s = 0;
      for (double v : b.values) s += v;
      branches.push_back({{"file", name}, {"grid", {b.h, b.w}}, {"sum", s}});
    }
    h["branches"] = branches;
    heads.push_back(h);
  }
  summary["heads"] = heads;
  Image query = side == Side::probe ? probe : donor;
  mark_token(query, grid, grid, a.row, a.col);
  write_pnm(out / "query.ppm", query);
  std::ofstream(out / "attention.json") << summary.dump(2) << '\n';
  std::printf("wrote %zu attention rows to %s\n", rows.size(), out.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-image splicing localization with target-aware attention"};
  app.require_subcommand(1);
  Common common;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "run seed (init, shuffling, data)");
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--workers", common.workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--preset", common.preset, "model preset")->check(CLI::IsMember({"toy", "paper"}));
    sub->add_option("--set", common.sets, "override a config key, e.g. --set train.lr=1e-3");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a splice-pair corpus");
  add_common(gen);
  std::string sources;
  std::optional<int> pairs, negatives;
  gen->add_option("--sources", sources, "directory of source images with masks or polygons.txt");
  gen->add_option("--pairs", pairs, "positive pairs");
  gen->add_option("--negatives", negatives, "negative pairs");

  auto* tr = app.add_subcommand("train", "train on a corpus");
  add_common(tr);
  std::string data, init;
  std::optional<int> steps;
  tr->add_option("--data", data, "corpus directory");
  tr->add_option("--steps", steps, "training steps");
  tr->add_option("--init", init, "start from this checkpoint");

  auto* ev = app.add_subcommand("eval", "predict and score a corpus");
  add_common(ev);
  std::string checkpoint;
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--data", data, "corpus directory");

  auto* inf = app.add_subcommand("infer", "predict masks for one image pair");
  add_common(inf);
  std::string probe, donor;
  inf->add_option("--checkpoint", checkpoint)->required();
  inf->add_option("--probe", probe)->required()->check(CLI::ExistingFile);
  inf->add_option("--donor", donor)->required()->check(CLI::ExistingFile);

  auto* viz = app.add_subcommand("viz-attn", "render one query token's attention rows");
  add_common(viz);
  VizArgs va;
  viz->add_option("--checkpoint", va.checkpoint)->required();
  viz->add_option("--probe", va.probe)->required()->check(CLI::ExistingFile);
  viz->add_option("--donor", va.donor)->required()->check(CLI::ExistingFile);
  viz->add_option("--stage", va.stage, "1-based stage");
  viz->add_option("--block", va.block, "1-based block within the stage");
  viz->add_option("--row", va.row, "query token row");
  viz->add_option("--col", va.col, "query token column");
  viz->add_option("--side", va.side, "image holding the query token (probe or donor)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    KeyValues flags;
    if (!sources.empty()) flags.set("data.sources", sources);
    if (pairs) flags.set("data.pairs", std::to_string(*pairs));
    if (negatives) flags.set("data.negatives", std::to_string(*negatives));
    if (!data.empty()) flags.set("data.corpus", data);
    if (steps) flags.set("train.steps", std::to_string(*steps));
    const RunConfig rc = resolve(common, flags);

    if (gen->parsed()) return cmd_gen_data(rc);
    if (tr->parsed()) return cmd_train(rc, init);
    if (ev->parsed()) return cmd_eval(rc, checkpoint);
    if (inf->parsed()) return cmd_infer(checkpoint, probe, donor, rc.out);
    if (viz->parsed()) return cmd_viz_attn(va, rc.out);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const LoadError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
