#include "mstaf/train.hpp"

#include <cmath>
#include <fstream>
#include <atomic>
#include <mutex>
#include <numeric>
#include <thread>

#include "json.hpp"

#include "mstaf/checkpoint.hpp"
#include "mstaf/ops.hpp"
#include "mstaf/optim.hpp"

namespace mstaf {

namespace fs = std::filesystem;

template <typename T>
Tensor<T> image_tensor(const std::vector<const Image*>& images, int resolution) {
  if (images.empty()) throw UsageError("image_tensor: empty batch");
  const int c = images.front()->channels;
  const auto plane = static_cast<std::size_t>(resolution) * resolution;
  std::vector<T> data(images.size() * c * plane);
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b]->channels != c) throw DataError("image_tensor: channel count differs within a batch");
    const bool is_mask = c == 1;
    const Image& src = images[b]->height == resolution && images[b]->width == resolution
                           ? *images[b]
                           : (is_mask ? resize_nearest(*images[b], resolution, resolution)
                                      : resize_bilinear(*images[b], resolution, resolution));
    std::copy(src.data.begin(), src.data.end(), data.begin() + b * c * plane);
  }
  return Tensor<T>::from_data({static_cast<std::int64_t>(images.size()), c, resolution, resolution}, std::move(data));
}

template <typename T>
PairBatch<T> make_batch(const std::vector<const SplicePair*>& pairs, int resolution) {
  std::vector<const Image*> ip, id, mp, md;
  for (const auto* p : pairs) {
    ip.push_back(&p->probe);
    id.push_back(&p->donor);
    mp.push_back(&p->mask_p);
    md.push_back(&p->mask_d);
  }
  return {image_tensor<T>(ip, resolution), image_tensor<T>(id, resolution), image_tensor<T>(mp, resolution),
          image_tensor<T>(md, resolution)};
}

template <typename T>
Image mask_image(const Tensor<T>& masks, std::int64_t b) {
  if (masks.ndim() != 4 || masks.dim(1) != 1) throw DimensionError("mask_image expects [B, 1, H, W]");
  const int h = static_cast<int>(masks.dim(2));
  const int w = static_cast<int>(masks.dim(3));
  Image out(1, h, w);
  const auto plane = static_cast<std::size_t>(h) * w;
  const auto src = masks.data().subspan(static_cast<std::size_t>(b) * plane, plane);
  for (std::size_t i = 0; i < plane; ++i) out.data[i] = static_cast<float>(src[i]);
  return out;
}

namespace {

template <typename T>
double grad_norm(const ParamStore<T>& params) {
  double s = 0.0;
  for (const auto& [_, t] : params.entries()) {
    if (!t.has_grad()) continue;
    for (T g : t.grad_buffer()) s += double(g) * double(g);
  }
  return std::sqrt(s);
}

std::string step_json(const StepLog& l) {
  return nlohmann::ordered_json{
      {"step", l.step}, {"epoch", l.epoch}, {"loss", l.loss}, {"grad_norm", l.grad_norm}, {"lr", l.lr}}
      .dump();
}

}  // namespace

template <typename T>
TrainResult train(ParamStore<T>& params, const ModelConfig& cfg, const std::vector<SplicePair>& data,
                  const TrainOptions& opts) {
  if (data.empty()) throw DataError("train: no training pairs");
  if (opts.steps < 0 || opts.batch_size < 1) throw ConfigError("train: steps must be >= 0 and batch_size >= 1");
  cfg.validate();

  std::ofstream log_file;
  if (!opts.run_dir.empty()) {
    fs::create_directories(opts.run_dir);
    log_file.open(opts.run_dir / "loss.jsonl", std::ios::binary);
    if (!log_file) throw DataError("cannot write " + (opts.run_dir / "loss.jsonl").string());
  }

  Adam<T> adam(AdamOptions{.lr = opts.lr});
  Rng shuffle(opts.seed);
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  int epoch = -1;
  const auto batch = std::min<std::size_t>(static_cast<std::size_t>(opts.batch_size), data.size());

  TrainResult result;
  for (int step = 0; step < opts.steps; ++step) {
    std::vector<const SplicePair*> items;
    while (items.size() < batch) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, std::int64_t(i) - 1))]);
        }
        cursor = 0;
        ++epoch;
      }
      items.push_back(&data[order[cursor++]]);
    }

    const auto b = make_batch<T>(items, cfg.resolution);
    params.zero_grad();
    const auto out = forward(b.probe, b.donor, params, cfg);
    const auto loss = pair_bce_loss(out.mask_p, b.mask_p, out.mask_d, b.mask_d);
    loss.backward();

    StepLog l{step, epoch, double(loss.item()), grad_norm(params), opts.lr};
    if (!std::isfinite(l.loss) || !std::isfinite(l.grad_norm)) {
      if (!opts.run_dir.empty()) {
        std::ofstream dump(opts.run_dir / "nan_dump.json");
        std::vector<std::size_t> indices;  // positions in `data`, i.e. manifest order
        for (const auto* it : items) indices.push_back(static_cast<std::size_t>(it - data.data()));
        nlohmann::ordered_json j{{"step", step}, {"epoch", epoch}, {"lr", opts.lr}, {"batch", indices},
                                 {"loss", std::isfinite(l.loss) ? nlohmann::ordered_json(l.loss) : "non-finite"},
                                 {"grad_norm", std::isfinite(l.grad_norm) ? nlohmann::ordered_json(l.grad_norm)
                                                                          : "non-finite"}};
        dump << j.dump(2) << '\n';
      }
      throw NumericError("non-finite loss or gradient at step " + std::to_string(step) +
                         " (lr " + std::to_string(opts.lr) + ", grad-norm " + std::to_string(l.grad_norm) + ")");
    }
    adam.step(params);

    result.log.push_back(l);
    if (log_file) log_file << step_json(l) << '\n' << std::flush;
    if (opts.on_step) opts.on_step(l);
    if (!opts.run_dir.empty() && opts.checkpoint_every > 0 && (step + 1) % opts.checkpoint_every == 0) {
      save_checkpoint(params, cfg, opts.run_dir / ("checkpoint_step" + std::to_string(step + 1) + ".bin"));
    }
    if (opts.should_stop && opts.should_stop(l)) break;
  }
  if (!opts.run_dir.empty()) {
    result.final_checkpoint = opts.run_dir / "checkpoint.bin";
    save_checkpoint(params, cfg, result.final_checkpoint);
  }
  return result;
}

template <typename T>
std::vector<MaskPair<T>> predict(const ParamStore<T>& params, const ModelConfig& cfg,
                                 const std::vector<const SplicePair*>& pairs, int batch_size, int workers) {
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  const std::size_t n_batches = (pairs.size() + bs - 1) / bs;
  std::vector<MaskPair<T>> out(pairs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  const auto run = [&] {
    NoGradGuard no_grad;  // per thread
    try {
      for (std::size_t k = next++; k < n_batches; k = next++) {
        const std::size_t i = k * bs;
        const auto end = std::min(pairs.size(), i + bs);
        std::vector<const Image*> ip, id;
        for (std::size_t j = i; j < end; ++j) {
          ip.push_back(&pairs[j]->probe);
          id.push_back(&pairs[j]->donor);
        }
        const auto res =
            forward(image_tensor<T>(ip, cfg.resolution), image_tensor<T>(id, cfg.resolution), params, cfg);
        for (std::size_t j = i; j < end; ++j) {
          out[j] = {mask_image(res.mask_p, std::int64_t(j - i)), mask_image(res.mask_d, std::int64_t(j - i))};
        }
      }
    } catch (...) {
      std::lock_guard lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };
  const int threads = std::max(1, std::min<int>(workers, static_cast<int>(n_batches)));
  if (threads == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

template <typename T>
MetricReport evaluate(const ParamStore<T>& params, const ModelConfig& cfg, const std::vector<SplicePair>& data,
                      int batch_size) {
  std::vector<const SplicePair*> ptrs;
  for (const auto& p : data) ptrs.push_back(&p);
  auto preds = predict(params, cfg, ptrs, batch_size);
  std::vector<PairInput> inputs;
  for (std::size_t i = 0; i < data.size(); ++i) {
    PairInput in;
    in.id = std::to_string(i);
    in.positive = data[i].label == PairLabel::positive;
    in.pred_p = std::move(preds[i].mask_p);
    in.pred_d = std::move(preds[i].mask_d);
    in.gt_p = resize_nearest(data[i].mask_p, cfg.resolution, cfg.resolution);
    in.gt_d = resize_nearest(data[i].mask_d, cfg.resolution, cfg.resolution);
    inputs.push_back(std::move(in));
  }
  return score_pairs(inputs);
}

template <typename T>
double mean_loss(const ParamStore<T>& params, const ModelConfig& cfg, const std::vector<SplicePair>& data,
                 int batch_size) {
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(data.size(), i + static_cast<std::size_t>(batch_size));
    std::vector<const SplicePair*> items;
    for (std::size_t k = i; k < end; ++k) items.push_back(&data[k]);
    const auto b = make_batch<T>(items, cfg.resolution);
    const auto out = forward(b.probe, b.donor, params, cfg);
    total += double(pair_bce_loss(out.mask_p, b.mask_p, out.mask_d, b.mask_d).item()) * double(end - i);
  }
  return total / double(data.size());
}

#define MSTAF_INSTANTIATE(T)                                                                                      \
  template Tensor<T> image_tensor<T>(const std::vector<const Image*>&, int);                                    \
  template PairBatch<T> make_batch<T>(const std::vector<const SplicePair*>&, int);                              \
  template Image mask_image<T>(const Tensor<T>&, std::int64_t);                                                 \
  template TrainResult train<T>(ParamStore<T>&, const ModelConfig&, const std::vector<SplicePair>&,              \
                                const TrainOptions&);                                                           \
  template std::vector<MaskPair<T>> predict<T>(const ParamStore<T>&, const ModelConfig&,                        \
                                               const std::vector<const SplicePair*>&, int, int);                \
  template MetricReport evaluate<T>(const ParamStore<T>&, const ModelConfig&, const std::vector<SplicePair>&, int); \
  template double mean_loss<T>(const ParamStore<T>&, const ModelConfig&, const std::vector<SplicePair>&, int);

MSTAF_INSTANTIATE(float)
MSTAF_INSTANTIATE(double)

}  // namespace mstaf
