#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dsnerv/codes.hpp"
#include "dsnerv/common.hpp"
#include "dsnerv/decoder.hpp"
#include "dsnerv/media.hpp"
#include "dsnerv/metrics.hpp"
#include "dsnerv/tensor.hpp"

namespace dsnerv {

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 300;
  int batch_size = 1;
  double base_lr = 7e-3;
  double code_lr_multiplier = 10.0;
  double beta1 = 0.98;
  double beta2 = 0.92;
  double beta3 = 0.99;
  double weight_decay = 0.02;
  double warmup_ratio = 0.2;
  double eps = 1e-8;
  uint64_t seed = 1;

  // Boundary validation for external configs; train() itself accepts edge
  // values like base_lr = 0 so no-op runs stay expressible in tests.
  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(base_lr > 0.0)) throw ConfigError("train: base_lr must be positive");
    if (!(warmup_ratio > 0.0 && warmup_ratio < 1.0))
      throw ConfigError("train: warmup_ratio must lie in (0, 1)");
  }
};

enum class TaskKind { Reconstruction, Interpolation, Inpainting };

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "reconstruction") return TaskKind::Reconstruction;
  if (s == "interpolation") return TaskKind::Interpolation;
  if (s == "inpainting") return TaskKind::Inpainting;
  throw ConfigError("unknown task kind '" + s + "'");
}

struct TaskSpec {
  TaskKind kind = TaskKind::Reconstruction;
  std::vector<int> train_indices;
  std::vector<int> eval_indices;
  std::vector<Tensor<float>> masks;  // per-frame [h, w]; inpainting only
};

// Reconstruction/inpainting train on every frame; interpolation trains on
// even t and holds out odd t.
inline TaskSpec make_task(TaskKind kind, int frame_count, int h = 0, int w = 0,
                          const MaskSpec* mask = nullptr) {
  TaskSpec task;
  task.kind = kind;
  if (kind == TaskKind::Interpolation) {
    for (int t = 0; t < frame_count; t += 2) task.train_indices.push_back(t);
    for (int t = 1; t < frame_count; t += 2) task.eval_indices.push_back(t);
  } else {
    task.train_indices.resize(static_cast<size_t>(frame_count));
    std::iota(task.train_indices.begin(), task.train_indices.end(), 0);
    task.eval_indices = task.train_indices;
  }
  // Masks need frame geometry; decode-only callers omit it and get a bare
  // index split (train() rejects inpainting tasks without masks).
  if (kind == TaskKind::Inpainting && h > 0 && w > 0) {
    MaskSpec ms = mask ? *mask : MaskSpec{};
    task.masks = make_masks(ms, frame_count, h, w);
  }
  return task;
}

// ---------------------------------------------------------------------------
// Loss. A mask (1 = participates) is spatial and spans all channels; the
// mean runs over participating elements only.
// ---------------------------------------------------------------------------

template <typename Scalar>
double l2_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target,
               const Tensor<float>* mask = nullptr) {
  check_same_shape(pred, target, "l2_loss");
  if (!mask) {
    double acc = 0.0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
      const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
      acc += d * d;
    }
    return acc / static_cast<double>(pred.numel());
  }
  if (pred.rank() != 3 || mask->rank() != 2 || pred.dim(1) != mask->dim(0) ||
      pred.dim(2) != mask->dim(1))
    throw ShapeMismatch("l2_loss: mask " + shape_to_string(mask->shape) + " vs frame " +
                        shape_to_string(pred.shape));
  const int64_t plane = mask->numel();
  int64_t visible = 0;
  for (int64_t i = 0; i < plane; ++i)
    if ((*mask)[i] != 0.0f) ++visible;
  if (visible == 0) throw EmptyMask("l2_loss: mask hides every pixel");
  double acc = 0.0;
  for (int c = 0; c < pred.dim(0); ++c)
    for (int64_t i = 0; i < plane; ++i) {
      if ((*mask)[i] == 0.0f) continue;
      const int64_t k = c * plane + i;
      const double d = static_cast<double>(pred[k]) - static_cast<double>(target[k]);
      acc += d * d;
    }
  return acc / static_cast<double>(visible * pred.dim(0));
}

// d(loss)/d(pred), scaled by `scale` (use 1/batch for batch-averaged loss).
// Hidden pixels get exactly zero gradient.
template <typename Scalar>
Tensor<Scalar> l2_loss_backward(const Tensor<Scalar>& pred, const Tensor<Scalar>& target,
                                const Tensor<float>* mask = nullptr, double scale = 1.0) {
  check_same_shape(pred, target, "l2_loss_backward");
  Tensor<Scalar> d = Tensor<Scalar>::zeros_like(pred);
  if (!mask) {
    const double f = 2.0 * scale / static_cast<double>(pred.numel());
    for (int64_t i = 0; i < pred.numel(); ++i)
      d[i] = static_cast<Scalar>(f * (static_cast<double>(pred[i]) -
                                      static_cast<double>(target[i])));
    return d;
  }
  const int64_t plane = mask->numel();
  int64_t visible = 0;
  for (int64_t i = 0; i < plane; ++i)
    if ((*mask)[i] != 0.0f) ++visible;
  if (visible == 0) throw EmptyMask("l2_loss_backward: mask hides every pixel");
  const double f = 2.0 * scale / static_cast<double>(visible * pred.dim(0));
  for (int c = 0; c < pred.dim(0); ++c)
    for (int64_t i = 0; i < plane; ++i) {
      if ((*mask)[i] == 0.0f) continue;
      const int64_t k = c * plane + i;
      d[k] = static_cast<Scalar>(f * (static_cast<double>(pred[k]) -
                                      static_cast<double>(target[k])));
    }
  return d;
}

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup from 0, then cosine decay to 0.
// ---------------------------------------------------------------------------

struct LrPair {
  double decoder = 0.0;
  double code = 0.0;
};

inline LrPair lr_schedule(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
  if (step < 0 || step >= total_steps)
    throw IndexOutOfRange("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(total_steps) + ")");
  const int64_t warm =
      static_cast<int64_t>(std::floor(cfg.warmup_ratio * static_cast<double>(total_steps)));
  double lr;
  if (step < warm) {
    lr = cfg.base_lr * static_cast<double>(step) / static_cast<double>(warm);
  } else {
    const double frac = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    lr = cfg.base_lr * 0.5 * (1.0 + std::cos(frac * 3.141592653589793));
  }
  return {lr, cfg.code_lr_multiplier * lr};
}

// ---------------------------------------------------------------------------
// Adan optimizer with decoupled (proximal) weight decay:
//   m <- b1 m + (1-b1) g
//   v <- b2 v + (1-b2) (g - g_prev)        (difference is 0 on step 1)
//   n <- b3 n + (1-b3) (g + b2 (g - g_prev))^2
//   p <- (p - lr (m/bc1 + b2 v/bc2) / (sqrt(n/bc3) + eps)) / (1 + lr wd)
// ---------------------------------------------------------------------------

template <typename Scalar>
struct AdanState {
  std::vector<Tensor<Scalar>> m, v, n, g_prev;
  int64_t step = 0;  // completed steps

  AdanState() = default;
  explicit AdanState(const Model<Scalar>& model) {
    m.reserve(model.tensors.size());
    for (const auto& t : model.tensors) {
      m.push_back(Tensor<Scalar>::zeros_like(t));
      v.push_back(Tensor<Scalar>::zeros_like(t));
      n.push_back(Tensor<Scalar>::zeros_like(t));
      g_prev.push_back(Tensor<Scalar>::zeros_like(t));
    }
  }
};

template <typename Scalar>
void optimizer_step(Model<Scalar>& model, const GradStore<Scalar>& grads, AdanState<Scalar>& st,
                    const LrPair& lrs, const TrainConfig& cfg) {
  if (!grads.all_finite()) throw NonFiniteGradient("optimizer_step: non-finite gradient");
  const int64_t k = ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(k));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(k));
  const double bc3 = 1.0 - std::pow(cfg.beta3, static_cast<double>(k));
  for (int i = 0; i < model.count(); ++i) {
    const double lr = model.info(i).kind == ParamKind::Code ? lrs.code : lrs.decoder;
    Tensor<Scalar>& p = model.tensor(i);
    const Tensor<Scalar>& g = grads.g[static_cast<size_t>(i)];
    auto& m = st.m[static_cast<size_t>(i)];
    auto& v = st.v[static_cast<size_t>(i)];
    auto& n = st.n[static_cast<size_t>(i)];
    auto& gp = st.g_prev[static_cast<size_t>(i)];
    for (int64_t e = 0; e < p.numel(); ++e) {
      const double ge = static_cast<double>(g[e]);
      const double diff = k == 1 ? 0.0 : ge - static_cast<double>(gp[e]);
      const double me = cfg.beta1 * static_cast<double>(m[e]) + (1.0 - cfg.beta1) * ge;
      const double ve = cfg.beta2 * static_cast<double>(v[e]) + (1.0 - cfg.beta2) * diff;
      const double ue = ge + cfg.beta2 * diff;
      const double ne = cfg.beta3 * static_cast<double>(n[e]) + (1.0 - cfg.beta3) * ue * ue;
      const double update = (me / bc1 + cfg.beta2 * ve / bc2) / (std::sqrt(ne / bc3) + cfg.eps);
      const double pe = (static_cast<double>(p[e]) - lr * update) /
                        (1.0 + lr * cfg.weight_decay);
      m[e] = static_cast<Scalar>(me);
      v[e] = static_cast<Scalar>(ve);
      n[e] = static_cast<Scalar>(ne);
      gp[e] = static_cast<Scalar>(ge);
      p[e] = static_cast<Scalar>(pe);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainLogRecord {
  int epoch = 0;
  double loss = 0.0;
  double train_psnr = 0.0;
  double eval_psnr = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRecord> records;
  std::vector<double> step_losses;

  std::string to_csv() const {
    std::ostringstream os;
    os << "epoch,loss,train_psnr,eval_psnr,lr,seconds\n" << std::setprecision(10);
    for (const auto& r : records)
      os << r.epoch << ',' << r.loss << ',' << r.train_psnr << ',' << r.eval_psnr << ',' << r.lr
         << ',' << r.seconds << '\n';
    return os.str();
  }
};

// Losses are averaged over consecutive disjoint windows; returns the fraction
// of windows whose mean exceeds the previous window's. The smoothed-descent
// property bounds this. Disjoint windows (not a rolling mean) so that
// per-frame loss variance within a window does not register as an increase.
inline double smoothed_increase_fraction(const std::vector<double>& losses, int window,
                                         int first_n) {
  const int n = std::min<int>(first_n, static_cast<int>(losses.size()));
  const int blocks = window > 0 ? n / window : 0;
  if (blocks < 2) return 0.0;
  std::vector<double> means;
  means.reserve(static_cast<size_t>(blocks));
  for (int b = 0; b < blocks; ++b) {
    double acc = 0.0;
    for (int i = b * window; i < (b + 1) * window; ++i) acc += losses[static_cast<size_t>(i)];
    means.push_back(acc / window);
  }
  int increases = 0;
  for (size_t i = 1; i < means.size(); ++i)
    if (means[i] > means[i - 1]) ++increases;
  return static_cast<double>(increases) / static_cast<double>(means.size() - 1);
}

template <typename Scalar>
std::vector<Tensor<Scalar>> frames_as(const FrameSequence& seq) {
  std::vector<Tensor<Scalar>> out;
  out.reserve(seq.frames.size());
  for (const auto& f : seq.frames) out.push_back(f.template cast<Scalar>());
  return out;
}

// Mean per-frame PSNR over the given indices; never mutates the model.
template <typename Scalar>
double eval_psnr(const Model<Scalar>& model, const std::vector<Tensor<Scalar>>& frames,
                 const std::vector<int>& indices) {
  if (indices.empty()) return 0.0;
  double acc = 0.0;
  for (int t : indices) {
    const Tensor<Scalar> pred = decode_frame(model, static_cast<double>(t));
    acc += frame_psnr(pred, frames[static_cast<size_t>(t)]);
  }
  return acc / static_cast<double>(indices.size());
}

namespace detail {

template <typename Scalar>
struct FrameWork {
  int t = 0;
  double loss = 0.0;
  GradStore<Scalar> grads;
};

// Forward/backward for one frame; gradient scale folds in batch averaging.
template <typename Scalar>
void frame_pass(const Model<Scalar>& model, const std::vector<Tensor<Scalar>>& frames,
                const TaskSpec& task, double batch_scale, FrameWork<Scalar>& work) {
  const Tensor<float>* mask =
      task.kind == TaskKind::Inpainting ? &task.masks[static_cast<size_t>(work.t)] : nullptr;
  DecodeTrace<Scalar> trace;
  const Tensor<Scalar> pred = decode_frame_traced(model, static_cast<double>(work.t), &trace);
  const Tensor<Scalar>& target = frames[static_cast<size_t>(work.t)];
  work.loss = l2_loss(pred, target, mask);
  const Tensor<Scalar> dframe = l2_loss_backward(pred, target, mask, batch_scale);
  decode_backward(model, trace, dframe, work.grads);
}

}  // namespace detail

template <typename Scalar>
TrainLog train(Model<Scalar>& model, const std::vector<Tensor<Scalar>>& frames,
               const TaskSpec& task, const TrainConfig& cfg, int threads = 1) {
  if (static_cast<int>(frames.size()) != model.timeline.frame_count)
    throw ConfigMismatch("train: " + std::to_string(frames.size()) + " frames, timeline has " +
                         std::to_string(model.timeline.frame_count));
  for (const auto& f : frames)
    if (f.rank() != 3 || f.dim(0) != 3 || f.dim(1) != model.spec.out_h ||
        f.dim(2) != model.spec.out_w)
      throw ConfigMismatch("train: frame shape " + shape_to_string(f.shape) +
                           " does not match decoder output " + std::to_string(model.spec.out_h) +
                           "x" + std::to_string(model.spec.out_w));
  if (task.train_indices.empty()) throw ConfigMismatch("train: no training frames");
  for (int t : task.train_indices)
    check_time(model.timeline, static_cast<double>(t));
  if (task.kind == TaskKind::Inpainting &&
      static_cast<int>(task.masks.size()) != model.timeline.frame_count)
    throw ConfigMismatch("train: inpainting needs one mask per frame");

  const int64_t per_epoch =
      (static_cast<int64_t>(task.train_indices.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = static_cast<int64_t>(cfg.epochs) * per_epoch;

  AdanState<Scalar> state(model);
  GradStore<Scalar> grads(model);
  Rng shuffle_rng(cfg.seed);
  std::vector<int> order = task.train_indices;

  TrainLog log;
  log.step_losses.reserve(static_cast<size_t>(total_steps));
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(i))]);

    double epoch_loss = 0.0;
    double last_lr = 0.0;
    for (size_t offset = 0; offset < order.size(); offset += static_cast<size_t>(cfg.batch_size)) {
      const size_t batch = std::min<size_t>(static_cast<size_t>(cfg.batch_size),
                                            order.size() - offset);
      std::vector<detail::FrameWork<Scalar>> work(batch);
      for (size_t b = 0; b < batch; ++b) {
        work[b].t = order[offset + b];
        work[b].grads = GradStore<Scalar>(model);
      }
      const double batch_scale = 1.0 / static_cast<double>(batch);
      if (threads > 1 && batch > 1) {
        std::vector<std::thread> pool;
        const size_t workers = std::min<size_t>(static_cast<size_t>(threads), batch);
        for (size_t wk = 0; wk < workers; ++wk)
          pool.emplace_back([&, wk] {
            for (size_t b = wk; b < batch; b += workers)
              detail::frame_pass(model, frames, task, batch_scale, work[b]);
          });
        for (auto& th : pool) th.join();
      } else {
        for (size_t b = 0; b < batch; ++b)
          detail::frame_pass(model, frames, task, batch_scale, work[b]);
      }

      grads.zero();
      double loss = 0.0;
      for (size_t b = 0; b < batch; ++b) {  // fixed order: deterministic for any thread count
        grads.add(work[b].grads);
        loss += work[b].loss;
      }
      loss *= batch_scale;

      const LrPair lrs = lr_schedule(step, total_steps, cfg);
      optimizer_step(model, grads, state, lrs, cfg);
      last_lr = lrs.decoder;
      log.step_losses.push_back(loss);
      epoch_loss += loss;
      ++step;
    }
    epoch_loss /= static_cast<double>(per_epoch);

    TrainLogRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = epoch_loss;
    rec.train_psnr = psnr_from_mse(epoch_loss);
    rec.eval_psnr = eval_psnr(model, frames, task.eval_indices);
    rec.lr = last_lr;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start)
                      .count();
    log.records.push_back(rec);
  }
  return log;
}

}  // namespace dsnerv
