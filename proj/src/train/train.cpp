#include "simba/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>

#include "simba/error.hpp"
#include "simba/ops.hpp"

namespace simba {

void OptimConfig::validate() const {
  auto require = [](bool ok, const char* path, const std::string& what) {
    if (!ok) throw ConfigError(path, what);
  };
  require(base_lr > 0 && std::isfinite(base_lr), "base_lr", "must be positive");
  require(beta1 >= 0 && beta1 < 1, "betas/0", "must lie in [0, 1)");
  require(beta2 >= 0 && beta2 < 1, "betas/1", "must lie in [0, 1)");
  require(eps > 0, "eps", "must be positive");
  require(weight_decay >= 0, "weight_decay", "must be non-negative");
  require(warmup_fraction >= 0 && warmup_fraction <= 1, "warmup_fraction",
          "must lie in [0, 1] so warmup does not exceed training");
  require(label_smoothing >= 0 && label_smoothing < 1, "label_smoothing", "must lie in [0, 1)");
  require(grad_clip_norm >= 0, "grad_clip_norm", "must be non-negative");
  require(batch > 0, "batch", "must be positive");
}

double lr_schedule(std::size_t step, std::size_t warmup_steps, std::size_t total_steps,
                   double base_lr) {
  if (step >= total_steps) return 0.0;
  if (step < warmup_steps) return base_lr * double(step) / double(warmup_steps);
  const double progress = double(step - warmup_steps) / double(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (const auto& p : params) {
    Tensor<T> t = p.tensor;
    t.zero_grad();
  }
}

template <typename T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    Tensor<T> t = p.tensor;
    for (T g : t.mutable_grad()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && std::isfinite(norm) && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / (norm + 1e-6));
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor<T> t = p.tensor;
      for (T& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template <typename T>
bool adamw_step(const ParamList<T>& params, AdamState& state, const OptimConfig& cfg, double lr) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    Tensor<T> t = p.tensor;
    for (T g : t.mutable_grad())
      if (!std::isfinite(g)) return false;
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size())
    throw ContractError("adamw_step: optimizer state was built for a different parameter list");
  // Candidate values first; the step is dropped whole if any weight would
  // leave the finite range of T.
  const std::size_t t_next = state.t + 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(t_next));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(t_next));
  std::vector<std::vector<T>> w_new(params.size());
  std::vector<std::vector<double>> m_new(params.size()), v_new(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> t = params[i].tensor;
    auto w = t.data();
    const bool has = t.has_grad();
    std::span<T> g = has ? t.mutable_grad() : std::span<T>{};
    const auto& m = state.m[i];
    const auto& v = state.v[i];
    const double decay = params[i].decay ? cfg.weight_decay : 0.0;
    w_new[i].resize(w.size());
    m_new[i].resize(w.size());
    v_new[i].resize(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has ? double(g[j]) : 0.0;
      m_new[i][j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v_new[i][j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double update = (m_new[i][j] / c1) / (std::sqrt(v_new[i][j] / c2) + cfg.eps);
      w_new[i][j] = static_cast<T>(double(w[j]) - lr * (update + decay * double(w[j])));
      if (!std::isfinite(w_new[i][j])) return false;
    }
  }
  state.t = t_next;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> t = params[i].tensor;
    std::copy(w_new[i].begin(), w_new[i].end(), t.mutable_data().begin());
    state.m[i] = std::move(m_new[i]);
    state.v[i] = std::move(v_new[i]);
  }
  return true;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void MetricsLog::add(std::size_t step, std::string split, std::string metric, double value) {
  rows_.push_back({step, std::move(split), std::move(metric), value});
}

void MetricsLog::write_csv(std::ostream& out) const {
  out << "step,split,metric,value\n";
  for (const auto& r : rows_)
    out << r.step << ',' << r.split << ',' << r.metric << ',' << format_double(r.value) << '\n';
}

std::string MetricsLog::csv() const {
  std::ostringstream out;
  write_csv(out);
  return out.str();
}

double MetricsLog::last(const std::string& split, const std::string& metric) const {
  for (auto it = rows_.rbegin(); it != rows_.rend(); ++it)
    if (it->split == split && it->metric == metric) return it->value;
  return std::numeric_limits<double>::quiet_NaN();
}

std::size_t total_steps(const OptimConfig& cfg, std::size_t steps_per_epoch) {
  const std::size_t total = cfg.epochs * steps_per_epoch;
  return cfg.max_steps > 0 ? std::min(total, cfg.max_steps) : total;
}

template <typename T>
TrainReport train_loop(TrainTask<T>& task, const OptimConfig& cfg) {
  cfg.validate();
  if (task.steps_per_epoch == 0) throw DataError("training set yields no batches");
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  const std::size_t total = total_steps(cfg, task.steps_per_epoch);
  const auto warmup = static_cast<std::size_t>(std::llround(cfg.warmup_fraction * double(total)));
  Rng rng = Rng(cfg.seed).fork("train");
  AdamState state;
  std::size_t consecutive = 0;

  if (task.checkpoint) task.checkpoint(0, rng);
  std::size_t step = 0;
  for (std::size_t epoch = 0; step < total && !report.aborted; ++epoch) {
    if (task.start_epoch) task.start_epoch(rng);
    for (std::size_t i = 0; i < task.steps_per_epoch && step < total; ++i) {
      zero_grads(task.params);
      bool ok;
      double loss;
      {
        Tape<T> tape;
        Tensor<T> l = task.batch_loss(rng);
        loss = double(l.data()[0]);
        ok = std::isfinite(loss);
        if (ok) {
          tape.backward(l);
          const double norm = clip_grad_norm(task.params, cfg.grad_clip_norm);
          ok = std::isfinite(norm) &&
               adamw_step(task.params, state, cfg, lr_schedule(step + 1, warmup, total, cfg.base_lr));
        }
      }
      ++step;
      report.losses.push_back(loss);
      report.metrics.add(step, "train", "loss", loss);
      if (!ok) {
        report.nonfinite = true;
        ++report.nonfinite_steps;
        if (cfg.abort_after > 0 && ++consecutive >= cfg.abort_after) {
          report.aborted = true;
          break;
        }
      } else {
        consecutive = 0;
      }
      const bool epoch_end = i + 1 == task.steps_per_epoch || step == total;
      const bool due = cfg.eval_every > 0 ? step % cfg.eval_every == 0 || step == total : epoch_end;
      if (due) {
        if (task.evaluate) task.evaluate(step, report.metrics);
        if (task.checkpoint) task.checkpoint(step, rng);
      }
    }
  }
  zero_grads(task.params);
  report.steps = step;
  report.metrics.add(step, "train", "nonfinite_steps", double(report.nonfinite_steps));
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

template <typename T>
VisionMetrics evaluate_vision(const VisionModel<T>& model, const ImageDataset& data,
                              const std::vector<std::size_t>& indices, std::size_t batch) {
  if (indices.empty()) throw DataError("evaluate_vision: no samples");
  NoGradGuard<T> guard;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < indices.size(); b += batch) {
    std::vector<std::size_t> idx(indices.begin() + std::ptrdiff_t(b),
                                 indices.begin() + std::ptrdiff_t(std::min(b + batch, indices.size())));
    const Tensor<float> images = data.batch_images(idx);
    Tensor<T> x;
    if constexpr (std::is_same_v<T, float>) {
      x = images;
    } else {
      x = Tensor<T>(images.shape(), std::vector<T>(images.data().begin(), images.data().end()));
    }
    const auto labels = data.batch_labels(idx);
    const Tensor<T> logits = model.forward(x, {});
    loss += double(cross_entropy_smoothed(logits, labels, 0.0).data()[0]) * double(idx.size());
    const std::size_t k = logits.shape()[1];
    auto lv = logits.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto row = lv.subspan(r * k, k);
      const auto arg = std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
      correct += static_cast<std::int64_t>(arg) == labels[r];
    }
  }
  return {loss / double(indices.size()), double(correct) / double(indices.size())};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> image_split(const ImageDataset& data,
                                                                          double val_fraction) {
  if (!(val_fraction >= 0 && val_fraction < 1))
    throw ParameterError("image_split: val_fraction must lie in [0, 1)");
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * double(data.count)));
  std::vector<std::size_t> train(data.count - n_val), val(n_val);
  for (std::size_t i = 0; i < train.size(); ++i) train[i] = i;
  for (std::size_t i = 0; i < n_val; ++i) val[i] = train.size() + i;
  return {train, val};
}

template <typename T>
TrainReport train_vision(VisionModel<T>& model, const ImageDataset& data,
                         const std::vector<std::size_t>& train_idx,
                         const std::vector<std::size_t>& val_idx, const OptimConfig& cfg,
                         CheckpointHook checkpoint) {
  if (train_idx.empty()) throw DataError("train_vision: empty training set");
  auto order = std::make_shared<std::vector<std::size_t>>(train_idx);
  auto pos = std::make_shared<std::size_t>(0);
  auto shuffle_rng = std::make_shared<Rng>(Rng(cfg.seed).fork("shuffle"));

  TrainTask<T> task;
  task.params = model.parameters();
  task.steps_per_epoch = (train_idx.size() + cfg.batch - 1) / cfg.batch;
  task.start_epoch = [order, pos, shuffle_rng](Rng&) {
    *pos = 0;
    for (std::size_t i = order->size(); i > 1; --i)
      std::swap((*order)[i - 1], (*order)[shuffle_rng->below(i)]);
  };
  task.batch_loss = [&model, &data, &cfg, order, pos](Rng& rng) {
    const std::size_t end = std::min(*pos + cfg.batch, order->size());
    std::vector<std::size_t> idx(order->begin() + std::ptrdiff_t(*pos),
                                 order->begin() + std::ptrdiff_t(end));
    *pos = end;
    const Tensor<float> images = data.batch_images(idx);
    Tensor<T> x;
    if constexpr (std::is_same_v<T, float>) {
      x = images;
    } else {
      x = Tensor<T>(images.shape(), std::vector<T>(images.data().begin(), images.data().end()));
    }
    ForwardContext ctx{true, &rng, nullptr};
    return cross_entropy_smoothed(model.forward(x, ctx), data.batch_labels(idx),
                                  cfg.label_smoothing);
  };
  if (!val_idx.empty())
    task.evaluate = [&model, &data, &val_idx, &cfg](std::size_t step, MetricsLog& log) {
      const auto m = evaluate_vision(model, data, val_idx, std::max<std::size_t>(cfg.batch, 64));
      log.add(step, "val", "loss", m.loss);
      log.add(step, "val", "top1", m.top1);
    };
  task.checkpoint = std::move(checkpoint);
  return train_loop(task, cfg);
}

template <typename T>
ForecastMetrics evaluate_forecast(const ForecastModel<T>& model, const SeriesDataset& data,
                                  Split split, std::size_t batch) {
  NoGradGuard<T> guard;
  WindowIterator it(data, split, batch, false, nullptr);
  WindowBatch<T> b;
  ForecastMetrics out;
  double se = 0.0, ae = 0.0;
  std::size_t n = 0;
  const std::size_t c = data.channels;
  while (it.next(b)) {
    const Tensor<T> pred = model.forward(b.inputs, {});
    auto p = pred.data();
    auto t = b.targets.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const std::size_t ch = i % c;
      const double e = data.destandardize(double(p[i]), ch) - data.destandardize(double(t[i]), ch);
      se += e * e;
      ae += std::abs(e);
    }
    n += p.size();
    out.windows += b.starts.size();
  }
  out.mse = se / double(n);
  out.mae = ae / double(n);
  return out;
}

ForecastMetrics persistence_baseline(const SeriesDataset& data, Split split) {
  const std::size_t count = data.window_count(split);
  if (count == 0) throw DataError(std::string(split_name(split)) + " split holds no window");
  const std::size_t begin = data.split_range(split).first;
  double se = 0.0, ae = 0.0;
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t last = begin + w + data.lookback - 1;
    for (std::size_t h = 1; h <= data.horizon; ++h)
      for (std::size_t ch = 0; ch < data.channels; ++ch) {
        const double e = data.at(last, ch) - data.at(last + h, ch);
        se += e * e;
        ae += std::abs(e);
      }
  }
  const double n = double(count * data.horizon * data.channels);
  return {se / n, ae / n, count};
}

template <typename T>
TrainReport train_forecast(ForecastModel<T>& model, const SeriesDataset& data,
                           const OptimConfig& cfg, CheckpointHook checkpoint) {
  if (data.lookback != model.config.lookback || data.horizon != model.config.horizon ||
      data.channels != model.config.channels)
    throw ContractError("train_forecast: dataset windows do not match the model configuration");
  auto shuffle_rng = std::make_shared<Rng>(Rng(cfg.seed).fork("shuffle"));
  auto iter = std::make_shared<WindowIterator>(data, Split::train, cfg.batch, true, shuffle_rng.get());
  const bool has_val = data.window_count(Split::val) > 0;

  TrainTask<T> task;
  task.params = model.parameters();
  task.steps_per_epoch = (iter->size() + cfg.batch - 1) / cfg.batch;
  bool first = true;
  task.start_epoch = [iter, shuffle_rng, first](Rng&) mutable {
    // The constructor already shuffled for the first pass.
    if (!first) iter->reset();
    first = false;
  };
  task.batch_loss = [&model, iter](Rng& rng) {
    WindowBatch<T> b;
    if (!iter->next(b)) throw ContractError("train_forecast: window iterator ran dry mid-epoch");
    ForwardContext ctx{true, &rng, nullptr};
    return mse_loss(model.forward(b.inputs, ctx), b.targets);
  };
  if (has_val)
    task.evaluate = [&model, &data, &cfg](std::size_t step, MetricsLog& log) {
      const auto m = evaluate_forecast(model, data, Split::val, std::max<std::size_t>(cfg.batch, 64));
      log.add(step, "val", "mse", m.mse);
      log.add(step, "val", "mae", m.mae);
    };
  task.checkpoint = std::move(checkpoint);
  return train_loop(task, cfg);
}

#define SIMBA_INSTANTIATE_TRAIN(T)                                                               \
  template void zero_grads(const ParamList<T>&);                                                 \
  template double clip_grad_norm(const ParamList<T>&, double);                                   \
  template bool adamw_step(const ParamList<T>&, AdamState&, const OptimConfig&, double);         \
  template TrainReport train_loop(TrainTask<T>&, const OptimConfig&);                            \
  template VisionMetrics evaluate_vision(const VisionModel<T>&, const ImageDataset&,             \
                                         const std::vector<std::size_t>&, std::size_t);          \
  template TrainReport train_vision(VisionModel<T>&, const ImageDataset&,                        \
                                    const std::vector<std::size_t>&,                             \
                                    const std::vector<std::size_t>&, const OptimConfig&,         \
                                    CheckpointHook);                           \
  template ForecastMetrics evaluate_forecast(const ForecastModel<T>&, const SeriesDataset&,      \
                                             Split, std::size_t);                                \
  template TrainReport train_forecast(ForecastModel<T>&, const SeriesDataset&,                   \
                                      const OptimConfig&, CheckpointHook);

SIMBA_INSTANTIATE_TRAIN(float)
SIMBA_INSTANTIATE_TRAIN(double)

}  // namespace simba
