#pragma once

// Huber loss, Adam with staircase exponential decay, the batch training loop
// with best-validation selection, evaluation, and k-fold cross-validation.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mac/autodiff.hpp"
#include "mac/data.hpp"
#include "mac/metrics.hpp"
#include "mac/model.hpp"
#include "mac/random.hpp"

namespace mac {

/// Huber value of a single residual.
inline double huber(double error, double delta) {
  const double a = std::abs(error);
  return a <= delta ? 0.5 * error * error : delta * (a - 0.5 * delta);
}

/// Mean Huber loss of predictions against constant targets.
inline Tensor huber_loss(const Tensor& pred, std::span<const double> target, double delta) {
  if (!(delta > 0.0)) throw ContractError("huber_loss: delta must be positive");
  if (pred.size() != target.size()) {
    throw DimensionError("huber_loss: " + std::to_string(target.size()) + " targets for predictions " +
                         shape_string(pred.shape()));
  }
  const std::size_t n = pred.size();
  double total = 0.0;
  std::vector<double> slope(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = pred.data()[i] - target[i];
    total += huber(e, delta);
    slope[i] = std::clamp(e, -delta, delta) / static_cast<double>(n);
  }
  return make_op({1}, {total / static_cast<double>(n)}, {pred}, [pred, slope = std::move(slope)](std::span<const double> g) {
    auto gp = pred.grad_sink();
    for (std::size_t i = 0; i < slope.size(); ++i) gp[i] += g[0] * slope[i];
  });
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of every tensor from its accumulated grad.
inline void adam_step(std::span<Tensor> params, AdamState& state, double lr, const AdamConfig& cfg = {}) {
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }
}

struct TrainConfig {
  double lr0 = 1e-3;
  double decay_rate = 0.96;
  std::size_t decay_every = 10;  ///< epochs per decay step
  std::size_t epochs = 300;
  std::size_t batch_size = 1;
  std::optional<double> huber_delta;  ///< overrides the model's δ when set
  std::uint64_t seed = 0;
  AdamConfig adam;
  bool select_best = true;  ///< keep the epoch with the lowest validation MAE

  void validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("initial learning rate must be positive");
    if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw ConfigError("decay rate must be in (0, 1]");
    if (decay_every == 0) throw ConfigError("decay interval must be at least one epoch");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (huber_delta && !(*huber_delta > 0.0)) throw ConfigError("huber delta must be positive");
  }
};

inline Json train_config_to_json(const TrainConfig& c) {
  return Json{{"lr0", c.lr0},
              {"decay_rate", c.decay_rate},
              {"decay_every", c.decay_every},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"huber_delta", c.huber_delta ? Json(*c.huber_delta) : Json(nullptr)},
              {"seed", c.seed},
              {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
              {"select_best", c.select_best}};
}

inline TrainConfig train_config_from_json(const Json& j, TrainConfig c = {}) {
  try {
    c.lr0 = j.value("lr0", c.lr0);
    c.decay_rate = j.value("decay_rate", c.decay_rate);
    c.decay_every = j.value("decay_every", c.decay_every);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("huber_delta")) {
      c.huber_delta = j.at("huber_delta").is_null() ? std::nullopt : std::optional<double>(j.at("huber_delta").get<double>());
    }
    c.seed = j.value("seed", c.seed);
    c.select_best = j.value("select_best", c.select_best);
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  return c;
}

/// Staircase decay: lr0 · rate^floor(epoch / every).
inline double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(cfg.decay_rate, static_cast<double>(epoch / cfg.decay_every));
}

/// Predictions in original units, row-major [n×outputs].
inline std::vector<double> predict(const MacParams& params, const EncodedDataset& data, const Transform& t) {
  NoGradGuard no_grad;
  const std::size_t k = params.output_count();
  std::vector<double> out;
  out.reserve(data.size() * k);
  for (const auto& s : data.samples) {
    const Tensor y = forward_sample(params, s);
    for (std::size_t j = 0; j < k; ++j) out.push_back(t.destandardize(j, y.data()[j]));
  }
  return out;
}

inline std::vector<double> raw_targets(const EncodedDataset& data) {
  std::vector<double> out;
  for (const auto& s : data.samples) out.insert(out.end(), s.raw_targets.begin(), s.raw_targets.end());
  return out;
}

/// Metrics in original units.
inline MetricsReport evaluate(const MacParams& params, const EncodedDataset& data, const Transform& t) {
  if (data.samples.empty()) throw DataError("cannot evaluate on an empty dataset");
  const auto pred = predict(params, data, t);
  return compute_metrics(raw_targets(data), pred, data.layout.outputs);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_mae;
  std::optional<double> val_mape;
};

struct TrainResult {
  MacParams params;
  std::vector<EpochRecord> history;
  std::optional<std::size_t> best_epoch;
};

inline Json history_to_json(const std::vector<EpochRecord>& history) {
  Json arr = Json::array();
  for (const auto& r : history) {
    arr.push_back(Json{{"epoch", r.epoch},
                       {"lr", r.lr},
                       {"train_loss", r.train_loss},
                       {"val_mae", r.val_mae ? Json(*r.val_mae) : Json(nullptr)},
                       {"val_mape", r.val_mape ? Json(*r.val_mape) : Json(nullptr)}});
  }
  return arr;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training (the default batch of one gives per-sample updates).
/// Sample order is reshuffled every epoch from cfg.seed.
inline TrainResult train(const MacParams& initial, const EncodedDataset& train_set, const EncodedDataset& val_set,
                         const Transform& transform, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  TrainResult result;
  MacParams params = initial.clone();
  result.params = params.clone();
  if (cfg.epochs == 0) return result;
  if (train_set.samples.empty()) throw DataError("training set is empty");

  const double delta = cfg.huber_delta.value_or(params.config.huber_delta);
  std::vector<Tensor> tensors = params.parameters();
  AdamState adam;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double best_mae = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      for (auto& t : tensors) t.zero_grad();
      std::vector<Tensor> losses;
      for (std::size_t b = begin; b < end; ++b) {
        const auto& sample = train_set.samples[order[b]];
        const Tensor loss = huber_loss(forward_sample(params, sample), sample.targets, delta);
        if (!std::isfinite(loss.item())) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", sample row " +
                              std::to_string(sample.row));
        }
        loss_sum += loss.item();
        losses.push_back(loss);
      }
      const Tensor batch_loss = losses.size() == 1 ? losses[0] : mean(concat_rows([&] {
        std::vector<Tensor> rows;
        for (const auto& l : losses) rows.push_back(reshape(l, {1, 1}));
        return rows;
      }()));
      batch_loss.backward();
      adam_step(tensors, adam, lr, cfg.adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    if (!val_set.samples.empty()) {
      const MetricsReport rep = evaluate(params, val_set, transform);
      rec.val_mae = rep.aggregate.mae;
      rec.val_mape = rep.aggregate.mape;
      if (cfg.select_best && rep.aggregate.mae < best_mae) {
        best_mae = rep.aggregate.mae;
        result.best_epoch = epoch;
        result.params = params.clone();
      }
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!cfg.select_best || val_set.samples.empty()) {
    result.params = params.clone();
    result.best_epoch.reset();
  }
  return result;
}

struct CvResult {
  std::vector<MetricsReport> folds;
  MetricsReport average;
};

/// k-fold cross-validation over a raw dataset. Each fold fits its own
/// transform on its training part, trains for the configured epochs without
/// best-epoch selection, and is scored on its held-out part.
inline CvResult cross_validate(const Dataset& data, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                               std::size_t k = 5, std::uint64_t seed = 0) {
  if (k < 2) throw ContractError("cross_validate: k must be at least 2");
  const auto folds = kfold(data.size(), k, seed);
  CvResult result;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const Dataset fold_train = subset(data, folds[f].train);
    const Dataset fold_val = subset(data, folds[f].validation);
    if (fold_val.samples.empty() || fold_train.samples.empty()) throw DataError("fold " + std::to_string(f) + " is empty");
    const auto [transform, train_enc] = fit_transform(fold_train);
    const EncodedDataset val_enc = apply_transform(transform, fold_val);
    const MacParams init = init_params(transform.model_layout, transform.vocab_sizes(), model_cfg, seed + 1 + f);
    TrainConfig cfg = train_cfg;
    cfg.select_best = false;
    cfg.seed = train_cfg.seed + f;
    const TrainResult trained = train(init, train_enc, EncodedDataset{}, transform, cfg);
    result.folds.push_back(evaluate(trained.params, val_enc, transform));
  }
  result.average = average_reports(result.folds);
  return result;
}

}  // namespace mac
