#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mtabnet/config.hpp"
#include "mtabnet/data.hpp"
#include "mtabnet/metrics.hpp"
#include "mtabnet/model.hpp"
#include "mtabnet/preprocess.hpp"
#include "mtabnet/smogn.hpp"

namespace mtabnet {

// ---- optimizer ------------------------------------------------------------------

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update from the gradients stored in each parameter.
/// A parameter without a gradient buffer is treated as having zero gradient.
inline void adam_step(std::span<Parameter* const> params, AdamState& state, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  if (state.m.empty()) {
    for (Parameter* p : params) {
      state.m.push_back(Tensor::zeros_like(p->value));
      state.v.push_back(Tensor::zeros_like(p->value));
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam: state was built for a different parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!state.m[i].same_shape(p.value)) throw ContractError("adam: parameter shape changed");
    if (p.grad.empty()) continue;
    if (!p.grad.same_shape(p.value)) throw ContractError("adam: gradient shape does not match parameter");
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

// ---- state snapshots -------------------------------------------------------------

inline std::vector<Tensor> snapshot(Model& model) {
  std::vector<Tensor> out;
  model.visit([&](const std::string&, Parameter& p) { out.push_back(p.value); },
              [&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

inline void restore(Model& model, const std::vector<Tensor>& state) {
  std::size_t i = 0;
  model.visit([&](const std::string&, Parameter& p) { p.value = state.at(i++); },
              [&](const std::string&, Tensor& t) { t = state.at(i++); });
}

// ---- training loop ------------------------------------------------------------------

/// Model inputs with the target in scaled space (n x 1).
struct TrainData {
  std::vector<Tensor> inputs;
  Tensor target;

  std::size_t rows() const { return inputs.empty() ? 0 : inputs[0].rows(); }
};

/// Model inputs with the target in grams, used for validation.
struct EvalData {
  std::vector<Tensor> inputs;
  std::vector<double> grams;
};

struct TrainHistory {
  std::vector<double> loss;
  std::vector<double> validation_mae;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  Tensor out({rows.size(), x.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(x.data() + rows[i] * x.cols(), x.data() + (rows[i] + 1) * x.cols(), out.data() + i * x.cols());
  }
  return out;
}

inline double mean_absolute_error(std::span<const PredictionRecord> pred, std::span<const double> grams) {
  double s = 0.0;
  for (std::size_t i = 0; i < grams.size(); ++i) s += std::abs(pred[i].grams - grams[i]);
  return s / static_cast<double>(grams.size());
}

/// Shuffled mini-batches with ghost batch norm. With patience > 0 and a
/// validation set, stops after `patience` epochs without a better validation
/// MAE and restores the best parameters.
inline TrainHistory train(Model& model, const TrainData& data, const TrainConfig& config, std::uint64_t seed,
                          const EvalData* validation = nullptr) {
  config.validate();
  const std::size_t n = data.rows();
  if (n == 0) throw DataError("train: empty training split");
  if (n < 2) throw DataError("train: need at least 2 training rows for batch statistics");
  if (data.target.size() != n) throw DimensionError("train: target length differs from the inputs");
  Rng rng(seed);
  const auto params = model.parameters();
  AdamState adam;
  TrainHistory history;
  const bool early = config.patience > 0 && validation && !validation->grams.empty();
  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_state;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const std::vector<std::size_t> order = rng.permutation(n);
    const double lr = config.lr_step == 0 ? config.lr
                                          : config.lr * std::pow(config.lr_decay, static_cast<double>(epoch / config.lr_step));
    double total = 0.0;
    for (std::size_t begin = 0; begin < n;) {
      std::size_t end = std::min(n, begin + config.batch_size);
      if (n - end == 1) ++end;  // a lone trailing row joins this batch
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      std::vector<Tensor> xb;
      for (const Tensor& x : data.inputs) xb.push_back(gather_rows(x, rows));
      Tape tape;
      const ForwardResult r = model.forward(tape, xb, {Mode::kTrain, config.virtual_batch_size});
      const Var loss = model_loss(r.prediction, tape.constant(gather_rows(data.target, rows)), r.encodings,
                                  model.config().lambda_sparse);
      model.zero_grad();
      tape.backward(loss);
      adam_step(params, adam, lr, config.beta1, config.beta2, config.eps);
      total += loss.value()[0] * static_cast<double>(rows.size());
      begin = end;
    }
    history.loss.push_back(total / static_cast<double>(n));
    history.epochs_run = epoch + 1;
    if (early) {
      const auto pred = model.predict(validation->inputs);
      const double mae = mean_absolute_error(pred, validation->grams);
      history.validation_mae.push_back(mae);
      if (mae < best) {
        best = mae;
        best_state = snapshot(model);
        history.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        history.stopped_early = true;
        break;
      }
    }
  }
  if (early && !best_state.empty()) restore(model, best_state);
  if (!early) history.best_epoch = history.epochs_run - 1;
  return history;
}

// ---- parallel jobs ------------------------------------------------------------------

/// Runs fn(0..jobs-1) on up to `threads` workers. Results are indexed by job,
/// so ordering never depends on scheduling; the lowest-index failure is rethrown.
template <class T>
std::vector<T> parallel_jobs(std::size_t jobs, std::size_t threads, const std::function<T(std::size_t)>& fn) {
  std::vector<std::optional<T>> results(jobs);
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      try {
        results[j] = fn(j);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, jobs));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<T> out;
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

// ---- one fold -------------------------------------------------------------------

/// A trained model with the preprocessing it was trained behind.
struct TrainedPipeline {
  std::shared_ptr<Model> model;
  FittedPreprocess preprocess;
  ExperimentConfig config;
  TrainHistory history;
  std::size_t smogn_rows = 0;

  std::vector<PredictionRecord> predict(const Dataset& raw, bool traces = false) const {
    const Dataset prepared = preprocess.apply(raw);
    return model->predict(prepared.model_inputs(), traces);
  }
};

inline TrainData to_train_data(const Dataset& prepared, const TargetScale& scale) {
  TrainData d{prepared.model_inputs(), Tensor({prepared.rows(), 1})};
  const auto& y = prepared.target();
  for (std::size_t i = 0; i < y.size(); ++i) d.target[i] = scale.to_scaled(y[i]);
  return d;
}

/// Full pipeline on one training split: (validation holdout), preprocessing
/// fit, SMOGN on the training rows only, model training.
inline TrainedPipeline fit_pipeline(const Dataset& train_raw, const ExperimentConfig& config, std::uint64_t seed) {
  Dataset fit_rows = train_raw;
  std::optional<Dataset> holdout;
  if (config.train.patience > 0) {
    Rng rng(mix_seed(seed, 1));
    const auto perm = rng.permutation(train_raw.rows());
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.train.validation_fraction * static_cast<double>(perm.size()))));
    if (n_val + 4 > perm.size()) throw DataError("training split too small for a validation holdout");
    std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> rest(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
    std::sort(val.begin(), val.end());
    std::sort(rest.begin(), rest.end());
    holdout = train_raw.select(val);
    fit_rows = train_raw.select(rest);
  }
  PreparedTrain prepared = fit_preprocess(fit_rows, config.preprocess, mix_seed(seed, 2));
  Dataset train_set = std::move(prepared.data);
  TrainedPipeline out;
  if (config.use_smogn) {
    SmognResult aug = smogn_augment(train_set, config.smogn, mix_seed(seed, 3));
    out.smogn_rows = aug.origins.size();
    train_set = std::move(aug.data);
  }
  out.config = config;
  out.preprocess = prepared.state;
  out.model = std::make_shared<Model>(config.model_config(train_set.schema), mix_seed(seed, 4));
  out.model->set_target_scale(prepared.state.target);
  const TrainData data = to_train_data(train_set, prepared.state.target);
  std::optional<EvalData> val;
  if (holdout) {
    const Dataset v = prepared.state.apply(*holdout);
    std::vector<double> grams;
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < v.rows(); ++r)
      if (!is_missing(v.target()[r])) keep.push_back(r);
    const Dataset vk = v.select(keep);
    val = EvalData{vk.model_inputs(), vk.target()};
  }
  out.history = train(*out.model, data, config.train, mix_seed(seed, 5), val ? &*val : nullptr);
  return out;
}

// ---- cross-validation ------------------------------------------------------------------

struct FoldResult {
  std::size_t fold = 0;
  Metrics metrics;
  std::vector<double> loss_history;
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
  std::size_t smogn_rows = 0;
  std::size_t epochs_run = 0;
  /// Test rows (indices into the input dataset) and their predictions.
  std::vector<std::size_t> test_indices;
  std::vector<PredictionRecord> predictions;
  std::optional<TrainedPipeline> pipeline;
};

/// Seeded shuffle, then k contiguous folds; the first n % k folds get one extra row.
inline std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold: k must be >= 2");
  if (n < k) throw DataError("k-fold: " + std::to_string(n) + " rows cannot fill " + std::to_string(k) + " folds");
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t at = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(perm.begin() + static_cast<std::ptrdiff_t>(at), perm.begin() + static_cast<std::ptrdiff_t>(at + size));
    at += size;
  }
  return folds;
}

struct CvOptions {
  std::size_t threads = 1;
  bool keep_pipelines = false;
};

/// k-fold CV: every fold fits preprocessing and SMOGN on its own training rows
/// and is scored in grams on its untouched test rows. Fold f trains with seed
/// mix_seed(config.seed, f); the partition depends on config.seed only.
inline std::vector<FoldResult> kfold_cv(const Dataset& raw, const ExperimentConfig& config, const CvOptions& opts = {}) {
  config.validate();
  const Dataset data = config.modalities.empty() ? raw : raw.restrict_to(config.modalities);
  const auto folds = kfold_partition(data.rows(), config.folds, config.seed);
  return parallel_jobs<FoldResult>(folds.size(), opts.threads, [&](std::size_t f) {
    std::vector<std::size_t> train_rows;
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) train_rows.insert(train_rows.end(), folds[g].begin(), folds[g].end());
    std::sort(train_rows.begin(), train_rows.end());
    std::vector<std::size_t> test_rows = folds[f];
    std::sort(test_rows.begin(), test_rows.end());

    TrainedPipeline p = fit_pipeline(data.select(train_rows), config, mix_seed(config.seed, 100 + f));
    const Dataset test = data.select(test_rows);
    FoldResult r;
    r.fold = f;
    r.predictions = p.predict(test);
    std::vector<double> pred, truth;
    for (std::size_t i = 0; i < test.rows(); ++i) {
      if (is_missing(test.target()[i])) continue;
      pred.push_back(r.predictions[i].grams);
      truth.push_back(test.target()[i]);
    }
    r.metrics = compute_metrics(pred, truth);
    r.loss_history = p.history.loss;
    r.epochs_run = p.history.epochs_run;
    r.train_rows = train_rows.size();
    r.test_rows = test_rows.size();
    r.smogn_rows = p.smogn_rows;
    r.test_indices = std::move(test_rows);
    if (opts.keep_pipelines) r.pipeline = std::move(p);
    return r;
  });
}

struct CvSummary {
  double mean_mae = 0.0;
  double mean_r2 = 0.0;
  std::vector<double> fold_mae;
};

inline CvSummary summarize(const std::vector<FoldResult>& folds) {
  CvSummary s;
  for (const FoldResult& f : folds) {
    s.mean_mae += f.metrics.mae;
    s.mean_r2 += f.metrics.r2;
    s.fold_mae.push_back(f.metrics.mae);
  }
  s.mean_mae /= static_cast<double>(folds.size());
  s.mean_r2 /= static_cast<double>(folds.size());
  return s;
}

// ---- grid search ---------------------------------------------------------------------

/// Named candidate lists; names are JSON pointers into the experiment config,
/// e.g. "/encoder/n_steps".
using Grid = std::vector<std::pair<std::string, std::vector<json>>>;

struct GridRow {
  json assignment;
  ExperimentConfig config;
  CvSummary summary;
};

struct GridResult {
  std::vector<GridRow> rows;
  std::size_t best = 0;
};

inline std::vector<json> grid_assignments(const Grid& grid) {
  if (grid.empty()) throw ConfigError("grid search: empty grid");
  for (const auto& [name, values] : grid) {
    if (values.empty()) throw ConfigError("grid search: no candidates for '" + name + "'");
  }
  std::vector<json> out{json::object()};
  for (const auto& [name, values] : grid) {
    std::vector<json> next;
    for (const json& partial : out) {
      for (const json& v : values) {
        json a = partial;
        a[name] = v;
        next.push_back(std::move(a));
      }
    }
    out = std::move(next);
  }
  return out;
}

/// Exhaustive search scored by mean CV MAE on shared folds; ties go to the
/// higher mean R^2, then to the lexicographically smaller assignment.
inline GridResult grid_search(const Dataset& data, const ExperimentConfig& base, const Grid& grid,
                              const CvOptions& opts = {}) {
  GridResult result;
  for (const json& a : grid_assignments(grid)) {
    json cfg = to_json(base);
    for (const auto& [path, value] : a.items()) {
      try {
        const json::json_pointer ptr(path);
        if (!cfg.contains(ptr)) throw ConfigError("grid search: '" + path + "' is not a config field");
        cfg[ptr] = value;
      } catch (const json::exception& e) {
        throw ConfigError("grid search: bad field '" + path + "': " + e.what());
      }
    }
    GridRow row{a, experiment_from_json(cfg), {}};
    row.summary = summarize(kfold_cv(data, row.config, opts));
    result.rows.push_back(std::move(row));
  }
  for (std::size_t i = 1; i < result.rows.size(); ++i) {
    const GridRow& c = result.rows[i];
    const GridRow& b = result.rows[result.best];
    if (c.summary.mean_mae < b.summary.mean_mae ||
        (c.summary.mean_mae == b.summary.mean_mae &&
         (c.summary.mean_r2 > b.summary.mean_r2 ||
          (c.summary.mean_r2 == b.summary.mean_r2 && c.assignment.dump() < b.assignment.dump())))) {
      result.best = i;
    }
  }
  return result;
}

}  // namespace mtabnet
