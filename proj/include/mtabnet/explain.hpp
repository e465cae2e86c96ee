#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtabnet/data.hpp"
#include "mtabnet/trainer.hpp"

namespace mtabnet {

/// Predictions in grams for raw feature rows laid out in schema feature order.
using Predictor = std::function<std::vector<double>(const std::vector<std::vector<double>>&)>;

inline Predictor pipeline_predictor(const TrainedPipeline& p) {
  return [&p](const std::vector<std::vector<double>>& rows) {
    std::vector<double> out;
    if (rows.empty()) return out;
    for (const PredictionRecord& r : p.model->predict(p.preprocess.model_inputs(rows))) out.push_back(r.grams);
    return out;
  };
}

/// Raw feature rows of a dataset, in schema feature order.
inline std::vector<std::vector<double>> feature_rows(const Dataset& data) {
  const auto features = data.schema.feature_indices();
  std::vector<std::vector<double>> rows(data.rows(), std::vector<double>(features.size()));
  for (std::size_t r = 0; r < data.rows(); ++r)
    for (std::size_t j = 0; j < features.size(); ++j) rows[r][j] = data.columns[features[j]][r];
  return rows;
}

/// Observed mean per continuous feature, most frequent code per categorical
/// (smallest code on ties).
inline std::vector<double> reference_row(const Dataset& data) {
  const auto features = data.schema.feature_indices();
  std::vector<double> out;
  for (std::size_t c : features) {
    const std::vector<double> v = observed(data.columns[c]);
    if (v.empty()) throw DataError("column '" + data.schema.column(c).name + "' has no observed values");
    if (data.schema.column(c).is_categorical()) {
      std::vector<std::size_t> counts(data.schema.column(c).categories.size(), 0);
      for (double x : v) ++counts.at(static_cast<std::size_t>(x));
      out.push_back(static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin()));
    } else {
      out.push_back(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
    }
  }
  return out;
}

// ---- mask importance -------------------------------------------------------------

struct ImportanceReport {
  std::vector<std::string> features;
  std::vector<std::string> modalities;
  std::vector<double> scores;

  /// Feature names by descending score; ties keep schema order.
  std::vector<std::string> ranking() const {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<std::string> out;
    for (std::size_t i : idx) out.push_back(features[i]);
    return out;
  }
};

/// Mean mask weight over samples and steps, per modality, scaled so the top
/// feature scores exactly 1. `inputs` are model inputs for `schema`.
inline ImportanceReport mask_importance(Model& model, std::span<const Tensor> inputs, const Schema& schema) {
  if (inputs.empty() || inputs[0].rows() == 0) throw DataError("importance: empty dataset");
  const auto mods = schema.modalities();
  if (mods.size() != model.modality_count()) throw CompatibilityError("importance: schema and model modalities differ");
  const auto records = model.predict(inputs, true);
  ImportanceReport rep;
  for (std::size_t m = 0; m < mods.size(); ++m) {
    const auto cols = schema.columns_of(mods[m]);
    std::vector<double> acc(cols.size(), 0.0);
    std::size_t count = 0;
    for (const PredictionRecord& r : records) {
      for (const auto& step : r.traces[m]) {
        for (std::size_t j = 0; j < cols.size(); ++j) acc[j] += step[j];
        ++count;
      }
    }
    for (std::size_t j = 0; j < cols.size(); ++j) {
      rep.features.push_back(schema.column(cols[j]).name);
      rep.modalities.push_back(mods[m]);
      rep.scores.push_back(acc[j] / static_cast<double>(count));
    }
  }
  const double top = *std::max_element(rep.scores.begin(), rep.scores.end());
  if (!(top > 0.0)) throw DegenerateError("importance: every mask weight is zero");
  for (double& s : rep.scores) s /= top;
  return rep;
}

inline ImportanceReport mask_importance(const TrainedPipeline& p, const Dataset& raw) {
  if (raw.rows() == 0) throw DataError("importance: empty dataset");
  const Dataset prepared = p.preprocess.apply(raw);
  return mask_importance(*p.model, prepared.model_inputs(), prepared.schema);
}

// ---- sensitivity analysis -------------------------------------------------------------

struct SensitivityRow {
  std::string feature;
  std::string modality;
  std::vector<double> values;
  std::vector<double> predictions;
  /// Mean |prediction - baseline| / baseline x 100.
  double mean_change_pct = 0.0;
};

struct SensitivityReport {
  std::vector<double> baseline_row;
  double baseline = 0.0;
  std::vector<SensitivityRow> rows;
};

/// min, median of observed values in [min, mean], median of those in [mean, max], max.
inline std::vector<double> representative_values(const std::vector<double>& column) {
  const std::vector<double> v = observed(column);
  if (v.empty()) throw DataError("sensitivity: column has no observed values");
  const double lo = *std::min_element(v.begin(), v.end());
  const double hi = *std::max_element(v.begin(), v.end());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  std::vector<double> below, above;
  for (double x : v) {
    if (x <= mean) below.push_back(x);
    if (x >= mean) above.push_back(x);
  }
  return {lo, quantile(below, 0.5), quantile(above, 0.5), hi};
}

/// Holds every feature at its reference value and varies one at a time.
inline SensitivityReport sensitivity_analysis(const Predictor& predict, const Dataset& data) {
  if (data.rows() == 0) throw DataError("sensitivity: empty dataset");
  const Schema& schema = data.schema;
  const auto features = schema.feature_indices();
  SensitivityReport rep;
  rep.baseline_row = reference_row(data);
  rep.baseline = predict({rep.baseline_row}).at(0);
  if (rep.baseline == 0.0) throw DegenerateError("sensitivity: baseline prediction is 0");

  std::vector<std::vector<double>> batch;
  for (std::size_t j = 0; j < features.size(); ++j) {
    const ColumnSchema& col = schema.column(features[j]);
    SensitivityRow row{col.name, col.modality, {}, {}, 0.0};
    if (col.is_categorical()) {
      for (std::size_t k = 0; k < col.categories.size(); ++k) row.values.push_back(static_cast<double>(k));
    } else {
      row.values = representative_values(data.columns[features[j]]);
    }
    for (double v : row.values) {
      batch.push_back(rep.baseline_row);
      batch.back()[j] = v;
    }
    rep.rows.push_back(std::move(row));
  }
  const std::vector<double> pred = predict(batch);
  std::size_t at = 0;
  for (SensitivityRow& row : rep.rows) {
    double acc = 0.0;
    for (std::size_t k = 0; k < row.values.size(); ++k, ++at) {
      row.predictions.push_back(pred[at]);
      acc += std::abs(pred[at] - rep.baseline) / std::abs(rep.baseline) * 100.0;
    }
    row.mean_change_pct = acc / static_cast<double>(row.values.size());
  }
  return rep;
}

// ---- permutation Shapley -----------------------------------------------------------------

struct ShapReport {
  std::vector<double> background;
  double background_prediction = 0.0;
  /// attributions[i][j]: grams attributed to feature j for sample i.
  std::vector<std::vector<double>> attributions;
  std::vector<double> predictions;
  /// Orders actually walked per sample; every order when `exact`.
  std::size_t permutations = 0;
  bool exact = false;
};

/// min(d!, cap) without overflow.
inline std::size_t capped_factorial(std::size_t d, std::size_t cap) {
  std::size_t f = 1;
  for (std::size_t k = 2; k <= d; ++k) {
    if (f > cap / k) return cap;
    f *= k;
  }
  return std::min(f, cap);
}

/// Each order walks the features from the background to the sample and
/// credits every prediction change to the feature just switched; the walk
/// telescopes, so attributions always sum to f(x) - f(background). When the
/// budget covers every order they are all enumerated (exact Shapley values);
/// otherwise orders are drawn in antithetic pairs.
inline ShapReport shapley_values(const Predictor& predict, const std::vector<std::vector<double>>& samples,
                                 const std::vector<double>& background, std::size_t n_permutations,
                                 std::uint64_t seed, std::size_t threads = 1) {
  if (n_permutations < 1) throw ConfigError("shapley: need at least one permutation");
  const std::size_t d = background.size();
  if (d == 0) throw DataError("shapley: no features");
  for (const auto& s : samples)
    if (s.size() != d) throw DimensionError("shapley: sample width differs from the background");
  ShapReport rep;
  rep.background = background;
  rep.background_prediction = predict({background}).at(0);
  const std::size_t orders_total = capped_factorial(d, n_permutations + 1);
  rep.exact = orders_total <= n_permutations;
  rep.permutations = rep.exact ? orders_total : n_permutations;

  struct Out {
    std::vector<double> phi;
    double prediction;
  };
  const auto results = parallel_jobs<Out>(samples.size(), threads, [&](std::size_t i) {
    const std::vector<double>& x = samples[i];
    std::vector<std::vector<std::size_t>> orders;
    std::vector<std::size_t> perm(d);
    std::iota(perm.begin(), perm.end(), 0);
    if (rep.exact) {
      do orders.push_back(perm);
      while (std::next_permutation(perm.begin(), perm.end()));
    } else {
      Rng rng(mix_seed(seed, i));
      while (orders.size() < n_permutations) {
        rng.shuffle(perm);
        orders.push_back(perm);
        if (orders.size() < n_permutations) orders.emplace_back(perm.rbegin(), perm.rend());
      }
    }
    std::vector<std::vector<double>> walk;
    walk.reserve(orders.size() * d);
    for (const auto& order : orders) {
      std::vector<double> row = background;
      for (std::size_t j : order) {
        row[j] = x[j];
        walk.push_back(row);
      }
    }
    const std::vector<double> f = predict(walk);
    Out out{std::vector<double>(d, 0.0), f.empty() ? rep.background_prediction : f.back()};
    std::size_t at = 0;
    for (const auto& order : orders) {
      double prev = rep.background_prediction;
      for (std::size_t j : order) {
        out.phi[j] += f[at] - prev;
        prev = f[at++];
      }
    }
    for (double& v : out.phi) v /= static_cast<double>(orders.size());
    return out;
  });
  for (const Out& o : results) {
    rep.attributions.push_back(o.phi);
    rep.predictions.push_back(o.prediction);
  }
  return rep;
}

// ---- tables ------------------------------------------------------------------------------

inline std::string to_csv(const ImportanceReport& r) {
  std::ostringstream os;
  os << "feature,modality,importance\n";
  for (std::size_t i = 0; i < r.features.size(); ++i) {
    os << csv::quote(r.features[i]) << ',' << r.modalities[i] << ',' << csv::format(r.scores[i]) << '\n';
  }
  return os.str();
}

inline std::string to_csv(const SensitivityReport& r) {
  std::ostringstream os;
  os << "feature,modality,mean_change_pct,values,predictions\n";
  auto join = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + csv::format(v[i]);
    return s;
  };
  for (const SensitivityRow& row : r.rows) {
    os << csv::quote(row.feature) << ',' << row.modality << ',' << csv::format(row.mean_change_pct) << ','
       << join(row.values) << ',' << join(row.predictions) << '\n';
  }
  return os.str();
}

inline std::string to_csv(const ShapReport& r, const std::vector<std::string>& features) {
  std::ostringstream os;
  os << "sample,prediction";
  for (const std::string& f : features) os << ',' << csv::quote(f);
  os << '\n';
  for (std::size_t i = 0; i < r.attributions.size(); ++i) {
    os << i << ',' << csv::format(r.predictions[i]);
    for (double v : r.attributions[i]) os << ',' << csv::format(v);
    os << '\n';
  }
  return os.str();
}

}  // namespace mtabnet
