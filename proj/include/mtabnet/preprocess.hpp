#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtabnet/data.hpp"
#include "mtabnet/errors.hpp"
#include "mtabnet/model.hpp"
#include "mtabnet/random_forest.hpp"

namespace mtabnet {

/// Quantile by linear interpolation between order statistics: position
/// (n - 1) q in the sorted sample.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline std::vector<double> observed(const std::vector<double>& column) {
  std::vector<double> out;
  for (double v : column)
    if (!is_missing(v)) out.push_back(v);
  return out;
}

struct Fences {
  double lower = 0.0;
  double upper = 0.0;
};

inline Fences iqr_fences(const std::vector<double>& column, double k = 1.5) {
  const std::vector<double> v = observed(column);
  if (v.size() < 4) throw DataError("IQR filter needs at least 4 observed values, got " + std::to_string(v.size()));
  const double q1 = quantile(v, 0.25), q3 = quantile(v, 0.75);
  return {q1 - k * (q3 - q1), q3 + k * (q3 - q1)};
}

/// Keep-mask for Q1 - k IQR <= x <= Q3 + k IQR. Missing values are kept.
inline std::vector<bool> iqr_filter(const std::vector<double>& column, double k = 1.5) {
  const Fences f = iqr_fences(column, k);
  std::vector<bool> keep(column.size());
  for (std::size_t i = 0; i < column.size(); ++i) {
    keep[i] = is_missing(column[i]) || (column[i] >= f.lower && column[i] <= f.upper);
  }
  return keep;
}

/// Linear interpolation across interior gaps; edges take the nearest observation.
inline std::vector<double> interpolate_impute(std::vector<double> s) {
  std::vector<std::size_t> seen;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!is_missing(s[i])) seen.push_back(i);
  if (seen.empty()) throw DataError("interpolation: series has no observed values");
  for (std::size_t i = 0; i < seen.front(); ++i) s[i] = s[seen.front()];
  for (std::size_t i = seen.back() + 1; i < s.size(); ++i) s[i] = s[seen.back()];
  for (std::size_t k = 0; k + 1 < seen.size(); ++k) {
    const std::size_t a = seen[k], b = seen[k + 1];
    for (std::size_t i = a + 1; i < b; ++i) {
      const double t = static_cast<double>(i - a) / static_cast<double>(b - a);
      s[i] = s[a] + t * (s[b] - s[a]);
    }
  }
  return s;
}

/// Fills the gaps of `columns[target]` with a forest trained on the rows where
/// it is observed, using every complete column as a predictor.
inline std::vector<double> rf_impute(const std::vector<std::vector<double>>& columns, std::size_t target,
                                     bool categorical, const ForestConfig& base, std::uint64_t seed) {
  const std::vector<double>& col = columns.at(target);
  std::vector<std::size_t> predictors;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (c != target && std::none_of(columns[c].begin(), columns[c].end(), is_missing)) predictors.push_back(c);
  }
  std::vector<std::size_t> seen, holes;
  for (std::size_t r = 0; r < col.size(); ++r) (is_missing(col[r]) ? holes : seen).push_back(r);
  if (seen.empty()) throw DataError("random-forest imputation: column has no observed values");
  if (holes.empty()) return col;
  if (predictors.empty()) throw DataError("random-forest imputation: no complete predictor column");
  auto row = [&](std::size_t r) {
    std::vector<double> x;
    for (std::size_t c : predictors) x.push_back(columns[c][r]);
    return x;
  };
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (std::size_t r : seen) {
    x.push_back(row(r));
    y.push_back(col[r]);
  }
  ForestConfig cfg = base;
  cfg.classification = categorical;
  RandomForest forest;
  forest.fit(x, y, cfg, seed);
  std::vector<double> out = col;
  for (std::size_t r : holes) out[r] = forest.predict(row(r));
  return out;
}

// ---- scaling --------------------------------------------------------------------

enum class ScalerKind { kMinMax, kZScore };

inline const char* to_string(ScalerKind k) { return k == ScalerKind::kMinMax ? "minmax" : "zscore"; }
inline ScalerKind parse_scaler(const std::string& s) {
  if (s == "minmax") return ScalerKind::kMinMax;
  if (s == "zscore") return ScalerKind::kZScore;
  throw ConfigError("unknown scaler '" + s + "' (expected minmax or zscore)");
}

/// Per-column affine map x' = (x - offset) / span; a zero span maps to 0.
/// MinMax: offset = min, span = max - min. Z-score: offset = mean, span = sd.
struct Scaler {
  ScalerKind kind = ScalerKind::kMinMax;
  std::vector<double> offset;
  std::vector<double> span;

  static Scaler fit(const std::vector<std::vector<double>>& columns, ScalerKind kind) {
    Scaler s;
    s.kind = kind;
    for (const auto& col : columns) {
      const std::vector<double> v = observed(col);
      if (v.empty()) throw DataError("scaler: column has no observed values");
      if (kind == ScalerKind::kMinMax) {
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        s.offset.push_back(*lo);
        s.span.push_back(*hi - *lo);
      } else {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        s.offset.push_back(m);
        s.span.push_back(v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0);
      }
    }
    return s;
  }

  double transform(std::size_t c, double x) const {
    if (is_missing(x)) return x;
    return span[c] > 0.0 ? (x - offset[c]) / span[c] : 0.0;
  }
  double inverse(std::size_t c, double x) const { return span[c] > 0.0 ? offset[c] + x * span[c] : offset[c]; }

  nlohmann::json to_json() const { return {{"kind", to_string(kind)}, {"offset", offset}, {"span", span}}; }
  static Scaler from_json(const nlohmann::json& j) {
    return {parse_scaler(j.at("kind").get<std::string>()), j.at("offset").get<std::vector<double>>(),
            j.at("span").get<std::vector<double>>()};
  }
};

// ---- fitted pipeline ----------------------------------------------------------

struct PreprocessConfig {
  double iqr_k = 1.5;
  ScalerKind scaler = ScalerKind::kMinMax;
  ForestConfig forest;

  nlohmann::json to_json() const {
    return {{"iqr_k", iqr_k}, {"scaler", to_string(scaler)}, {"rf_trees", forest.n_trees}, {"rf_depth", forest.max_depth}};
  }
  static PreprocessConfig from_json(const nlohmann::json& j) {
    PreprocessConfig c;
    c.iqr_k = j.value("iqr_k", c.iqr_k);
    c.scaler = parse_scaler(j.value("scaler", std::string(to_string(c.scaler))));
    c.forest.n_trees = j.value("rf_trees", c.forest.n_trees);
    c.forest.max_depth = j.value("rf_depth", c.forest.max_depth);
    if (!(c.iqr_k > 0.0)) throw ConfigError("preprocess: iqr_k must be > 0");
    if (c.forest.n_trees < 1 || c.forest.max_depth < 1) throw ConfigError("preprocess: forest needs >= 1 tree and depth");
    return c;
  }
};

/// State fitted on a training split. Applying it never changes it.
struct FittedPreprocess {
  Schema schema;
  /// Per schema column: train mean (continuous) or mode (categorical) after imputation.
  std::vector<double> fill;
  /// Over schema.feature_indices(), in that order.
  Scaler scaler;
  TargetScale target;
  Fences target_fences;

  /// Interpolates time-ordered columns, fills remaining gaps, scales features.
  /// The target column (if present) is left in grams.
  Dataset apply(const Dataset& raw) const {
    if (!(raw.schema == schema)) throw CompatibilityError("preprocess: dataset schema differs from the fitted schema");
    Dataset out = raw;
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (c == schema.target_index()) continue;
      auto& col = out.columns[c];
      if (schema.column(c).time_ordered && std::any_of(col.begin(), col.end(), is_missing) &&
          std::any_of(col.begin(), col.end(), [](double v) { return !is_missing(v); })) {
        col = interpolate_impute(col);
      }
      for (double& v : col)
        if (is_missing(v)) v = fill[c];
    }
    const auto features = schema.feature_indices();
    for (std::size_t j = 0; j < features.size(); ++j)
      for (double& v : out.columns[features[j]]) v = scaler.transform(j, v);
    return out;
  }

  /// Raw feature values (schema feature order) to scaled model inputs.
  std::vector<Tensor> model_inputs(const std::vector<std::vector<double>>& rows) const {
    const auto features = schema.feature_indices();
    std::vector<Tensor> out;
    for (const std::string& m : schema.modalities()) {
      const auto cols = schema.columns_of(m);
      Tensor t({rows.size(), cols.size()});
      for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t k = 0; k < cols.size(); ++k) {
          const std::size_t j = static_cast<std::size_t>(std::find(features.begin(), features.end(), cols[k]) - features.begin());
          double v = rows[r].at(j);
          if (is_missing(v)) v = fill[cols[k]];
          t(r, k) = scaler.transform(j, v);
        }
      }
      out.push_back(std::move(t));
    }
    return out;
  }

  nlohmann::json to_json() const {
    return {{"schema", schema.to_json()}, {"fill", fill}, {"scaler", scaler.to_json()},
            {"target_min", target.min}, {"target_max", target.max},
            {"target_fences", {target_fences.lower, target_fences.upper}}};
  }

  static FittedPreprocess from_json(const nlohmann::json& j) {
    FittedPreprocess p;
    p.schema = Schema::from_json(j.at("schema"));
    p.fill = j.at("fill").get<std::vector<double>>();
    p.scaler = Scaler::from_json(j.at("scaler"));
    p.target = {j.at("target_min").get<double>(), j.at("target_max").get<double>()};
    const auto f = j.at("target_fences").get<std::vector<double>>();
    p.target_fences = {f.at(0), f.at(1)};
    if (p.fill.size() != p.schema.size() || p.scaler.offset.size() != p.schema.feature_indices().size()) {
      throw CorruptionError("preprocess state does not match its schema");
    }
    return p;
  }
};

struct PreparedTrain {
  FittedPreprocess state;
  /// Outlier-filtered, imputed, scaled features; target in grams.
  Dataset data;
  std::size_t outliers_removed = 0;
};

/// Fits the pipeline on a training split: drop rows without a target, IQR
/// filter on the target, interpolate time-ordered columns, random-forest
/// imputation of remaining gaps, then fit the feature scaler and target range.
inline PreparedTrain fit_preprocess(const Dataset& train, const PreprocessConfig& config, std::uint64_t seed) {
  const Schema& schema = train.schema;
  const std::size_t t = schema.target_index();
  std::vector<std::size_t> keep;
  const auto& y = train.columns[t];
  PreparedTrain out;
  out.state.schema = schema;
  out.state.target_fences = iqr_fences(y, config.iqr_k);
  const auto mask = iqr_filter(y, config.iqr_k);
  for (std::size_t r = 0; r < train.rows(); ++r) {
    if (is_missing(y[r])) continue;
    if (mask[r]) {
      keep.push_back(r);
    } else {
      ++out.outliers_removed;
    }
  }
  if (keep.size() < 2) throw DataError("preprocess: fewer than 2 training rows after outlier removal");
  Dataset d = train.select(keep);

  for (std::size_t c = 0; c < schema.size(); ++c) {
    auto& col = d.columns[c];
    if (c == t || !schema.column(c).time_ordered || std::none_of(col.begin(), col.end(), is_missing)) continue;
    col = interpolate_impute(col);
  }
  const std::vector<std::vector<double>> snapshot = d.columns;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (c == t || std::none_of(snapshot[c].begin(), snapshot[c].end(), is_missing)) continue;
    std::vector<std::vector<double>> predictors = snapshot;
    predictors[t].assign(d.rows(), kMissing);  // the target never predicts features
    d.columns[c] = rf_impute(predictors, c, schema.column(c).is_categorical(), config.forest, mix_seed(seed, c));
  }

  out.state.fill.assign(schema.size(), 0.0);
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& col = d.columns[c];
    if (schema.column(c).is_categorical()) {
      std::vector<std::size_t> counts(schema.column(c).categories.size(), 0);
      for (double v : col) ++counts.at(static_cast<std::size_t>(v));
      out.state.fill[c] = static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    } else {
      double s = 0.0;
      for (double v : col) s += v;
      out.state.fill[c] = s / static_cast<double>(col.size());
    }
  }
  std::vector<std::vector<double>> features;
  for (std::size_t c : schema.feature_indices()) features.push_back(d.columns[c]);
  out.state.scaler = Scaler::fit(features, config.scaler);
  const auto [lo, hi] = std::minmax_element(d.columns[t].begin(), d.columns[t].end());
  out.state.target = {*lo, *hi};
  out.data = out.state.apply(d);
  return out;
}

}  // namespace mtabnet
