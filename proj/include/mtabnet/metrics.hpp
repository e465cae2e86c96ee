#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtabnet/errors.hpp"
#include "mtabnet/model.hpp"

namespace mtabnet {

struct Metrics {
  double mae = 0.0;
  double r2 = 0.0;
  /// Percentages; empty when the class they condition on is absent.
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json("undefined");
}

inline nlohmann::json to_json(const Metrics& m) {
  return {{"mae", m.mae}, {"r2", m.r2}, {"sensitivity", optional_json(m.sensitivity)},
          {"specificity", optional_json(m.specificity)}};
}

inline double r_squared(std::span<const double> pred, std::span<const double> y) {
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double res = 0.0, tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    res += (y[i] - pred[i]) * (y[i] - pred[i]);
    tot += (y[i] - mean) * (y[i] - mean);
  }
  if (tot == 0.0) throw DegenerateError("R^2 undefined: the target has zero variance");
  return 1.0 - res / tot;
}

/// MAE and R^2 of gram predictions, plus LBW detection rates with LBW as the
/// positive class.
inline Metrics compute_metrics(std::span<const double> pred, std::span<const double> y) {
  if (pred.size() != y.size()) throw DimensionError("metrics: prediction and target lengths differ");
  if (y.empty()) throw DataError("metrics: empty evaluation set");
  Metrics m;
  double abs = 0.0;
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    abs += std::abs(pred[i] - y[i]);
    const bool actual = classify_bw(y[i]) == BwClass::kLbw;
    const bool predicted = classify_bw(pred[i]) == BwClass::kLbw;
    if (actual) {
      (predicted ? tp : fn) += 1;
    } else {
      (predicted ? fp : tn) += 1;
    }
  }
  m.mae = abs / static_cast<double>(y.size());
  m.r2 = r_squared(pred, y);
  if (tp + fn > 0) m.sensitivity = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tn + fp > 0) m.specificity = 100.0 * static_cast<double>(tn) / static_cast<double>(tn + fp);
  return m;
}

/// Two-sided tail probability of Student's t, via the regularized incomplete beta.
inline double t_two_sided_p(double t, double df) {
  const boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

struct TTest {
  double t = 0.0;
  double p = 1.0;
  std::size_t df = 0;
};

/// Two-sided paired t-test on a - b.
inline TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("paired t-test: samples differ in length");
  const std::size_t n = a.size();
  if (n < 2) throw DataError("paired t-test: need at least 2 pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) throw DegenerateError("paired t-test: differences have zero variance");
  TTest r;
  r.df = n - 1;
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = t_two_sided_p(r.t, static_cast<double>(r.df));
  return r;
}

}  // namespace mtabnet
