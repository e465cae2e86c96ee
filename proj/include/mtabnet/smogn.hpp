#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtabnet/data.hpp"
#include "mtabnet/preprocess.hpp"
#include "mtabnet/random.hpp"

namespace mtabnet {

struct SmognConfig {
  double threshold = 0.8;
  std::size_t k = 5;
  /// Gaussian perturbation sd as a fraction of each feature's sd.
  double perturbation = 0.05;
  /// SMOTER is used when the neighbour lies within factor x the median
  /// pairwise distance of the rare bump.
  double distance_factor = 0.5;
  /// Synthetic rows generated per rare row.
  double ratio = 2.0;

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("smogn: threshold must be in (0,1)");
    if (k < 1) throw ConfigError("smogn: k must be >= 1");
    if (!(perturbation > 0.0)) throw ConfigError("smogn: perturbation must be > 0");
    if (!(distance_factor > 0.0)) throw ConfigError("smogn: distance factor must be > 0");
    if (!(ratio >= 0.0)) throw ConfigError("smogn: ratio must be >= 0");
  }

  nlohmann::json to_json() const {
    return {{"threshold", threshold}, {"k", k}, {"perturbation", perturbation},
            {"distance_factor", distance_factor}, {"ratio", ratio}};
  }
  static SmognConfig from_json(const nlohmann::json& j) {
    SmognConfig c;
    c.threshold = j.value("threshold", c.threshold);
    c.k = j.value("k", c.k);
    c.perturbation = j.value("perturbation", c.perturbation);
    c.distance_factor = j.value("distance_factor", c.distance_factor);
    c.ratio = j.value("ratio", c.ratio);
    c.validate();
    return c;
  }
};

/// Boxplot relevance: 1 at the fences Q1 - 1.5 IQR and Q3 + 1.5 IQR and beyond,
/// 0 at the median, joined by the monotone cubic 3t^2 - 2t^3 on each side.
class Relevance {
 public:
  explicit Relevance(const std::vector<double>& y) {
    const std::vector<double> v = observed(y);
    if (v.size() < 4) throw DataError("relevance needs at least 4 target values");
    const double q1 = quantile(v, 0.25), q3 = quantile(v, 0.75);
    median_ = quantile(v, 0.5);
    lower_ = q1 - 1.5 * (q3 - q1);
    upper_ = q3 + 1.5 * (q3 - q1);
    degenerate_ = q3 == q1;
  }

  double operator()(double y) const {
    if (degenerate_) return 0.0;
    double t;
    if (y <= median_) {
      t = median_ > lower_ ? (median_ - y) / (median_ - lower_) : 0.0;
    } else {
      t = upper_ > median_ ? (y - median_) / (upper_ - median_) : 0.0;
    }
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
  }

  double median() const { return median_; }

 private:
  double median_ = 0.0, lower_ = 0.0, upper_ = 0.0;
  bool degenerate_ = false;
};

struct SyntheticOrigin {
  std::size_t seed = 0;
  /// Neighbour row for SMOTER samples; npos for Gaussian-noise samples.
  std::size_t neighbour = std::numeric_limits<std::size_t>::max();
};

struct SmognResult {
  Dataset data;
  std::size_t original_rows = 0;
  std::size_t rare_rows = 0;
  /// origins[i] describes row original_rows + i.
  std::vector<SyntheticOrigin> origins;
  /// Set when no row is rare; the input is returned unchanged.
  bool no_rare = false;
};

/// Appends synthetic rows in the rare regions of the target. Original rows are
/// copied untouched and stay first.
inline SmognResult smogn_augment(const Dataset& train, const SmognConfig& config, std::uint64_t seed) {
  config.validate();
  const Schema& schema = train.schema;
  const std::size_t n = train.rows();
  const std::vector<double>& y = train.target();
  SmognResult out;
  out.data = train;
  out.original_rows = n;
  const Relevance phi(y);

  std::vector<std::size_t> low, high;
  for (std::size_t i = 0; i < n; ++i) {
    if (phi(y[i]) > config.threshold) (y[i] < phi.median() ? low : high).push_back(i);
  }
  out.rare_rows = low.size() + high.size();
  if (out.rare_rows == 0) {
    out.no_rare = true;
    return out;
  }

  const auto features = schema.feature_indices();
  const std::size_t t = schema.target_index();
  std::vector<double> sd(features.size(), 0.0);
  for (std::size_t j = 0; j < features.size(); ++j) {
    const auto& col = train.columns[features[j]];
    double m = 0.0;
    for (double v : col) m += v;
    m /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : col) ss += (v - m) * (v - m);
    sd[j] = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  }
  double y_sd = 0.0;
  {
    double m = 0.0;
    for (double v : y) m += v;
    m /= static_cast<double>(n);
    for (double v : y) y_sd += (v - m) * (v - m);
    y_sd = n > 1 ? std::sqrt(y_sd / static_cast<double>(n - 1)) : 0.0;
  }

  auto feature_distance = [&](auto&& a, auto&& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < features.size(); ++j) {
      const double va = a(j), vb = b(j);
      if (schema.column(features[j]).is_categorical()) {
        s += va == vb ? 0.0 : 1.0;
      } else {
        s += (va - vb) * (va - vb);
      }
    }
    return std::sqrt(s);
  };
  auto row_of = [&](std::size_t r) { return [&, r](std::size_t j) { return train.columns[features[j]][r]; }; };

  Rng rng(seed);
  for (const std::vector<std::size_t>* bump : {&low, &high}) {
    const std::size_t b = bump->size();
    if (b == 0) continue;
    std::vector<std::vector<double>> dist(b, std::vector<double>(b, 0.0));
    std::vector<double> pairwise;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = i + 1; j < b; ++j) {
        dist[i][j] = dist[j][i] = feature_distance(row_of((*bump)[i]), row_of((*bump)[j]));
        pairwise.push_back(dist[i][j]);
      }
    const double max_d = pairwise.empty() ? 0.0 : config.distance_factor * quantile(pairwise, 0.5);
    std::vector<std::vector<std::size_t>> neighbours(b);
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<std::size_t> order;
      for (std::size_t j = 0; j < b; ++j)
        if (j != i) order.push_back(j);
      std::sort(order.begin(), order.end(), [&](std::size_t p, std::size_t q) {
        return dist[i][p] < dist[i][q] || (dist[i][p] == dist[i][q] && p < q);
      });
      order.resize(std::min(config.k, order.size()));
      neighbours[i] = std::move(order);
    }

    const auto count = static_cast<std::size_t>(std::llround(config.ratio * static_cast<double>(b)));
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t i = s % b;
      const std::size_t seed_row = (*bump)[i];
      std::vector<double> row(schema.size());
      SyntheticOrigin origin{seed_row};
      const bool has_nb = !neighbours[i].empty();
      const std::size_t nb = has_nb ? neighbours[i][rng.index(neighbours[i].size())] : 0;
      if (has_nb && dist[i][nb] < max_d) {
        const std::size_t nb_row = (*bump)[nb];
        origin.neighbour = nb_row;
        const double u = rng.uniform();
        for (std::size_t j = 0; j < features.size(); ++j) {
          const double a = train.columns[features[j]][seed_row], c = train.columns[features[j]][nb_row];
          if (schema.column(features[j]).is_categorical()) {
            row[features[j]] = rng.uniform() < 0.5 ? a : c;
          } else {
            row[features[j]] = a + u * (c - a);
          }
        }
        auto synth = [&](std::size_t j) { return row[features[j]]; };
        const double d1 = feature_distance(synth, row_of(seed_row));
        const double d2 = feature_distance(synth, row_of(nb_row));
        row[t] = d1 + d2 > 0.0 ? (d2 * y[seed_row] + d1 * y[nb_row]) / (d1 + d2) : y[seed_row];
      } else {
        for (std::size_t j = 0; j < features.size(); ++j) {
          const double a = train.columns[features[j]][seed_row];
          row[features[j]] =
              schema.column(features[j]).is_categorical() ? a : a + rng.normal(0.0, config.perturbation * sd[j]);
        }
        row[t] = y[seed_row] + rng.normal(0.0, config.perturbation * y_sd);
      }
      for (std::size_t c = 0; c < schema.size(); ++c) out.data.columns[c].push_back(row[c]);
      out.origins.push_back(origin);
    }
  }
  return out;
}

}  // namespace mtabnet
