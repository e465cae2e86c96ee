#pragma once

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtabnet/data.hpp"
#include "mtabnet/errors.hpp"
#include "mtabnet/random.hpp"

namespace mtabnet {

enum class Marginal { kTruncatedNormal, kCount };

struct FeatureProfile {
  std::string name;
  std::string modality;
  ColumnKind kind = ColumnKind::kContinuous;
  std::string units;
  Marginal marginal = Marginal::kTruncatedNormal;
  double mean = 0.0;
  double sd = 1.0;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  std::vector<std::string> categories;
  std::vector<double> probs;

  bool is_categorical() const { return kind == ColumnKind::kCategorical; }

  /// Mean and sd of the value as the generator emits it (category codes for
  /// categoricals); used to standardize features inside the generative rule.
  std::pair<double, double> code_moments() const {
    if (!is_categorical()) return {mean, sd};
    double m = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
      m += probs[k] * static_cast<double>(k);
      m2 += probs[k] * static_cast<double>(k * k);
    }
    return {m, std::sqrt(std::max(0.0, m2 - m * m))};
  }
};

struct CohortProfile {
  std::string name;
  std::vector<FeatureProfile> features;
  std::string target_name = "birth_weight";
  double target_mean = 0.0;
  double target_sd = 1.0;

  const FeatureProfile& feature(const std::string& n) const {
    for (const FeatureProfile& f : features)
      if (f.name == n) return f;
    throw DataError("profile '" + name + "' has no feature '" + n + "'");
  }

  Schema schema() const {
    std::vector<ColumnSchema> cols;
    for (const FeatureProfile& f : features) cols.push_back({f.name, f.kind, f.modality, f.categories, f.units, false});
    cols.push_back({target_name, ColumnKind::kContinuous, kTargetModality, {}, "g", false});
    return Schema(std::move(cols));
  }

  void validate() const {
    if (!(target_sd > 0.0)) throw ConfigError("profile: target sd must be > 0");
    for (const FeatureProfile& f : features) {
      if (f.is_categorical()) {
        if (f.probs.size() != f.categories.size() || f.probs.empty()) {
          throw ConfigError("profile: '" + f.name + "' needs one probability per category");
        }
        const double total = std::accumulate(f.probs.begin(), f.probs.end(), 0.0);
        if (std::abs(total - 1.0) > 1e-9) throw ConfigError("profile: '" + f.name + "' probabilities sum to " + std::to_string(total));
      } else if (!(f.sd > 0.0)) {
        throw ConfigError("profile: '" + f.name + "' sd must be > 0");
      }
    }
  }
};

namespace detail {

inline FeatureProfile continuous(std::string name, std::string modality, double mean, double sd, double lo,
                                 double hi, std::string units = "") {
  FeatureProfile f;
  f.name = std::move(name);
  f.modality = std::move(modality);
  f.mean = mean;
  f.sd = sd;
  f.lo = lo;
  f.hi = hi;
  f.units = std::move(units);
  return f;
}

/// Published percentages do not always sum to 100 (rounding, unreported
/// answers); they are renormalized.
inline FeatureProfile categorical(std::string name, std::string modality, std::vector<std::string> cats,
                                  std::vector<double> percent) {
  FeatureProfile f;
  f.name = std::move(name);
  f.modality = std::move(modality);
  f.kind = ColumnKind::kCategorical;
  f.categories = std::move(cats);
  const double total = std::accumulate(percent.begin(), percent.end(), 0.0);
  for (double p : percent) f.probs.push_back(p / total);
  return f;
}

}  // namespace detail

inline CohortProfile load_profile(const std::string& name) {
  using detail::categorical;
  using detail::continuous;
  constexpr double inf = std::numeric_limits<double>::infinity();
  CohortProfile p;
  p.name = name;
  if (name == "reus") {
    p.features = {
        continuous("maternal_age", "phys", 32.0, 4.64, 16.0, 50.0, "years"),
        categorical("previous_pregnancy", "phys", {"No", "Yes"}, {46.4, 53.6}),
        continuous("gestational_weeks", "phys", 9.1, 1.8, 4.0, 20.0, "weeks"),
        categorical("adverse_pregnancy_history", "phys", {"No", "Yes"}, {59.2, 40.8}),
        continuous("maternal_bmi", "phys", 24.28, 4.66, 14.0, 50.0, "kg/m2"),
        continuous("plasma_folate", "nut", 31.33, 28.90, 0.0, inf, "nmol/L"),
        continuous("vitamin_b12", "nut", 340.03, 151.9, 0.0, inf, "pmol/L"),
        continuous("betaine", "nut", 15.6, 3.83, 0.0, inf, "umol/L"),
        continuous("choline", "nut", 8.07, 1.73, 0.0, inf, "umol/L"),
        categorical("anaemia", "nut", {"No", "Yes"}, {98.4, 1.6}),
        categorical("physical_activity", "lifestyle", {"Low", "Medium", "High"}, {61.4, 37.6, 0.96}),
        categorical("tobacco_exposure", "lifestyle", {"No", "Yes"}, {73.7, 25.8}),
        categorical("socioeconomic_status", "lifestyle", {"Lower", "Middle", "Higher"}, {11.6, 46.2, 42.2}),
        categorical("sun_exposure", "lifestyle", {"Never", "Sporadic", "Regular"}, {29.6, 54.0, 16.4}),
        categorical("mthfr_c677t", "genetic", {"Wild", "HeteroHomo"}, {33.9, 66.1}),
        categorical("mtrr_a66g", "genetic", {"Wild", "HeteroHomo"}, {28.9, 71.1}),
        categorical("mthfd1_105tc", "genetic", {"Wild", "HeteroHomo"}, {27.3, 72.6}),
        categorical("nos3_t786c", "genetic", {"Wild", "HeteroHomo"}, {30.4, 69.6}),
        categorical("mtr_a2756g", "genetic", {"Wild", "HeteroHomo"}, {64.4, 35.6}),
    };
    p.target_mean = 3230.0;
    p.target_sd = 470.0;
  } else if (name == "ieee") {
    FeatureProfile previous = continuous("previous_pregnancy", "phys", 0.6, 0.99, 0.0, inf, "count");
    previous.marginal = Marginal::kCount;
    p.features = {
        continuous("maternal_age", "phys", 22.0, 4.28, 16.0, 50.0, "years"),
        previous,
        continuous("maternal_height", "phys", 142.0, 17.24, 100.0, 200.0, "cm"),
        categorical("fetal_sex", "phys", {"Male", "Female"}, {51.7, 48.3}),
        continuous("initial_systolic_bp", "phys", 105.9, 12.33, 60.0, 200.0, "mmHg"),
        continuous("initial_diastolic_bp", "phys", 65.89, 7.7, 30.0, 130.0, "mmHg"),
        continuous("final_systolic_bp", "phys", 111.10, 13.11, 60.0, 200.0, "mmHg"),
        continuous("final_diastolic_bp", "phys", 70.61, 8.57, 30.0, 130.0, "mmHg"),
        categorical("blood_group", "phys", {"A+", "A-", "B+", "B-", "AB+", "AB-", "O+", "O-"},
                    {22.4, 4.7, 31.3, 3.5, 12.4, 2.8, 19.3, 3.4}),
        continuous("initial_hemoglobin", "nut", 10.0, 1.05, 0.0, inf),
        continuous("final_hemoglobin", "nut", 10.45, 0.96, 0.0, inf),
        continuous("blood_sugar", "nut", 100.66, 11.48, 0.0, inf, "mg/dL"),
        categorical("socioeconomic_status", "lifestyle", {"BelowPovertyLine", "Above"}, {67.2, 32.8}),
    };
    // Published as "2.7 +- 0.43 g"; kilograms are meant.
    p.target_mean = 2700.0;
    p.target_sd = 430.0;
  } else {
    throw ConfigError("unknown cohort profile '" + name + "' (expected reus or ieee)");
  }
  p.validate();
  return p;
}

struct Interaction {
  std::string a;
  std::string b;
  double coefficient = 0.0;
};

/// Ground-truth rule on standardized features:
///   bw = intercept + gain * (sum_j c_j s_j + sum c_ab s_a s_b) + noise.
/// sample_cohort fills intercept and gain so the realized target matches the
/// profile's mean and sd.
struct GenerativeSpec {
  std::map<std::string, double> coefficients;
  std::vector<Interaction> interactions;
  double noise_sd = 120.0;
  std::map<std::string, double> missingness;
  double intercept = 0.0;
  double gain = 1.0;

  void validate() const {
    if (!(noise_sd >= 0.0)) throw ConfigError("generative spec: noise sd must be >= 0");
    for (const auto& [name, rate] : missingness) {
      if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("generative spec: missingness of '" + name + "' outside [0,1)");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"coefficients", coefficients}, {"noise_sd", noise_sd}, {"missingness", missingness},
                     {"intercept", intercept}, {"gain", gain}};
    j["interactions"] = nlohmann::json::array();
    for (const Interaction& i : interactions) j["interactions"].push_back({{"a", i.a}, {"b", i.b}, {"coefficient", i.coefficient}});
    return j;
  }

  static GenerativeSpec from_json(const nlohmann::json& j) {
    GenerativeSpec s;
    s.coefficients = j.value("coefficients", s.coefficients);
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    s.missingness = j.value("missingness", s.missingness);
    s.intercept = j.value("intercept", s.intercept);
    s.gain = j.value("gain", s.gain);
    for (const auto& i : j.value("interactions", nlohmann::json::array())) {
      s.interactions.push_back({i.at("a").get<std::string>(), i.at("b").get<std::string>(), i.at("coefficient").get<double>()});
    }
    s.validate();
    return s;
  }
};

/// Coefficients that follow published qualitative findings: strong effects
/// for tobacco, maternal age, sun exposure, B12 and folate; none for anaemia
/// and MTHFD1 105TC. Test scaffolding, not estimates.
inline GenerativeSpec default_spec(const CohortProfile& profile) {
  GenerativeSpec s;
  if (profile.name == "reus") {
    s.coefficients = {
        {"maternal_age", -0.70},       {"previous_pregnancy", 0.20},   {"gestational_weeks", 0.20},
        {"adverse_pregnancy_history", -0.25}, {"maternal_bmi", 0.30},  {"plasma_folate", 0.45},
        {"vitamin_b12", 0.50},         {"betaine", 0.15},              {"choline", 0.10},
        {"anaemia", 0.0},              {"physical_activity", 0.15},    {"tobacco_exposure", -1.00},
        {"socioeconomic_status", 0.20}, {"sun_exposure", 0.60},        {"mthfr_c677t", -0.15},
        {"mtrr_a66g", -0.10},          {"mthfd1_105tc", 0.0},          {"nos3_t786c", 0.10},
        {"mtr_a2756g", 0.10},
    };
  } else {
    s.coefficients = {
        {"maternal_age", 0.40},        {"previous_pregnancy", 0.20},   {"maternal_height", 0.50},
        {"fetal_sex", -0.20},          {"initial_systolic_bp", -0.10}, {"initial_diastolic_bp", -0.10},
        {"final_systolic_bp", -0.30},  {"final_diastolic_bp", -0.20},  {"blood_group", 0.0},
        {"initial_hemoglobin", 0.50},  {"final_hemoglobin", 0.60},     {"blood_sugar", 0.30},
        {"socioeconomic_status", 0.80},
    };
  }
  return s;
}

// ---- truncated normal -------------------------------------------------------

namespace detail {

struct TruncNormal {
  double mu = 0.0;
  double sigma = 1.0;
  double lo = 0.0;
  double hi = 0.0;
};

inline std::pair<double, double> truncated_moments(const TruncNormal& t) {
  const boost::math::normal_distribution<double> std_normal;
  const double a = (t.lo - t.mu) / t.sigma, b = (t.hi - t.mu) / t.sigma;
  const double pa = std::isfinite(a) ? boost::math::pdf(std_normal, a) : 0.0;
  const double pb = std::isfinite(b) ? boost::math::pdf(std_normal, b) : 0.0;
  // Z from whichever tail keeps precision.
  double z;
  if (a > 0.0) {
    z = boost::math::cdf(boost::math::complement(std_normal, a)) -
        (std::isfinite(b) ? boost::math::cdf(boost::math::complement(std_normal, b)) : 0.0);
  } else {
    z = (std::isfinite(b) ? boost::math::cdf(std_normal, b) : 1.0) -
        (std::isfinite(a) ? boost::math::cdf(std_normal, a) : 0.0);
  }
  const double r = (pa - pb) / z;
  const double aa = std::isfinite(a) ? a * pa : 0.0, bb = std::isfinite(b) ? b * pb : 0.0;
  const double var = t.sigma * t.sigma * (1.0 + (aa - bb) / z - r * r);
  return {t.mu + t.sigma * r, std::sqrt(std::max(var, 0.0))};
}

/// Underlying (mu, sigma) whose truncation to [lo, hi] has the requested mean
/// and sd. Newton on (mu, log sigma) with a finite-difference Jacobian.
inline TruncNormal match_truncated(double mean, double sd, double lo, double hi) {
  TruncNormal t{mean, sd, lo, hi};
  if (!std::isfinite(lo) && !std::isfinite(hi)) return t;
  double x0 = mean, x1 = std::log(sd);
  for (int it = 0; it < 200; ++it) {
    auto resid = [&](double m, double ls) {
      const auto [mm, ss] = truncated_moments({m, std::exp(ls), lo, hi});
      return std::pair{(mm - mean) / sd, (ss - sd) / sd};
    };
    const auto [f0, f1] = resid(x0, x1);
    if (std::abs(f0) < 1e-12 && std::abs(f1) < 1e-12) break;
    const double h0 = 1e-6 * sd, h1 = 1e-6;
    const auto [a0, a1] = resid(x0 + h0, x1);
    const auto [b0, b1] = resid(x0, x1 + h1);
    const double j00 = (a0 - f0) / h0, j10 = (a1 - f1) / h0, j01 = (b0 - f0) / h1, j11 = (b1 - f1) / h1;
    const double det = j00 * j11 - j01 * j10;
    if (det == 0.0 || !std::isfinite(det)) break;
    double d0 = (j11 * f0 - j01 * f1) / det, d1 = (-j10 * f0 + j00 * f1) / det;
    // Damped steps keep sigma positive and the truncation mass nonzero.
    const double cap = 0.5;
    const double scale = std::max({1.0, std::abs(d0) / (cap * sd * 4.0), std::abs(d1) / cap});
    x0 -= d0 / scale;
    x1 -= d1 / scale;
  }
  t.mu = x0;
  t.sigma = std::exp(x1);
  const auto [m, s] = truncated_moments(t);
  if (std::abs(m - mean) > 1e-6 * sd || std::abs(s - sd) > 1e-6 * sd) {
    throw ConfigError("no truncated normal on [" + std::to_string(lo) + ", " + std::to_string(hi) +
                      "] has mean " + std::to_string(mean) + " and sd " + std::to_string(sd));
  }
  return t;
}

/// Inverse-CDF draw, working in the upper tail when the interval lies above mu.
inline double sample_truncated(const TruncNormal& t, Rng& rng) {
  const boost::math::normal_distribution<double> n;
  const double a = (t.lo - t.mu) / t.sigma, b = (t.hi - t.mu) / t.sigma;
  double u;
  do {
    u = rng.uniform();
  } while (u <= 0.0);
  double z;
  if (a > 0.0) {
    const double qa = boost::math::cdf(boost::math::complement(n, a));
    const double qb = std::isfinite(b) ? boost::math::cdf(boost::math::complement(n, b)) : 0.0;
    z = boost::math::quantile(boost::math::complement(n, qa - u * (qa - qb)));
  } else {
    const double pa = std::isfinite(a) ? boost::math::cdf(n, a) : 0.0;
    const double pb = std::isfinite(b) ? boost::math::cdf(n, b) : 1.0;
    const double p = pa + u * (pb - pa);
    z = p >= 1.0 ? b : boost::math::quantile(n, p);
  }
  return std::clamp(t.mu + t.sigma * z, t.lo, t.hi);
}

/// Marsaglia-Tsang gamma(shape, 1).
inline double sample_gamma(double shape, Rng& rng) {
  if (shape < 1.0) {
    double u;
    do {
      u = rng.uniform();
    } while (u <= 0.0);
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0, c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

inline double sample_poisson(double lambda, Rng& rng) {
  const double limit = std::exp(-lambda);
  double k = 0.0, p = rng.uniform();
  while (p > limit) {
    k += 1.0;
    p *= rng.uniform();
  }
  return k;
}

/// Overdispersed counts (gamma-Poisson) with the given mean and sd.
inline double sample_count(double mean, double sd, Rng& rng) {
  const double var = sd * sd;
  if (var <= mean) return sample_poisson(mean, rng);
  const double shape = mean * mean / (var - mean), scale = (var - mean) / mean;
  return sample_poisson(sample_gamma(shape, rng) * scale, rng);
}

}  // namespace detail

// ---- generation ---------------------------------------------------------------

namespace detail {

inline std::vector<double> raw_signal(const Dataset& data, const CohortProfile& profile, const GenerativeSpec& spec) {
  const std::size_t n = data.rows();
  std::vector<double> s(n, 0.0);
  std::map<std::string, std::vector<double>> standardized;
  auto standard = [&](const std::string& name) -> const std::vector<double>& {
    auto it = standardized.find(name);
    if (it != standardized.end()) return it->second;
    std::size_t idx;
    try {
      idx = data.schema.index_of(name);
    } catch (const DataError&) {
      throw DataError("generative rule uses column '" + name + "' absent from the data");
    }
    const auto [m, sd] = profile.feature(name).code_moments();
    std::vector<double> z(n);
    for (std::size_t r = 0; r < n; ++r) {
      const double v = data.columns[idx][r];
      if (is_missing(v)) throw DataError("generative rule: column '" + name + "' has a missing value");
      z[r] = sd > 0.0 ? (v - m) / sd : 0.0;
    }
    return standardized.emplace(name, std::move(z)).first->second;
  };
  for (const auto& [name, c] : spec.coefficients) {
    const auto& z = standard(name);
    for (std::size_t r = 0; r < n; ++r) s[r] += c * z[r];
  }
  for (const Interaction& i : spec.interactions) {
    const auto& za = standard(i.a);
    const auto& zb = standard(i.b);
    for (std::size_t r = 0; r < n; ++r) s[r] += i.coefficient * za[r] * zb[r];
  }
  return s;
}

}  // namespace detail

/// Noiseless target in grams for each row.
inline std::vector<double> ground_truth_bw(const Dataset& data, const CohortProfile& profile,
                                           const GenerativeSpec& spec) {
  std::vector<double> y = detail::raw_signal(data, profile, spec);
  for (double& v : y) v = spec.intercept + spec.gain * v;
  return y;
}

struct Cohort {
  Dataset data;
  /// The input spec with intercept and gain filled in by calibration.
  GenerativeSpec spec;
};

inline Cohort sample_cohort(const CohortProfile& profile, GenerativeSpec spec, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("cohort size must be >= 1");
  profile.validate();
  spec.validate();
  for (const auto& [name, rate] : spec.missingness) {
    if (name == profile.target_name) throw ConfigError("generative spec: the target cannot have missing values");
    profile.feature(name);
  }
  const Schema schema = profile.schema();
  Dataset data{schema, std::vector<std::vector<double>>(schema.size())};
  for (std::size_t j = 0; j < profile.features.size(); ++j) {
    const FeatureProfile& f = profile.features[j];
    Rng rng(mix_seed(seed, j));
    auto& col = data.columns[j];
    col.resize(n);
    if (f.is_categorical()) {
      for (double& v : col) {
        const double u = rng.uniform();
        double acc = 0.0;
        std::size_t k = 0;
        while (k + 1 < f.probs.size() && u >= (acc += f.probs[k])) ++k;
        v = static_cast<double>(k);
      }
    } else if (f.marginal == Marginal::kCount) {
      for (double& v : col) v = detail::sample_count(f.mean, f.sd, rng);
    } else {
      const detail::TruncNormal t = detail::match_truncated(f.mean, f.sd, f.lo, f.hi);
      for (double& v : col) v = detail::sample_truncated(t, rng);
    }
  }

  const std::vector<double> signal = detail::raw_signal(data, profile, spec);
  const double mean = std::accumulate(signal.begin(), signal.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : signal) ss += (v - mean) * (v - mean);
  const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  const double explained = profile.target_sd * profile.target_sd - spec.noise_sd * spec.noise_sd;
  if (explained < 0.0) throw ConfigError("generative spec: noise sd exceeds the profile's target sd");
  if (sd == 0.0 && explained > 0.0) {
    throw ConfigError("generative spec: the signal has zero variance but the target sd is nonzero");
  }
  spec.gain = sd > 0.0 ? std::sqrt(explained) / sd : 0.0;
  spec.intercept = profile.target_mean - spec.gain * mean;

  std::vector<double>& y = data.columns[schema.target_index()];
  y = ground_truth_bw(data, profile, spec);
  if (spec.noise_sd > 0.0) {
    Rng rng(mix_seed(seed, profile.features.size()));
    for (double& v : y) v += rng.normal(0.0, spec.noise_sd);
  }

  for (const auto& [name, rate] : spec.missingness) {
    if (rate <= 0.0) continue;
    const std::size_t idx = schema.index_of(name);
    Rng rng(mix_seed(seed, 1000 + idx));
    for (double& v : data.columns[idx])
      if (rng.uniform() < rate) v = kMissing;
  }
  return {std::move(data), std::move(spec)};
}

}  // namespace mtabnet
