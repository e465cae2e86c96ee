#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mtabnet/synthcohort.hpp"

using namespace mtabnet;

namespace {

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1));
}

}  // namespace

TEST(Profile, ReusMatchesPublishedMarginals) {
  const CohortProfile p = load_profile("reus");
  EXPECT_DOUBLE_EQ(p.feature("maternal_age").mean, 32.0);
  EXPECT_DOUBLE_EQ(p.feature("maternal_age").sd, 4.64);
  const FeatureProfile& mthfr = p.feature("mthfr_c677t");
  EXPECT_EQ(mthfr.categories[0], "Wild");
  EXPECT_NEAR(mthfr.probs[0], 0.339, 1e-12);
  EXPECT_EQ(p.schema().modalities().size(), 4u);
  EXPECT_DOUBLE_EQ(p.target_mean, 3230.0);
  EXPECT_DOUBLE_EQ(p.target_sd, 470.0);
  for (const FeatureProfile& f : p.features) {
    if (f.is_categorical()) { EXPECT_NEAR(std::accumulate(f.probs.begin(), f.probs.end(), 0.0), 1.0, 1e-9); }
  }
}

TEST(Profile, IeeeHasThreeModalitiesAndGramTarget) {
  const CohortProfile p = load_profile("ieee");
  EXPECT_EQ(p.schema().modalities(), (std::vector<std::string>{"phys", "nut", "lifestyle"}));
  EXPECT_DOUBLE_EQ(p.target_mean, 2700.0);
  EXPECT_THROW(load_profile("nhanes"), ConfigError);
}

TEST(TruncatedNormal, MatchedMomentsAreHit) {
  // Folate: sd close to the mean with a floor at 0, far from a plain normal.
  const auto t = detail::match_truncated(31.33, 28.90, 0.0, std::numeric_limits<double>::infinity());
  const auto [m, s] = detail::truncated_moments(t);
  EXPECT_NEAR(m, 31.33, 1e-6);
  EXPECT_NEAR(s, 28.90, 1e-6);
  EXPECT_THROW(detail::match_truncated(1.0, 10.0, 0.0, 2.0), ConfigError);
}

TEST(Cohort, MarginalsWithinThreeStandardErrors) {
  const CohortProfile p = load_profile("reus");
  const Cohort c = sample_cohort(p, default_spec(p), 730, 7);
  const double n = 730.0;
  for (const FeatureProfile& f : p.features) {
    const auto& col = c.data.column(f.name);
    if (f.is_categorical()) {
      for (std::size_t k = 0; k < f.probs.size(); ++k) {
        const double share = std::count(col.begin(), col.end(), static_cast<double>(k)) / n;
        EXPECT_NEAR(share, f.probs[k], 3.0 * std::sqrt(f.probs[k] * (1 - f.probs[k]) / n) + 1e-12) << f.name;
      }
    } else {
      EXPECT_NEAR(mean_of(col), f.mean, 3.0 * f.sd / std::sqrt(n)) << f.name;
      EXPECT_GE(*std::min_element(col.begin(), col.end()), f.lo) << f.name;
      EXPECT_LE(*std::max_element(col.begin(), col.end()), f.hi) << f.name;
    }
  }
  // Calibration fixes mean and explained variance; noise adds sampling error.
  const auto& y = c.data.target();
  EXPECT_NEAR(mean_of(y), 3230.0, 3.0 * 470.0 / std::sqrt(n));
  EXPECT_NEAR(sd_of(y), 470.0, 3.0 * 470.0 / std::sqrt(2.0 * n));
}

TEST(Cohort, NoiselessTargetEqualsGroundTruth) {
  const CohortProfile p = load_profile("reus");
  GenerativeSpec spec = default_spec(p);
  spec.noise_sd = 0.0;
  spec.interactions.push_back({"maternal_age", "maternal_bmi", 0.2});
  const Cohort c = sample_cohort(p, spec, 300, 11);
  const auto truth = ground_truth_bw(c.data, p, c.spec);
  EXPECT_EQ(truth, c.data.target());
  EXPECT_NEAR(sd_of(c.data.target()), 470.0, 1e-9);
}

TEST(Cohort, GroundTruthIsLinearAroundTheIntercept) {
  const CohortProfile p = load_profile("reus");
  const Cohort c = sample_cohort(p, default_spec(p), 50, 3);
  Dataset at_mean = c.data.select({0, 1});
  for (const FeatureProfile& f : p.features) {
    auto& col = at_mean.column(f.name);
    col.assign(col.size(), f.code_moments().first);
  }
  at_mean.column("maternal_age")[1] += 2.0 * 4.64;
  const auto y = ground_truth_bw(at_mean, p, c.spec);
  EXPECT_NEAR(y[0], c.spec.intercept, 1e-9);
  EXPECT_NEAR(y[1] - y[0], c.spec.gain * -0.70 * 2.0, 1e-9);
  Dataset missing_col = c.data.restrict_to({"phys"});
  EXPECT_THROW(ground_truth_bw(missing_col, p, c.spec), DataError);
}

TEST(Cohort, MissingnessRate) {
  const CohortProfile p = load_profile("reus");
  GenerativeSpec spec = default_spec(p);
  spec.missingness["plasma_folate"] = 0.1;
  const Cohort c = sample_cohort(p, spec, 2000, 5);
  const auto& col = c.data.column("plasma_folate");
  const double share = std::count_if(col.begin(), col.end(), is_missing) / 2000.0;
  EXPECT_NEAR(share, 0.1, 3.0 * std::sqrt(0.09 / 2000.0));
  EXPECT_EQ(c.data.missing_count(), static_cast<std::size_t>(share * 2000.0 + 0.5));
  const std::string text = to_csv(c.data);
  EXPECT_NE(text.find(",,"), std::string::npos);
}

TEST(Cohort, SeededDeterminism) {
  const CohortProfile p = load_profile("ieee");
  const auto a = to_csv(sample_cohort(p, default_spec(p), 200, 9).data);
  const auto b = to_csv(sample_cohort(p, default_spec(p), 200, 9).data);
  const auto c = to_csv(sample_cohort(p, default_spec(p), 200, 10).data);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Cohort, InvalidRequests) {
  const CohortProfile p = load_profile("reus");
  EXPECT_THROW(sample_cohort(p, default_spec(p), 0, 1), ConfigError);
  GenerativeSpec loud = default_spec(p);
  loud.noise_sd = 500.0;
  EXPECT_THROW(sample_cohort(p, loud, 100, 1), ConfigError);
  GenerativeSpec flat;
  flat.coefficients = {{"anaemia", 0.0}};
  EXPECT_THROW(sample_cohort(p, flat, 100, 1), ConfigError);
  GenerativeSpec bad = default_spec(p);
  bad.missingness["birth_weight"] = 0.1;
  EXPECT_THROW(sample_cohort(p, bad, 100, 1), ConfigError);
}

TEST(Cohort, CountFeatureIsIntegral) {
  const CohortProfile p = load_profile("ieee");
  const Cohort c = sample_cohort(p, default_spec(p), 1000, 2);
  const auto& col = c.data.column("previous_pregnancy");
  for (double v : col) EXPECT_EQ(v, std::floor(v));
  EXPECT_NEAR(mean_of(col), 0.6, 3.0 * 0.99 / std::sqrt(1000.0));
  EXPECT_NEAR(sd_of(col), 0.99, 0.1);
}
