#include <gtest/gtest.h>

#include <cmath>

#include "mtabnet/preprocess.hpp"
#include "mtabnet/random.hpp"

using namespace mtabnet;

namespace {

Schema schema3() {
  return Schema({
      {"x", ColumnKind::kContinuous, "phys", {}, "", false},
      {"g", ColumnKind::kCategorical, "nut", {"a", "b"}, "", false},
      {"s", ColumnKind::kContinuous, "nut", {}, "", true},
      {"y", ColumnKind::kContinuous, "target", {}, "g", false},
  });
}

Dataset synthetic(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d{schema3(), std::vector<std::vector<double>>(4)};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(0.0, 10.0);
    const double g = x > 5.0 ? 1.0 : 0.0;
    d.columns[0].push_back(x);
    d.columns[1].push_back(g);
    d.columns[2].push_back(static_cast<double>(i));
    d.columns[3].push_back(3000.0 + 50.0 * x + rng.normal(0.0, 10.0));
  }
  return d;
}

}  // namespace

TEST(Quantile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({7}, 0.9), 7.0);
  EXPECT_THROW(quantile({}, 0.5), DataError);
}

TEST(Iqr, FencesAndFilter) {
  const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 100, kMissing};
  const Fences f = iqr_fences(v);
  // Q1 = 3, Q3 = 7 over the 9 observed values.
  EXPECT_DOUBLE_EQ(f.lower, 3.0 - 6.0);
  EXPECT_DOUBLE_EQ(f.upper, 7.0 + 6.0);
  const auto keep = iqr_filter(v);
  EXPECT_FALSE(keep[8]);
  EXPECT_TRUE(keep[9]);
  EXPECT_EQ(std::count(keep.begin(), keep.end(), true), 9);
  EXPECT_THROW(iqr_fences({1, 2, kMissing}), DataError);
}

TEST(Interpolate, InteriorLinearEdgesNearest) {
  const auto out = interpolate_impute({kMissing, 2, kMissing, kMissing, 8, kMissing});
  EXPECT_EQ(out, (std::vector<double>{2, 2, 4, 6, 8, 8}));
  EXPECT_THROW(interpolate_impute({kMissing, kMissing}), DataError);
}

TEST(RandomForest, FitsStepFunctionAndVotes) {
  Rng rng(3);
  std::vector<std::vector<double>> x;
  std::vector<double> y, cls;
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(0, 1);
    x.push_back({a, rng.uniform(0, 1)});
    y.push_back(a < 0.5 ? 10.0 : 20.0);
    cls.push_back(a < 0.5 ? 0.0 : 2.0);
  }
  RandomForest reg, clf;
  reg.fit(x, y, {20, 6, 1, false}, 1);
  clf.fit(x, cls, {20, 6, 1, true}, 1);
  EXPECT_NEAR(reg.predict({0.2, 0.5}), 10.0, 1.0);
  EXPECT_NEAR(reg.predict({0.8, 0.5}), 20.0, 1.0);
  EXPECT_EQ(clf.predict({0.2, 0.5}), 0.0);
  EXPECT_EQ(clf.predict({0.9, 0.1}), 2.0);
  RandomForest again;
  again.fit(x, y, {20, 6, 1, false}, 1);
  EXPECT_EQ(again.predict({0.37, 0.6}), reg.predict({0.37, 0.6}));
}

TEST(RfImpute, RecoversDependentColumn) {
  Dataset d = synthetic(300, 4);
  auto cols = d.columns;
  std::size_t r = 0;
  while (std::abs(cols[0][r] - 5.0) < 2.0) ++r;  // clear of the class boundary
  const double truth = cols[1][r];
  cols[1][r] = kMissing;
  cols[0][r + 1] = kMissing;  // an incomplete column is never a predictor
  const auto filled = rf_impute(cols, 1, true, {}, 2);
  EXPECT_EQ(filled[r], truth);
  EXPECT_EQ(filled[r + 1], cols[1][r + 1]);
  std::vector<std::vector<double>> none{{kMissing, kMissing}, {1, 2}};
  EXPECT_THROW(rf_impute(none, 0, false, {}, 1), DataError);
  std::vector<std::vector<double>> no_pred{{1, kMissing}, {kMissing, 2}};
  EXPECT_THROW(rf_impute(no_pred, 0, false, {}, 1), DataError);
}

TEST(Scaler, MinMaxAndZScore) {
  const Scaler mm = Scaler::fit({{2, 4, 6}, {5, 5, 5}}, ScalerKind::kMinMax);
  EXPECT_DOUBLE_EQ(mm.transform(0, 4), 0.5);
  EXPECT_DOUBLE_EQ(mm.transform(1, 9), 0.0);
  EXPECT_DOUBLE_EQ(mm.inverse(0, 0.25), 3.0);
  const Scaler z = Scaler::fit({{2, 4, 6}}, ScalerKind::kZScore);
  EXPECT_DOUBLE_EQ(z.transform(0, 6), 1.0);
  EXPECT_TRUE(is_missing(mm.transform(0, kMissing)));
  const Scaler back = Scaler::from_json(mm.to_json());
  EXPECT_EQ(back.offset, mm.offset);
  EXPECT_EQ(back.span, mm.span);
  EXPECT_THROW(parse_scaler("robust"), ConfigError);
}

TEST(FitPreprocess, OutliersMissingTargetAndImputation) {
  Dataset d = synthetic(200, 8);
  d.columns[3][0] = 1e5;       // target outlier
  d.columns[3][1] = kMissing;  // no target
  d.columns[0][5] = kMissing;
  d.columns[1][6] = kMissing;
  d.columns[2][7] = kMissing;  // time-ordered: interpolated
  const PreparedTrain p = fit_preprocess(d, {}, 1);
  EXPECT_EQ(p.outliers_removed, 1u);
  EXPECT_EQ(p.data.rows(), 198u);
  EXPECT_EQ(p.data.missing_count(), 0u);
  // Row 7 is at index 5 after dropping rows 0 and 1; s = i, so the gap interpolates to 7.
  EXPECT_DOUBLE_EQ(p.state.scaler.inverse(2, p.data.columns[2][5]), 7.0);
  for (std::size_t j = 0; j < 3; ++j) {
    const auto& col = p.data.columns[p.state.schema.feature_indices()[j]];
    EXPECT_GE(*std::min_element(col.begin(), col.end()), 0.0);
    EXPECT_LE(*std::max_element(col.begin(), col.end()), 1.0);
  }
  EXPECT_EQ(p.state.target.min, *std::min_element(p.data.target().begin(), p.data.target().end()));
}

TEST(FitPreprocess, ApplyUsesTrainStateOnly) {
  const Dataset train = synthetic(100, 1);
  Dataset test = synthetic(10, 2);
  test.columns[0][0] = kMissing;
  test.columns[0][1] = 1000.0;
  const PreparedTrain p = fit_preprocess(train, {}, 3);
  const Dataset a = p.state.apply(test);
  EXPECT_DOUBLE_EQ(a.columns[0][0], p.state.scaler.transform(0, p.state.fill[0]));
  EXPECT_GT(a.columns[0][1], 1.0);  // out-of-range values are not clipped
  EXPECT_EQ(a.target(), test.target());
  const FittedPreprocess back = FittedPreprocess::from_json(p.state.to_json());
  EXPECT_EQ(to_csv(back.apply(test)), to_csv(a));
  Dataset other = test.restrict_to({"phys"});
  EXPECT_THROW(p.state.apply(other), CompatibilityError);
}

TEST(FitPreprocess, ModelInputsFromRawRows) {
  const Dataset train = synthetic(60, 5);
  const PreparedTrain p = fit_preprocess(train, {}, 3);
  const std::vector<std::vector<double>> rows{{2.0, 1.0, 4.0}, {kMissing, 0.0, 1.0}};
  const auto inputs = p.state.model_inputs(rows);
  ASSERT_EQ(inputs.size(), 2u);
  EXPECT_DOUBLE_EQ(inputs[0](0, 0), p.state.scaler.transform(0, 2.0));
  EXPECT_DOUBLE_EQ(inputs[0](1, 0), p.state.scaler.transform(0, p.state.fill[0]));
  EXPECT_DOUBLE_EQ(inputs[1](0, 1), p.state.scaler.transform(2, 4.0));
}
