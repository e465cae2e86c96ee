#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mtabnet/synthcohort.hpp"
#include "mtabnet/trainer.hpp"

using namespace mtabnet;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.encoder.n_steps = 2;
  c.encoder.d_h = 4;
  c.encoder.d_k = 4;
  c.encoder.d_f = 8;
  c.train.max_epochs = 4;
  c.seed = 3;
  return c;
}

const Dataset& cohort() {
  static const Dataset d = [] {
    const CohortProfile p = load_profile("reus");
    return sample_cohort(p, default_spec(p), 120, 1).data;
  }();
  return d;
}

}  // namespace

TEST(Adam, MatchesHandRolledUpdates) {
  Parameter p(Tensor({2}, 1.0));
  AdamState state;
  std::vector<Parameter*> list{&p};
  double w = 1.0, m = 0.0, v = 0.0;
  const double g[3] = {0.5, -0.2, 0.1};
  for (int t = 1; t <= 3; ++t) {
    p.grad[0] = g[t - 1];
    p.grad[1] = 0.0;
    adam_step(list, state, 0.1);
    m = 0.9 * m + 0.1 * g[t - 1];
    v = 0.999 * v + 0.001 * g[t - 1] * g[t - 1];
    w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.value[0], w, 1e-15);
    EXPECT_EQ(p.value[1], 1.0);
  }
  Parameter other(Tensor({3}, 0.0));
  std::vector<Parameter*> wrong{&p, &other};
  EXPECT_THROW(adam_step(wrong, state, 0.1), ContractError);
}

TEST(KFold, PartitionCoversEveryRowOnce) {
  const auto folds = kfold_partition(730, 5, 9);
  std::set<std::size_t> seen;
  for (const auto& f : folds) {
    EXPECT_EQ(f.size(), 146u);
    seen.insert(f.begin(), f.end());
  }
  EXPECT_EQ(seen.size(), 730u);
  EXPECT_EQ(kfold_partition(730, 5, 9), folds);
  EXPECT_NE(kfold_partition(730, 5, 10), folds);
  const auto uneven = kfold_partition(12, 5, 1);
  EXPECT_EQ(uneven[0].size(), 3u);
  EXPECT_EQ(uneven[4].size(), 2u);
  EXPECT_THROW(kfold_partition(3, 5, 1), DataError);
  EXPECT_THROW(kfold_partition(10, 1, 1), ConfigError);
}

TEST(ParallelJobs, OrderedResultsAndFirstError) {
  const auto r = parallel_jobs<int>(50, 4, [](std::size_t j) { return static_cast<int>(j * j); });
  for (std::size_t j = 0; j < r.size(); ++j) EXPECT_EQ(r[j], static_cast<int>(j * j));
  try {
    parallel_jobs<int>(10, 3, [](std::size_t j) -> int {
      if (j == 7 || j == 4) throw DataError("job " + std::to_string(j));
      return 0;
    });
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "job 4");
  }
}

TEST(Train, LossFallsAndLoneRowJoinsLastBatch) {
  const ExperimentConfig c = small_config();
  // 65 rows with batch 64 would leave a single-row batch.
  const Dataset d = cohort().select([] {
    std::vector<std::size_t> r(65);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = i;
    return r;
  }());
  const PreparedTrain p = fit_preprocess(d, c.preprocess, 1);
  Model model(c.model_config(p.data.schema), 2);
  TrainConfig tc = c.train;
  tc.max_epochs = 30;
  const TrainHistory h = train(model, to_train_data(p.data, p.state.target), tc, 4);
  EXPECT_EQ(h.epochs_run, 30u);
  EXPECT_LT(h.loss.back(), h.loss.front());
  EXPECT_FALSE(h.stopped_early);
}

TEST(Train, EarlyStoppingRestoresTheBestEpoch) {
  ExperimentConfig c = small_config();
  c.train.max_epochs = 60;
  c.train.patience = 3;
  c.train.lr = 0.2;  // noisy enough to stall
  const TrainedPipeline p = fit_pipeline(cohort(), c, 5);
  const TrainHistory& h = p.history;
  ASSERT_EQ(h.validation_mae.size(), h.epochs_run);
  if (h.stopped_early) { EXPECT_EQ(h.epochs_run, h.best_epoch + 1 + 3); }
  const double best = *std::min_element(h.validation_mae.begin(), h.validation_mae.end());
  EXPECT_EQ(h.validation_mae[h.best_epoch], best);
}

TEST(Train, RejectsTinyOrMismatchedData) {
  const ExperimentConfig c = small_config();
  const PreparedTrain p = fit_preprocess(cohort(), c.preprocess, 1);
  Model model(c.model_config(p.data.schema), 2);
  TrainData d = to_train_data(p.data.select({0}), p.state.target);
  EXPECT_THROW(train(model, d, c.train, 1), DataError);
  d = to_train_data(p.data, p.state.target);
  d.target = Tensor({3, 1}, 0.0);
  EXPECT_THROW(train(model, d, c.train, 1), DimensionError);
}

TEST(KFoldCv, ThreadCountDoesNotChangeResults) {
  const ExperimentConfig c = small_config();
  const auto a = kfold_cv(cohort(), c, {1, false});
  const auto b = kfold_cv(cohort(), c, {3, false});
  ASSERT_EQ(a.size(), 5u);
  std::size_t tested = 0;
  for (std::size_t f = 0; f < a.size(); ++f) {
    EXPECT_EQ(a[f].metrics.mae, b[f].metrics.mae);
    EXPECT_EQ(a[f].test_indices, b[f].test_indices);
    EXPECT_EQ(a[f].train_rows + a[f].test_rows, 120u);
    tested += a[f].test_rows;
  }
  EXPECT_EQ(tested, 120u);
  const CvSummary s = summarize(a);
  EXPECT_NEAR(s.mean_mae, (s.fold_mae[0] + s.fold_mae[1] + s.fold_mae[2] + s.fold_mae[3] + s.fold_mae[4]) / 5, 1e-9);
}

TEST(KFoldCv, ModalityRestriction) {
  ExperimentConfig c = small_config();
  c.modalities = {"phys", "nut"};
  c.folds = 2;
  const auto r = kfold_cv(cohort(), c, {1, true});
  ASSERT_TRUE(r[0].pipeline.has_value());
  EXPECT_EQ(r[0].pipeline->model->modality_count(), 2u);
}

TEST(Grid, AssignmentsAndErrors) {
  const Grid g{{"/encoder/n_steps", {1, 2}}, {"/train/lr", {0.01, 0.02, 0.03}}};
  const auto a = grid_assignments(g);
  EXPECT_EQ(a.size(), 6u);
  EXPECT_EQ(a[5]["/encoder/n_steps"], 2);
  EXPECT_THROW(grid_assignments({}), ConfigError);
  EXPECT_THROW(grid_assignments({{"/train/lr", {}}}), ConfigError);
  ExperimentConfig c = small_config();
  c.folds = 2;
  EXPECT_THROW(grid_search(cohort(), c, {{"/train/nope", {1}}}), ConfigError);
}

TEST(Grid, PicksTheLowestMae) {
  ExperimentConfig c = small_config();
  c.folds = 2;
  c.train.max_epochs = 3;
  const GridResult r = grid_search(cohort(), c, {{"/train/lr", {0.0, 0.02}}});
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[1].config.train.lr, 0.02);
  for (const GridRow& row : r.rows) EXPECT_GE(row.summary.mean_mae, r.rows[r.best].summary.mean_mae);
}
