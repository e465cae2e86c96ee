// Trains one model on a synthetic cohort and prints the three explanations
// next to the generative coefficients they should recover.

#include <cstdio>
#include <iostream>

#include "mtabnet/mtabnet.hpp"

int main() {
  using namespace mtabnet;
  const CohortProfile profile = load_profile("reus");
  const Cohort cohort = sample_cohort(profile, default_spec(profile), 500, 3);

  ExperimentConfig config;
  config.train.max_epochs = 60;
  const TrainedPipeline pipeline = fit_pipeline(cohort.data, config, 11);

  const ImportanceReport importance = mask_importance(pipeline, cohort.data);
  const SensitivityReport sensitivity = sensitivity_analysis(pipeline_predictor(pipeline), cohort.data);

  std::printf("%-22s %-10s %6s %10s %8s\n", "feature", "modality", "coef", "importance", "sens %");
  for (std::size_t j = 0; j < importance.features.size(); ++j) {
    const std::string& name = importance.features[j];
    const auto it = cohort.spec.coefficients.find(name);
    std::printf("%-22s %-10s %6.2f %10.3f %8.2f\n", name.c_str(), importance.modalities[j].c_str(),
                it == cohort.spec.coefficients.end() ? 0.0 : it->second, importance.scores[j],
                sensitivity.rows[j].mean_change_pct);
  }

  // Shapley for three rows against the reference row.
  const auto rows = feature_rows(cohort.data);
  const ShapReport shap =
      shapley_values(pipeline_predictor(pipeline), {rows.begin(), rows.begin() + 3}, reference_row(cohort.data), 64, 5);
  std::cout << "\nShapley (grams), background prediction " << shap.background_prediction << "\n"
            << to_csv(shap, importance.features);
}
