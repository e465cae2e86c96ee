#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtabnet/mtabnet.hpp"

namespace fs = std::filesystem;
using namespace mtabnet;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

enum Exit : int {
  kOk = 0,
  kOther = 1,
  kArgument = 2,
  kData = 3,
  kCompatibility = 4,
  kIo = 5,
  kConfig = 6,
  kFormat = 7,
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

bool use_color() { return std::getenv("NO_COLOR") == nullptr && ::isatty(STDERR_FILENO); }

void status(const std::string& tag, const std::string& msg, const char* color) {
  if (use_color()) {
    std::cerr << color << tag << "\033[0m " << msg << '\n';
  } else {
    std::cerr << tag << ' ' << msg << '\n';
  }
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::size_t threads = 1;
};

/// Records inputs and emitted files; written last as manifest.json.
class Run {
 public:
  Run(std::string command, const Globals& g) : command_(std::move(command)), out_(g.out) {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw IoError("cannot create output directory '" + out_.string() + "': " + ec.message());
  }

  void input(const std::string& path) {
    if (!fs::exists(path)) throw IoError("input '" + path + "' does not exist");
    inputs_.push_back({{"path", path}, {"sha256", sha256_file(path)}});
  }

  std::string path(const std::string& name) const { return (out_ / name).string(); }

  void emit(const std::string& name, const std::string& bytes) {
    write_text(path(name), bytes);
    outputs_.push_back({{"path", name}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
  }
  void emit_json(const std::string& name, const json& j) { emit(name, j.dump(2) + "\n"); }

  void finish(const json& config) {
    json m{{"tool", "mtabnet"},
           {"version", kToolVersion},
           {"command", command_},
           {"config", config},
           {"inputs", inputs_},
           {"outputs", outputs_},
           {"wall_clock_seconds",
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()}};
    write_text(path("manifest.json"), m.dump(2) + "\n");
    status("done", command_ + " -> " + out_.string(), "\033[32m");
  }

 private:
  std::string command_;
  fs::path out_;
  json inputs_ = json::array();
  json outputs_ = json::array();
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

ExperimentConfig load_experiment(const Globals& g) {
  ExperimentConfig c;
  if (!g.config.empty()) c = experiment_from_json(read_json(g.config));
  if (g.seed) c.seed = *g.seed;
  return c;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

/// Single-axis ablation variants on top of the configured experiment.
void apply_ablation(ExperimentConfig& c, const std::string& name) {
  if (name.empty() || name == "none") return;
  if (name == "no-attention") {
    c.encoder.attention = false;
  } else if (name == "gelu") {
    c.encoder.activation = Activation::kGelu;
  } else if (name == "zscore") {
    c.preprocess.scaler = ScalerKind::kZScore;
  } else if (name == "early-stopping") {
    if (c.train.patience == 0) c.train.patience = 20;
  } else if (name == "aggregate") {
    c.fusion = Fusion::kAggregate;
  } else if (name == "no-smogn") {
    c.use_smogn = false;
  } else {
    throw ArgumentError("unknown ablation '" + name +
                        "' (expected no-attention, gelu, zscore, early-stopping, aggregate or no-smogn)");
  }
}

Dataset load_data(Run& run, const std::string& data, const std::string& schema_path) {
  run.input(schema_path);
  run.input(data);
  return read_csv(data, read_schema(schema_path));
}

/// The dataset restricted to what the checkpoint was trained on, checked by fingerprint.
Dataset align_to_checkpoint(const Dataset& raw, const TrainedPipeline& p) {
  const Schema& want = p.preprocess.schema;
  const Dataset d = p.config.modalities.empty() ? raw : raw.restrict_to(p.config.modalities);
  if (d.schema.fingerprint() == want.fingerprint()) return d;
  std::vector<std::string> diff;
  for (const ColumnSchema& c : want.columns()) {
    bool found = false;
    for (const ColumnSchema& o : d.schema.columns()) found = found || json(o) == json(c);
    if (!found) diff.push_back(c.name);
  }
  for (const ColumnSchema& o : d.schema.columns()) {
    bool found = false;
    for (const ColumnSchema& c : want.columns()) found = found || c.name == o.name;
    if (!found) diff.push_back(o.name);
  }
  std::string names;
  for (const std::string& n : diff) names += (names.empty() ? "" : ", ") + n;
  throw CompatibilityError("dataset schema does not match the checkpoint; differing columns: " +
                           (names.empty() ? std::string("(column order)") : names));
}

std::string predictions_csv(const std::vector<std::size_t>& rows, const std::vector<PredictionRecord>& pred,
                            const std::vector<double>& truth) {
  std::ostringstream os;
  os << "row,actual_g,predicted_g,class\n";
  for (std::size_t i = 0; i < pred.size(); ++i) {
    os << rows[i] << ',' << (is_missing(truth[i]) ? "" : csv::format(truth[i])) << ',' << csv::format(pred[i].grams)
       << ',' << to_string(pred[i].bw_class) << '\n';
  }
  return os.str();
}

std::string opt_csv(const std::optional<double>& v) { return v ? csv::format(*v) : "undefined"; }

// ---- commands -----------------------------------------------------------------

struct GenerateArgs {
  std::string profile = "reus";
  std::size_t n = 730;
  std::string spec;
  std::optional<double> noise_sd;
};

void cmd_generate(const Globals& g, const GenerateArgs& a) {
  Run run("generate", g);
  const CohortProfile profile = load_profile(a.profile);
  GenerativeSpec spec = default_spec(profile);
  if (!a.spec.empty()) {
    run.input(a.spec);
    spec = GenerativeSpec::from_json(read_json(a.spec));
  }
  if (a.noise_sd) spec.noise_sd = *a.noise_sd;
  const std::uint64_t seed = g.seed.value_or(0);
  const Cohort c = sample_cohort(profile, spec, a.n, seed);
  run.emit("cohort.csv", to_csv(c.data));
  run.emit_json("schema.json", c.data.schema.to_json());
  run.emit_json("spec.json", c.spec.to_json());
  run.finish({{"profile", a.profile}, {"n", a.n}, {"seed", seed}, {"spec", c.spec.to_json()}});
}

struct DataArgs {
  std::string data;
  std::string schema;
};

void cmd_preprocess(const Globals& g, const DataArgs& d, bool smogn) {
  Run run("preprocess", g);
  const ExperimentConfig cfg = load_experiment(g);
  if (!g.config.empty()) run.input(g.config);
  Dataset raw = load_data(run, d.data, d.schema);
  if (!cfg.modalities.empty()) raw = raw.restrict_to(cfg.modalities);
  PreparedTrain p = fit_preprocess(raw, cfg.preprocess, mix_seed(cfg.seed, 2));
  json summary{{"rows_in", raw.rows()},
               {"rows_out", p.data.rows()},
               {"outliers_removed", p.outliers_removed},
               {"missing_in", raw.missing_count()}};
  if (smogn) {
    const SmognResult s = smogn_augment(p.data, cfg.smogn, mix_seed(cfg.seed, 3));
    summary["rare_rows"] = s.rare_rows;
    summary["synthetic_rows"] = s.origins.size();
    run.emit("prepared.csv", to_csv(s.data));
  } else {
    run.emit("prepared.csv", to_csv(p.data));
  }
  run.emit_json("preprocess.json", p.state.to_json());
  run.emit_json("summary.json", summary);
  run.finish(to_json(cfg));
}

struct TrainArgs {
  std::string ablate;
  std::string modalities;
  bool no_final = false;
};

void cmd_train(const Globals& g, const DataArgs& d, const TrainArgs& a) {
  Run run("train", g);
  ExperimentConfig cfg = load_experiment(g);
  if (!g.config.empty()) run.input(g.config);
  apply_ablation(cfg, a.ablate);
  if (!a.modalities.empty()) cfg.modalities = split_list(a.modalities);
  cfg.validate();
  const Dataset raw = load_data(run, d.data, d.schema);
  const std::string label = a.ablate.empty() ? "full" : a.ablate;

  const auto folds = kfold_cv(raw, cfg, {g.threads, true});
  std::ostringstream table, preds;
  table << "variant,fold,train_rows,test_rows,smogn_rows,epochs,mae,r2,sensitivity,specificity\n";
  preds << "fold,row,actual_g,predicted_g,class\n";
  const Dataset used = cfg.modalities.empty() ? raw : raw.restrict_to(cfg.modalities);
  json fold_json = json::array();
  for (const FoldResult& f : folds) {
    table << label << ',' << f.fold << ',' << f.train_rows << ',' << f.test_rows << ',' << f.smogn_rows << ','
          << f.epochs_run << ',' << csv::format(f.metrics.mae) << ',' << csv::format(f.metrics.r2) << ','
          << opt_csv(f.metrics.sensitivity) << ',' << opt_csv(f.metrics.specificity) << '\n';
    for (std::size_t i = 0; i < f.predictions.size(); ++i) {
      const double y = used.target()[f.test_indices[i]];
      preds << f.fold << ',' << f.test_indices[i] << ',' << (is_missing(y) ? "" : csv::format(y)) << ','
            << csv::format(f.predictions[i].grams) << ',' << to_string(f.predictions[i].bw_class) << '\n';
    }
    json fj = to_json(f.metrics);
    fj["fold"] = f.fold;
    fj["loss_history"] = f.loss_history;
    fold_json.push_back(fj);
    run.emit("fold_" + std::to_string(f.fold) + ".ckpt",
             serialize_checkpoint(*f.pipeline, {{"variant", label}, {"fold", f.fold}}));
  }
  const CvSummary s = summarize(folds);
  json summary{{"variant", label},
               {"modalities", used.schema.modalities()},
               {"mean_mae", s.mean_mae},
               {"mean_r2", s.mean_r2},
               {"fold_mae", s.fold_mae},
               {"folds", fold_json}};
  run.emit("folds.csv", table.str());
  run.emit("predictions.csv", preds.str());
  if (!a.no_final) {
    const TrainedPipeline final_model = fit_pipeline(used, cfg, mix_seed(cfg.seed, 999));
    run.emit("model.ckpt", serialize_checkpoint(final_model, {{"variant", label}, {"fold", "all"}}));
  }
  run.emit_json("summary.json", summary);
  std::cout << label << ": mean MAE " << s.mean_mae << " g, mean R^2 " << s.mean_r2 << '\n';
  run.finish(to_json(cfg));
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string schema;
};

Dataset load_for_checkpoint(Run& run, const EvalArgs& a, const TrainedPipeline& p) {
  run.input(a.data);
  Schema schema = p.preprocess.schema;
  if (!a.schema.empty()) {
    run.input(a.schema);
    schema = read_schema(a.schema);
  }
  return align_to_checkpoint(read_csv(a.data, schema), p);
}

void cmd_evaluate(const Globals& g, const EvalArgs& a) {
  Run run("evaluate", g);
  run.input(a.checkpoint);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset data = load_for_checkpoint(run, a, ck.pipeline);
  const auto pred = ck.pipeline.predict(data);
  std::vector<double> p, y;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    rows.push_back(i);
    if (is_missing(data.target()[i])) continue;
    p.push_back(pred[i].grams);
    y.push_back(data.target()[i]);
  }
  const Metrics m = compute_metrics(p, y);
  run.emit("predictions.csv", predictions_csv(rows, pred, data.target()));
  json report = to_json(m);
  report["rows"] = y.size();
  report["checkpoint_metadata"] = ck.metadata;
  run.emit_json("metrics.json", report);
  std::cout << "MAE " << m.mae << " g, R^2 " << m.r2 << '\n';
  run.finish(to_json(ck.pipeline.config));
}

void cmd_grid(const Globals& g, const DataArgs& d, const std::string& grid_path) {
  Run run("grid", g);
  const ExperimentConfig base = load_experiment(g);
  if (!g.config.empty()) run.input(g.config);
  run.input(grid_path);
  const json gj = read_json(grid_path);
  if (!gj.is_object()) throw ConfigError("grid file must map config pointers to candidate lists");
  Grid grid;
  for (const auto& [name, values] : gj.items()) {
    if (!values.is_array()) throw ConfigError("grid entry '" + name + "' is not a list");
    grid.emplace_back(name, values.get<std::vector<json>>());
  }
  const Dataset raw = load_data(run, d.data, d.schema);
  const GridResult r = grid_search(raw, base, grid, {g.threads, false});
  std::ostringstream table;
  table << "candidate,assignment,mean_mae,mean_r2\n";
  json rows = json::array();
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const GridRow& row = r.rows[i];
    table << i << ',' << csv::quote(row.assignment.dump()) << ',' << csv::format(row.summary.mean_mae) << ','
          << csv::format(row.summary.mean_r2) << '\n';
    rows.push_back({{"assignment", row.assignment}, {"mean_mae", row.summary.mean_mae}, {"mean_r2", row.summary.mean_r2}});
  }
  run.emit("grid.csv", table.str());
  run.emit_json("best.json", to_json(r.rows[r.best].config));
  run.emit_json("summary.json", {{"best", r.best}, {"best_assignment", r.rows[r.best].assignment}, {"candidates", rows}});
  std::cout << "best " << r.rows[r.best].assignment.dump() << " mean MAE " << r.rows[r.best].summary.mean_mae << '\n';
  run.finish(to_json(base));
}

struct ExplainArgs {
  EvalArgs eval;
  std::string methods = "importance,sensitivity,shap";
  std::size_t permutations = 128;
  std::size_t samples = 20;
};

void cmd_explain(const Globals& g, const ExplainArgs& a) {
  std::vector<std::string> methods = split_list(a.methods);
  for (const std::string& m : methods) {
    if (m != "importance" && m != "sensitivity" && m != "shap") {
      throw ArgumentError("unknown explain method '" + m + "' (expected importance, sensitivity or shap)");
    }
  }
  Run run("explain", g);
  run.input(a.eval.checkpoint);
  const Checkpoint ck = load_checkpoint(a.eval.checkpoint);
  const TrainedPipeline& p = ck.pipeline;
  const Dataset data = load_for_checkpoint(run, a.eval, p);
  const Predictor predict = pipeline_predictor(p);
  const std::uint64_t seed = g.seed.value_or(p.config.seed);
  json report = json::object();
  for (const std::string& m : methods) {
    if (m == "importance") {
      const ImportanceReport r = mask_importance(p, data);
      run.emit("importance.csv", to_csv(r));
      report["importance"] = {{"ranking", r.ranking()}};
    } else if (m == "sensitivity") {
      const SensitivityReport r = sensitivity_analysis(predict, data);
      run.emit("sensitivity.csv", to_csv(r));
      report["sensitivity"] = {{"baseline_g", r.baseline}, {"baseline_row", r.baseline_row}};
    } else {
      auto rows = feature_rows(data);
      if (rows.size() > a.samples) rows.resize(a.samples);
      const ShapReport r = shapley_values(predict, rows, reference_row(data), a.permutations, seed, g.threads);
      std::vector<std::string> names;
      for (std::size_t c : data.schema.feature_indices()) names.push_back(data.schema.column(c).name);
      run.emit("shap.csv", to_csv(r, names));
      report["shap"] = {{"background", "feature means, categoricals at mode"},
                        {"background_prediction_g", r.background_prediction},
                        {"permutations", r.permutations},
                        {"exact", r.exact},
                        {"samples", rows.size()}};
    }
  }
  run.emit_json("explain.json", report);
  run.finish({{"methods", methods}, {"permutations", a.permutations}, {"samples", a.samples}, {"seed", seed}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal attentive tabular network for birth-weight regression"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for folds and grid candidates")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Sample a synthetic cohort");
  generate->add_option("--profile", gen.profile, "reus or ieee")->capture_default_str();
  generate->add_option("--n", gen.n, "Rows")->check(CLI::PositiveNumber)->capture_default_str();
  generate->add_option("--spec", gen.spec, "Generative spec (JSON)");
  generate->add_option("--noise-sd", gen.noise_sd, "Target noise sd in grams");

  DataArgs data;
  auto add_data = [&](CLI::App* c) {
    c->add_option("--data", data.data, "Dataset CSV")->required();
    c->add_option("--schema", data.schema, "Schema JSON")->required();
  };
  bool smogn = false;
  auto* preprocess = app.add_subcommand("preprocess", "Fit preprocessing on a dataset and write the prepared table");
  add_data(preprocess);
  preprocess->add_flag("--smogn", smogn, "Append SMOGN samples");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Cross-validate, then fit a final model");
  add_data(train);
  train->add_option("--ablate", tr.ablate, "no-attention, gelu, zscore, early-stopping, aggregate, no-smogn");
  train->add_option("--modalities", tr.modalities, "Comma-separated modalities to keep");
  train->add_flag("--no-final", tr.no_final, "Skip the full-data model");

  EvalArgs ev;
  auto add_eval = [](CLI::App* c, EvalArgs& e) {
    c->add_option("--checkpoint", e.checkpoint, "Checkpoint file")->required();
    c->add_option("--data", e.data, "Dataset CSV")->required();
    c->add_option("--schema", e.schema, "Schema JSON (default: the checkpoint's)");
  };
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  add_eval(evaluate, ev);

  std::string grid_path;
  auto* grid = app.add_subcommand("grid", "Exhaustive grid search with cross-validation");
  add_data(grid);
  grid->add_option("--grid", grid_path, "JSON object: config pointer -> candidate list")->required();

  ExplainArgs ex;
  auto* explain = app.add_subcommand("explain", "Importance, sensitivity and Shapley tables");
  add_eval(explain, ex.eval);
  explain->add_option("--methods", ex.methods, "Comma-separated: importance, sensitivity, shap")->capture_default_str();
  explain->add_option("--permutations", ex.permutations, "Shapley orders per sample")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  explain->add_option("--samples", ex.samples, "Rows to explain with Shapley")->check(CLI::PositiveNumber)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kArgument;
  }

  auto fail = [](const std::exception& e, int code) {
    status("error", e.what(), "\033[31m");
    return code;
  };
  try {
    if (*generate) cmd_generate(g, gen);
    if (*preprocess) cmd_preprocess(g, data, smogn);
    if (*train) cmd_train(g, data, tr);
    if (*evaluate) cmd_evaluate(g, ev);
    if (*grid) cmd_grid(g, data, grid_path);
    if (*explain) cmd_explain(g, ex);
  } catch (const ArgumentError& e) {
    return fail(e, kArgument);
  } catch (const CompatibilityError& e) {
    return fail(e, kCompatibility);
  } catch (const IoError& e) {
    return fail(e, kIo);
  } catch (const ConfigError& e) {
    return fail(e, kConfig);
  } catch (const VersionError& e) {
    return fail(e, kFormat);
  } catch (const CorruptionError& e) {
    return fail(e, kFormat);
  } catch (const DataError& e) {
    return fail(e, kData);
  } catch (const DimensionError& e) {
    return fail(e, kData);
  } catch (const std::exception& e) {
    return fail(e, kOther);
  }
  return kOk;
}
