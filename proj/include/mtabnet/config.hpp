#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtabnet/data.hpp"
#include "mtabnet/encoder.hpp"
#include "mtabnet/model.hpp"
#include "mtabnet/preprocess.hpp"
#include "mtabnet/smogn.hpp"

namespace mtabnet {

using nlohmann::json;

inline const char* to_string(MaskType t) { return t == MaskType::kSparsemax ? "sparsemax" : "entmax15"; }
inline const char* to_string(Activation a) { return a == Activation::kRelu ? "relu" : "gelu"; }
inline const char* to_string(Fusion f) { return f == Fusion::kConcat ? "concat" : "aggregate"; }

inline MaskType parse_mask(const std::string& s) {
  if (s == "sparsemax") return MaskType::kSparsemax;
  if (s == "entmax15" || s == "entmax") return MaskType::kEntmax15;
  throw ConfigError("unknown mask type '" + s + "' (expected sparsemax or entmax15)");
}
inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "gelu") return Activation::kGelu;
  throw ConfigError("unknown activation '" + s + "' (expected relu or gelu)");
}
inline Fusion parse_fusion(const std::string& s) {
  if (s == "concat") return Fusion::kConcat;
  if (s == "aggregate") return Fusion::kAggregate;
  throw ConfigError("unknown fusion '" + s + "' (expected concat or aggregate)");
}

inline json to_json(const EncoderConfig& c) {
  return {{"n_steps", c.n_steps},     {"d_h", c.d_h},
          {"d_k", c.d_k},             {"d_f", c.d_f},
          {"gamma", c.gamma},         {"mask_type", to_string(c.mask_type)},
          {"n_shared", c.n_shared},   {"n_step_specific", c.n_step_specific},
          {"activation", to_string(c.activation)}, {"attention", c.attention},
          {"bn_momentum", c.bn_momentum}};
}

inline EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.n_steps = j.value("n_steps", c.n_steps);
  c.d_h = j.value("d_h", c.d_h);
  c.d_k = j.value("d_k", c.d_k);
  c.d_f = j.value("d_f", c.d_f);
  c.gamma = j.value("gamma", c.gamma);
  c.mask_type = parse_mask(j.value("mask_type", std::string(to_string(c.mask_type))));
  c.n_shared = j.value("n_shared", c.n_shared);
  c.n_step_specific = j.value("n_step_specific", c.n_step_specific);
  c.activation = parse_activation(j.value("activation", std::string(to_string(c.activation))));
  c.attention = j.value("attention", c.attention);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.validate();
  return c;
}

inline json to_json(const ModelConfig& c) {
  json mods = json::array();
  for (const ModalityConfig& m : c.modalities) mods.push_back({{"name", m.name}, {"width", m.width}, {"encoder", to_json(m.encoder)}});
  return {{"modalities", mods}, {"fusion", to_string(c.fusion)}, {"lambda_sparse", c.lambda_sparse}};
}

inline ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  for (const json& m : j.at("modalities")) {
    c.modalities.push_back({m.at("name").get<std::string>(), m.at("width").get<std::size_t>(), encoder_from_json(m.at("encoder"))});
  }
  c.fusion = parse_fusion(j.value("fusion", std::string("concat")));
  c.lambda_sparse = j.value("lambda_sparse", c.lambda_sparse);
  c.validate();
  return c;
}

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t virtual_batch_size = 32;
  std::size_t max_epochs = 200;
  double lr = 2e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Step schedule: lr is multiplied by lr_decay every lr_step epochs (0 = constant).
  std::size_t lr_step = 0;
  double lr_decay = 0.9;
  /// 0 disables early stopping.
  std::size_t patience = 0;
  /// Share of the training split held out to drive early stopping.
  double validation_fraction = 0.15;

  void validate() const {
    if (virtual_batch_size < 2 || batch_size < virtual_batch_size) {
      throw ConfigError("train: need batch_size >= virtual_batch_size >= 2");
    }
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must be in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("train: eps must be > 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train: lr_decay must be in (0,1]");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("train: validation_fraction must be in (0,1)");
    }
  }
};

inline json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"virtual_batch_size", c.virtual_batch_size}, {"max_epochs", c.max_epochs},
          {"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps},
          {"lr_step", c.lr_step}, {"lr_decay", c.lr_decay}, {"patience", c.patience},
          {"validation_fraction", c.validation_fraction}};
}

inline TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.virtual_batch_size = j.value("virtual_batch_size", c.virtual_batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.lr_step = j.value("lr_step", c.lr_step);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.patience = j.value("patience", c.patience);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.validate();
  return c;
}

/// Everything one cross-validated run needs besides the data.
struct ExperimentConfig {
  EncoderConfig encoder;
  Fusion fusion = Fusion::kConcat;
  double lambda_sparse = 1e-3;
  /// Empty: every modality in the schema.
  std::vector<std::string> modalities;
  TrainConfig train;
  PreprocessConfig preprocess;
  SmognConfig smogn;
  bool use_smogn = true;
  std::size_t folds = 5;
  std::uint64_t seed = 0;

  /// One encoder per modality present in `schema`, all sharing `encoder`.
  ModelConfig model_config(const Schema& schema) const {
    ModelConfig m;
    m.fusion = fusion;
    m.lambda_sparse = lambda_sparse;
    for (const std::string& name : schema.modalities()) {
      m.modalities.push_back({name, schema.columns_of(name).size(), encoder});
    }
    m.validate();
    return m;
  }

  void validate() const {
    encoder.validate();
    train.validate();
    smogn.validate();
    if (folds < 2) throw ConfigError("folds must be >= 2");
    if (!(lambda_sparse >= 0.0)) throw ConfigError("lambda_sparse must be >= 0");
    for (const std::string& m : modalities) {
      const auto& known = modality_names();
      if (std::find(known.begin(), known.end(), m) == known.end()) throw ConfigError("unknown modality '" + m + "'");
    }
  }
};

inline json to_json(const ExperimentConfig& c) {
  json smogn = c.smogn.to_json();
  smogn["enabled"] = c.use_smogn;
  return {{"encoder", to_json(c.encoder)}, {"fusion", to_string(c.fusion)}, {"lambda_sparse", c.lambda_sparse},
          {"modalities", c.modalities}, {"train", to_json(c.train)}, {"preprocess", c.preprocess.to_json()},
          {"smogn", smogn}, {"folds", c.folds}, {"seed", c.seed}};
}

inline ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("encoder")) c.encoder = encoder_from_json(j.at("encoder"));
    c.fusion = parse_fusion(j.value("fusion", std::string("concat")));
    c.lambda_sparse = j.value("lambda_sparse", c.lambda_sparse);
    c.modalities = j.value("modalities", c.modalities);
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    if (j.contains("preprocess")) c.preprocess = PreprocessConfig::from_json(j.at("preprocess"));
    if (j.contains("smogn")) {
      c.smogn = SmognConfig::from_json(j.at("smogn"));
      c.use_smogn = j.at("smogn").value("enabled", true);
    }
    c.folds = j.value("folds", c.folds);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace mtabnet
