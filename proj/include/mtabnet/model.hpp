#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtabnet/autodiff.hpp"
#include "mtabnet/encoder.hpp"
#include "mtabnet/layers.hpp"
#include "mtabnet/random.hpp"

namespace mtabnet {

enum class Fusion { kConcat, kAggregate };

/// Birth-weight classes. The boundary 2500 g belongs to NBW.
enum class BwClass { kLbw, kNbw };

inline constexpr double kLbwThreshold = 2500.0;

inline BwClass classify_bw(double grams) {
  if (!std::isfinite(grams)) throw ContractError("classify_bw: non-finite prediction");
  return grams < kLbwThreshold ? BwClass::kLbw : BwClass::kNbw;
}

inline const char* to_string(BwClass c) { return c == BwClass::kLbw ? "LBW" : "NBW"; }

struct ModalityConfig {
  std::string name;
  std::size_t width = 0;
  EncoderConfig encoder;
};

struct ModelConfig {
  std::vector<ModalityConfig> modalities;
  Fusion fusion = Fusion::kConcat;
  double lambda_sparse = 1e-3;

  std::size_t joint_width() const {
    if (fusion == Fusion::kAggregate) return modalities.front().encoder.d_f;
    std::size_t w = 0;
    for (const ModalityConfig& m : modalities) w += m.encoder.d_f;
    return w;
  }

  void validate() const {
    if (modalities.empty()) throw ConfigError("model: at least one modality is required");
    for (const ModalityConfig& m : modalities) {
      if (m.width < 1) throw ConfigError("model: modality '" + m.name + "' has no features");
      m.encoder.validate();
    }
    if (fusion == Fusion::kAggregate) {
      for (const ModalityConfig& m : modalities) {
        if (m.encoder.d_f != modalities.front().encoder.d_f) {
          throw ConfigError("model: aggregate fusion needs equal d_f across modalities");
        }
      }
    }
    if (!(lambda_sparse >= 0.0)) throw ConfigError("model: lambda_sparse must be >= 0");
  }
};

/// Concatenation along columns, or the elementwise mean of equal-width parts.
inline Var fuse(std::span<const Var> parts, Fusion mode) {
  if (parts.empty()) throw DimensionError("fuse: no parts");
  if (parts.size() == 1) return parts[0];
  if (mode == Fusion::kConcat) return concat(parts, 1);
  for (const Var& p : parts) {
    if (!p.value().same_shape(parts[0].value())) {
      throw ConfigError("fuse: aggregate fusion needs equal widths, got " + shape_string(p.shape()) + " and " +
                        shape_string(parts[0].shape()));
    }
  }
  Var total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
  return mul(total, 1.0 / static_cast<double>(parts.size()));
}

/// Affine map between grams and the scaled target used for training.
struct TargetScale {
  double min = 0.0;
  double max = 1.0;

  double to_grams(double s) const { return min + s * (max - min); }
  double to_scaled(double g) const { return max > min ? (g - min) / (max - min) : 0.0; }
};

struct PredictionRecord {
  double grams = 0.0;
  BwClass bw_class = BwClass::kNbw;
  /// traces[m][t] is the mask row of modality m at step t (empty unless requested).
  std::vector<std::vector<std::vector<double>>> traces;
};

struct ForwardResult {
  /// n x 1 prediction in scaled-target space.
  Var prediction;
  std::vector<EncodeResult> encodings;
};

/// mean((yhat - y)^2) + lambda * mean over modalities of the mask entropy.
inline Var model_loss(Var prediction, Var target, std::span<const EncodeResult> encodings, double lambda) {
  if (!prediction.valid() || !target.valid() || prediction.value().empty() || target.value().empty()) {
    throw DataError("loss: empty batch");
  }
  const Tensor& pv = prediction.value();
  const Tensor& tv = target.value();
  if (pv.size() != tv.size()) {
    throw DimensionError("loss: " + std::to_string(pv.size()) + " predictions vs " + std::to_string(tv.size()) +
                         " targets");
  }
  Var diff = sub(prediction, target);
  Var loss = mean(square(diff));
  if (lambda > 0.0 && !encodings.empty()) {
    Var reg;
    for (const EncodeResult& e : encodings) {
      const Var r = sparsity_regularizer(e.masks);
      reg = reg.valid() ? add(reg, r) : r;
    }
    loss = add(loss, mul(reg, lambda / static_cast<double>(encodings.size())));
  }
  return loss;
}

/// Multimodal model: one attentive encoder per modality, fusion, linear head.
class Model {
 public:
  Model() = default;

  Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    for (const ModalityConfig& m : config_.modalities) encoders_.emplace_back(m.width, m.encoder, rng);
    head_ = LinearParams(config_.joint_width(), 1, true, rng);
  }

  const ModelConfig& config() const { return config_; }
  const TargetScale& target_scale() const { return target_scale_; }
  void set_target_scale(TargetScale s) { target_scale_ = s; }
  LinearParams& head() { return head_; }
  Encoder& encoder(std::size_t m) { return encoders_.at(m); }
  std::size_t modality_count() const { return encoders_.size(); }

  ForwardResult forward(Tape& tape, std::span<const Tensor> inputs, const ForwardContext& ctx) {
    check_inputs(inputs);
    std::vector<Var> vars;
    for (const Tensor& x : inputs) vars.push_back(tape.constant(x));
    return forward(vars, ctx);
  }

  ForwardResult forward(std::span<const Var> inputs, const ForwardContext& ctx) {
    std::vector<Tensor> values;
    for (const Var& v : inputs) values.push_back(v.value());
    check_inputs(values);
    ForwardResult result;
    std::vector<Var> parts;
    for (std::size_t m = 0; m < encoders_.size(); ++m) {
      result.encodings.push_back(encoders_[m].encode(inputs[m], ctx));
      parts.push_back(result.encodings.back().z);
    }
    result.prediction = head_.forward(fuse(parts, config_.fusion));
    return result;
  }

  /// Inference in grams, in chunks of `chunk` rows. Does not touch any state.
  std::vector<PredictionRecord> predict(std::span<const Tensor> inputs, bool keep_traces = false,
                                        std::size_t chunk = 256) {
    const std::size_t n = check_inputs(inputs);
    std::vector<PredictionRecord> out;
    out.reserve(n);
    const ForwardContext ctx{Mode::kInfer, 0};
    for (std::size_t begin = 0; begin < n; begin += chunk) {
      const std::size_t end = std::min(n, begin + chunk);
      std::vector<Tensor> slice;
      for (const Tensor& x : inputs) slice.push_back(row_range(x, begin, end));
      Tape tape;
      const ForwardResult r = forward(tape, slice, ctx);
      for (std::size_t i = 0; i < end - begin; ++i) {
        PredictionRecord rec;
        rec.grams = target_scale_.to_grams(r.prediction.value()[i]);
        rec.bw_class = classify_bw(rec.grams);
        if (keep_traces) {
          for (const EncodeResult& e : r.encodings) {
            std::vector<std::vector<double>> steps;
            for (const Var& mask : e.masks) {
              const auto row = mask.value().row(i);
              steps.emplace_back(row.begin(), row.end());
            }
            rec.traces.push_back(std::move(steps));
          }
        }
        out.push_back(std::move(rec));
      }
    }
    return out;
  }

  /// Calls params(name, Parameter&) and buffers(name, Tensor&) for every piece of state,
  /// in a fixed order.
  template <class P, class B>
  void visit(P&& params, B&& buffers) {
    for (std::size_t m = 0; m < encoders_.size(); ++m) {
      encoders_[m].visit("enc." + config_.modalities[m].name, params, buffers);
    }
    head_.visit("head", params);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    visit([&](const std::string&, Parameter& p) { out.push_back(&p); }, [](const std::string&, Tensor&) {});
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (Parameter* p : parameters()) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

 private:
  static Tensor row_range(const Tensor& x, std::size_t begin, std::size_t end) {
    Tensor out({end - begin, x.cols()});
    std::copy(x.data() + begin * x.cols(), x.data() + end * x.cols(), out.data());
    return out;
  }

  std::size_t check_inputs(std::span<const Tensor> inputs) const {
    if (inputs.size() != encoders_.size()) {
      throw DataError("model: expected " + std::to_string(encoders_.size()) + " modality matrices, got " +
                      std::to_string(inputs.size()));
    }
    const std::size_t n = inputs[0].rows();
    for (std::size_t m = 0; m < inputs.size(); ++m) {
      if (inputs[m].rank() != 2) throw DimensionError("model: modality input must be a matrix");
      if (inputs[m].rows() != n) {
        throw DataError("model: modality '" + config_.modalities[m].name + "' has " +
                        std::to_string(inputs[m].rows()) + " rows, expected " + std::to_string(n));
      }
      if (inputs[m].cols() != config_.modalities[m].width) {
        throw DimensionError("model: modality '" + config_.modalities[m].name + "' has " +
                             std::to_string(inputs[m].cols()) + " columns, expected " +
                             std::to_string(config_.modalities[m].width));
      }
    }
    return n;
  }

  ModelConfig config_;
  std::vector<Encoder> encoders_;
  LinearParams head_;
  TargetScale target_scale_;
};

}  // namespace mtabnet
