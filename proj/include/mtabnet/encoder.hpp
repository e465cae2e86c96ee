#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mtabnet/autodiff.hpp"
#include "mtabnet/layers.hpp"
#include "mtabnet/random.hpp"
#include "mtabnet/sparse.hpp"

namespace mtabnet {

enum class Activation { kRelu, kGelu };

inline Var activate(Var x, Activation a) { return a == Activation::kRelu ? relu(x) : gelu(x); }

/// Hyperparameters of one modality encoder.
struct EncoderConfig {
  std::size_t n_steps = 5;
  /// Token width fed to attention.
  std::size_t d_h = 8;
  /// Attention key/value width.
  std::size_t d_k = 8;
  /// Per-step decision width; the encoder output has this many columns.
  std::size_t d_f = 8;
  /// Relaxation factor of the prior scale.
  double gamma = 0.9;
  MaskType mask_type = MaskType::kEntmax15;
  std::size_t n_shared = 2;
  std::size_t n_step_specific = 2;
  Activation activation = Activation::kRelu;
  /// false: the attentive transformer is removed and every mask is uniform.
  bool attention = true;
  double bn_momentum = 0.9;

  void validate() const {
    if (n_steps < 1) throw ConfigError("encoder: n_steps must be >= 1");
    if (!(gamma > 0.0)) throw ConfigError("encoder: gamma must be > 0");
    if (d_h < 1 || d_k < 1 || d_f < 1) throw ConfigError("encoder: widths must be >= 1");
    if (n_shared + n_step_specific < 1) throw ConfigError("encoder: feature transformer needs a block");
  }
};

/// M = sparse_activation(P * logits), row-wise. Features whose prior is
/// exactly zero are removed from the activation's support (as long as the row
/// has another feature left), so a fully used feature cannot come back.
inline Var compute_mask(Var logits, Var prior, MaskType type) {
  const Tensor& pv = prior.value();
  const Tensor& lv = logits.value();
  if (!pv.same_shape(lv)) {
    throw DimensionError("compute_mask: prior " + shape_string(pv.shape()) + " vs logits " +
                         shape_string(lv.shape()));
  }
  std::vector<bool> allowed(pv.size());
  bool any_zero = false;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (pv[i] < 0.0) throw ContractError("compute_mask: negative prior entry");
    allowed[i] = pv[i] > 0.0;
    any_zero = any_zero || !allowed[i];
  }
  const Var scaled = mul(prior, logits);
  return any_zero ? sparse_activation(scaled, type, allowed) : sparse_activation(scaled, type);
}

/// P' = P * clamp(gamma - M, 0, gamma).
inline Var update_prior(Var prior, Var mask, double gamma) {
  return mul(prior, clamp(rsub(gamma, mask), 0.0, gamma));
}

inline Var apply_mask(Var mask, Var h) {
  if (!mask.value().same_shape(h.value())) {
    throw DimensionError("apply_mask: mask " + shape_string(mask.shape()) + " vs features " +
                         shape_string(h.shape()));
  }
  return mul(mask, h);
}

/// Runs the shared blocks followed by the step's own blocks. From the second
/// block on, each block whose width matches its input is wrapped in a
/// residual connection scaled by sqrt(0.5).
/// When `shared_norms` is non-empty, shared block i normalizes through
/// shared_norms[i] instead of its own state.
inline Var feature_transform(Var x, std::span<GluBlock> shared, std::span<GluBlock> step,
                             const ForwardContext& ctx, std::span<BatchNormState> shared_norms = {}) {
  if (!shared_norms.empty() && shared_norms.size() != shared.size()) {
    throw ContractError("feature_transform: one norm state per shared block");
  }
  static const double kResidualScale = std::sqrt(0.5);
  Var h = x;
  std::size_t index = 0;
  auto run = [&](GluBlock& block, BatchNormState* norm) {
    if (h.value().cols() != block.in_width()) {
      throw DimensionError("feature_transform: block expects width " + std::to_string(block.in_width()) +
                           ", got " + std::to_string(h.value().cols()));
    }
    const Var out = norm ? block.forward(h, *norm, ctx) : block.forward(h, ctx);
    if (index > 0 && out.value().cols() == h.value().cols()) {
      h = mul(add(h, out), kResidualScale);
    } else {
      h = out;
    }
    ++index;
  };
  for (std::size_t i = 0; i < shared.size(); ++i) run(shared[i], shared_norms.empty() ? nullptr : &shared_norms[i]);
  for (GluBlock& b : step) run(b, nullptr);
  return h;
}

/// Mean over steps and samples of the row entropy -sum_j M_j log(M_j + 1e-10).
inline Var sparsity_regularizer(std::span<const Var> masks) {
  if (masks.empty()) throw ContractError("sparsity_regularizer: empty trace");
  constexpr double kEps = 1e-10;
  Var total;
  for (const Var& m : masks) {
    const double rows = static_cast<double>(m.value().rows());
    const Var ent = mul(sum(mul(m, log(add(m, kEps)))), -1.0 / rows);
    total = total.valid() ? add(total, ent) : ent;
  }
  return mul(total, 1.0 / static_cast<double>(masks.size()));
}

/// Output of one encoder pass.
struct EncodeResult {
  Var z;
  /// One n x d_m mask per step.
  std::vector<Var> masks;
  /// Prior scale each step's mask was computed with (all ones at step 0).
  std::vector<Var> priors;
};

/// Parameters owned by one decision step.
struct EncoderStep {
  AttentionParams attention;
  /// Token -> scalar logit projection (d_k) and per-feature logit bias (d_m).
  Parameter proj_weight;
  Parameter proj_bias;
  std::vector<GluBlock> blocks;
  /// Own normalization for the shared blocks at steps after the first, so
  /// running statistics never mix inputs from different steps.
  std::vector<BatchNormState> shared_norms;
};

/// Attentive encoder for one modality.
///
/// Per step t the modality's normalised features are embedded as one token
/// per feature, the tokens of each sample attend to each other, and the
/// attended tokens are projected to one logit per feature. The prior-scaled
/// logits pass through the sparse activation to give the mask M_t, which
/// multiplies the normalised features before the feature transformer. The
/// encoder output is the sum over steps of act(step output).
class Encoder {
 public:
  Encoder() = default;

  Encoder(std::size_t input_width, EncoderConfig config, Rng& rng)
      : config_(config), width_(input_width), input_bn_(input_width, config.bn_momentum) {
    config_.validate();
    if (input_width < 1) throw ConfigError("encoder: input width must be >= 1");
    const std::size_t df = config_.d_f;
    for (std::size_t i = 0; i < config_.n_shared; ++i) {
      shared_.emplace_back(i == 0 ? input_width : df, df, rng, config_.bn_momentum);
    }
    if (config_.attention) {
      token_embed_ = Parameter(xavier_uniform({input_width, config_.d_h}, 1, config_.d_h, rng));
      token_bias_ = Parameter(Tensor({input_width, config_.d_h}, 0.0));
    }
    for (std::size_t t = 0; t < config_.n_steps; ++t) {
      EncoderStep step;
      if (config_.attention) {
        step.attention = AttentionParams(config_.d_h, config_.d_k, rng);
        step.proj_weight = Parameter(xavier_uniform({config_.d_k}, config_.d_k, 1, rng));
        step.proj_bias = Parameter(Tensor({input_width}, 0.0));
      }
      for (std::size_t i = 0; i < config_.n_step_specific; ++i) {
        const bool first = config_.n_shared == 0 && i == 0;
        step.blocks.emplace_back(first ? input_width : df, df, rng, config_.bn_momentum);
      }
      if (t > 0) {
        for (std::size_t i = 0; i < config_.n_shared; ++i) step.shared_norms.emplace_back(2 * df, config_.bn_momentum);
      }
      steps_.push_back(std::move(step));
    }
  }

  const EncoderConfig& config() const { return config_; }
  std::size_t input_width() const { return width_; }
  std::size_t output_width() const { return config_.d_f; }

  /// Mask logits for one step: attention over feature tokens, then projection.
  Var step_logits(Var normalized, std::size_t t) {
    Tape& tape = *normalized.tape();
    EncoderStep& step = steps_.at(t);
    const Var tokens = tokenize(normalized, tape.parameter(token_embed_), tape.parameter(token_bias_));
    const Var attended = self_attention(tokens, step.attention, width_);
    return token_logits(attended, tape.parameter(step.proj_weight), tape.parameter(step.proj_bias), width_);
  }

  EncodeResult encode(Var x, const ForwardContext& ctx) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || xv.cols() != width_) {
      throw DimensionError("encoder: input " + shape_string(xv.shape()) + " for width " +
                           std::to_string(width_));
    }
    if (!xv.all_finite()) throw ContractError("encoder: non-finite input");
    Tape& tape = *x.tape();
    const std::size_t n = xv.rows();
    const Var normalized = batch_norm(x, input_bn_, ctx.mode);

    EncodeResult result;
    Var prior = tape.constant(Tensor({n, width_}, 1.0));
    const Var uniform = tape.constant(Tensor({n, width_}, 1.0 / static_cast<double>(width_)));
    for (std::size_t t = 0; t < config_.n_steps; ++t) {
      Var mask;
      result.priors.push_back(prior);
      if (config_.attention) {
        mask = compute_mask(step_logits(normalized, t), prior, config_.mask_type);
        prior = update_prior(prior, mask, config_.gamma);
      } else {
        mask = uniform;
      }
      result.masks.push_back(mask);
      const Var masked = apply_mask(mask, normalized);
      const Var decision = feature_transform(masked, shared_, steps_[t].blocks, ctx, steps_[t].shared_norms);
      const Var contribution = activate(decision, config_.activation);
      result.z = result.z.valid() ? add(result.z, contribution) : contribution;
    }
    return result;
  }

  template <class P, class B>
  void visit(const std::string& prefix, P&& params, B&& buffers) {
    input_bn_.visit(prefix + ".input_bn", params, buffers);
    if (config_.attention) {
      params(prefix + ".token_embed", token_embed_);
      params(prefix + ".token_bias", token_bias_);
    }
    for (std::size_t i = 0; i < shared_.size(); ++i) {
      shared_[i].visit(prefix + ".shared" + std::to_string(i), params, buffers);
    }
    for (std::size_t t = 0; t < steps_.size(); ++t) {
      const std::string sp = prefix + ".step" + std::to_string(t);
      EncoderStep& step = steps_[t];
      if (config_.attention) {
        step.attention.visit(sp + ".attn", params);
        params(sp + ".proj_weight", step.proj_weight);
        params(sp + ".proj_bias", step.proj_bias);
      }
      for (std::size_t i = 0; i < step.blocks.size(); ++i) {
        step.blocks[i].visit(sp + ".block" + std::to_string(i), params, buffers);
      }
      for (std::size_t i = 0; i < step.shared_norms.size(); ++i) {
        step.shared_norms[i].visit(sp + ".shared_bn" + std::to_string(i), params, buffers);
      }
    }
  }

  EncoderStep& step(std::size_t t) { return steps_.at(t); }
  std::vector<GluBlock>& shared_blocks() { return shared_; }
  BatchNormState& input_norm() { return input_bn_; }

 private:
  EncoderConfig config_;
  std::size_t width_ = 0;
  BatchNormState input_bn_;
  Parameter token_embed_;
  Parameter token_bias_;
  std::vector<GluBlock> shared_;
  std::vector<EncoderStep> steps_;
};

}  // namespace mtabnet
