#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mtabnet/autodiff.hpp"
#include "mtabnet/random.hpp"
#include "mtabnet/sparse.hpp"

namespace mtabnet {

enum class Mode { kTrain, kInfer };

/// Per-call settings shared by every layer in one forward pass.
struct ForwardContext {
  Mode mode = Mode::kTrain;
  /// Ghost batch size for normalization inside GLU blocks; 0 means the whole batch.
  std::size_t virtual_batch = 0;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormState {
  BatchNormState() = default;
  explicit BatchNormState(std::size_t width, double momentum_ = 0.9, double epsilon_ = 1e-5)
      : scale(Tensor({width}, 1.0)),
        shift(Tensor({width}, 0.0)),
        running_mean({width}, 0.0),
        running_var({width}, 1.0),
        momentum(momentum_),
        epsilon(epsilon_) {}

  std::size_t width() const { return running_mean.size(); }

  template <class P, class B>
  void visit(const std::string& prefix, P&& params, B&& buffers) {
    params(prefix + ".scale", scale);
    params(prefix + ".shift", shift);
    buffers(prefix + ".running_mean", running_mean);
    buffers(prefix + ".running_var", running_var);
  }

  Parameter scale;
  Parameter shift;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;
};

/// Row ranges [begin, end) of the ghost batches for n rows and chunk size v.
/// A trailing chunk of one row is merged into its predecessor.
inline std::vector<std::pair<std::size_t, std::size_t>> ghost_chunks(std::size_t n, std::size_t v) {
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  if (v == 0 || v >= n) {
    chunks.emplace_back(0, n);
    return chunks;
  }
  for (std::size_t begin = 0; begin < n; begin += v) {
    chunks.emplace_back(begin, std::min(n, begin + v));
  }
  if (chunks.size() > 1 && chunks.back().second - chunks.back().first == 1) {
    chunks.pop_back();
    chunks.back().second = n;
  }
  return chunks;
}

/// Batch normalization over rows. In train mode statistics come from each
/// ghost chunk (the whole batch when virtual_size is 0 or >= n) and the
/// running statistics move toward the chunk average by (1 - momentum).
/// In infer mode only the running statistics are used.
inline Var batch_norm(Var x, BatchNormState& state, Mode mode, std::size_t virtual_size = 0) {
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != state.width()) {
    throw DimensionError("batch_norm: input " + shape_string(xv.shape()) + " for width " +
                         std::to_string(state.width()));
  }
  if (!(state.epsilon > 0.0)) throw ConfigError("batch_norm: epsilon must be positive");
  const std::size_t n = xv.rows(), d = xv.cols();
  const Var scale = tape.parameter(state.scale);
  const Var shift = tape.parameter(state.shift);
  const Tensor& gamma = state.scale.value;
  const Tensor& beta = state.shift.value;

  Tensor xhat({n, d});
  Tensor y({n, d});
  // One inverse std per (chunk, feature); a single chunk in infer mode.
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  Tensor inv_std;

  if (mode == Mode::kTrain) {
    if (n < 2) throw BatchSizeError("batch_norm: train mode needs at least 2 rows, got " + std::to_string(n));
    if (virtual_size == 1) throw BatchSizeError("batch_norm: virtual batch size must be >= 2");
    chunks = ghost_chunks(n, virtual_size);
    inv_std = Tensor({chunks.size(), d});
    Tensor mean_acc({d}), var_acc({d});
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      const auto [b, e] = chunks[c];
      const double m = static_cast<double>(e - b);
      for (std::size_t j = 0; j < d; ++j) {
        double mu = 0.0;
        for (std::size_t i = b; i < e; ++i) mu += xv(i, j);
        mu /= m;
        double var = 0.0;
        for (std::size_t i = b; i < e; ++i) var += (xv(i, j) - mu) * (xv(i, j) - mu);
        var /= m;
        const double is = 1.0 / std::sqrt(var + state.epsilon);
        inv_std(c, j) = is;
        for (std::size_t i = b; i < e; ++i) {
          xhat(i, j) = (xv(i, j) - mu) * is;
          y(i, j) = xhat(i, j) * gamma[j] + beta[j];
        }
        mean_acc[j] += mu;
        var_acc[j] += var;
      }
    }
    const double k = static_cast<double>(chunks.size());
    for (std::size_t j = 0; j < d; ++j) {
      state.running_mean[j] = state.momentum * state.running_mean[j] + (1.0 - state.momentum) * mean_acc[j] / k;
      state.running_var[j] = state.momentum * state.running_var[j] + (1.0 - state.momentum) * var_acc[j] / k;
    }
  } else {
    chunks.emplace_back(0, n);
    inv_std = Tensor({1, d});
    for (std::size_t j = 0; j < d; ++j) {
      const double is = 1.0 / std::sqrt(state.running_var[j] + state.epsilon);
      inv_std(0, j) = is;
      for (std::size_t i = 0; i < n; ++i) {
        xhat(i, j) = (xv(i, j) - state.running_mean[j]) * is;
        y(i, j) = xhat(i, j) * gamma[j] + beta[j];
      }
    }
  }

  const bool train = mode == Mode::kTrain;
  return tape.record(std::move(y), {x, scale, shift},
                     [x, scale, shift, xhat = std::move(xhat), inv_std = std::move(inv_std),
                      chunks = std::move(chunks), train, n, d](Tape& t, const Tensor& g) {
                       const Tensor& gamma = t.value(scale);
                       if (t.needs_grad(scale) || t.needs_grad(shift)) {
                         Tensor& gs = t.grad_buffer(scale);
                         Tensor& gb = t.grad_buffer(shift);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < d; ++j) {
                             gs[j] += g(i, j) * xhat(i, j);
                             gb[j] += g(i, j);
                           }
                       }
                       if (!t.needs_grad(x)) return;
                       Tensor& gx = t.grad_buffer(x);
                       for (std::size_t c = 0; c < chunks.size(); ++c) {
                         const auto [b, e] = chunks[c];
                         const double m = static_cast<double>(e - b);
                         for (std::size_t j = 0; j < d; ++j) {
                           const double is = inv_std(c, j);
                           if (!train) {
                             for (std::size_t i = b; i < e; ++i) gx(i, j) += g(i, j) * gamma[j] * is;
                             continue;
                           }
                           double sum_g = 0.0, sum_gx = 0.0;
                           for (std::size_t i = b; i < e; ++i) {
                             const double gh = g(i, j) * gamma[j];
                             sum_g += gh;
                             sum_gx += gh * xhat(i, j);
                           }
                           for (std::size_t i = b; i < e; ++i) {
                             const double gh = g(i, j) * gamma[j];
                             gx(i, j) += is / m * (m * gh - sum_g - xhat(i, j) * sum_gx);
                           }
                         }
                       }
                     });
}

/// Train-mode batch norm on ghost chunks of `virtual_size` rows.
inline Var ghost_batch_norm(Var x, BatchNormState& state, std::size_t virtual_size) {
  if (virtual_size < 2) throw BatchSizeError("ghost_batch_norm: virtual batch size must be >= 2");
  return batch_norm(x, state, Mode::kTrain, virtual_size);
}

// ---------------------------------------------------------------------------
// Linear

struct LinearParams {
  LinearParams() = default;
  LinearParams(std::size_t in, std::size_t out, bool bias, Rng& rng)
      : weight(xavier_uniform({out, in}, in, out, rng)), has_bias(bias) {
    if (bias) this->bias = Parameter(Tensor({out}, 0.0));
  }

  std::size_t in_width() const { return weight.value.cols(); }
  std::size_t out_width() const { return weight.value.rows(); }

  Var forward(Var x) {
    Tape& tape = *x.tape();
    const Var w = tape.parameter(weight);
    return has_bias ? mtabnet::linear(x, w, tape.parameter(bias)) : mtabnet::linear(x, w);
  }

  template <class P>
  void visit(const std::string& prefix, P&& params) {
    params(prefix + ".weight", weight);
    if (has_bias) params(prefix + ".bias", bias);
  }

  Parameter weight;
  Parameter bias;
  bool has_bias = true;
};

// ---------------------------------------------------------------------------
// Gated linear unit block

/// out = a * sigmoid(b) where [a | b] are the two column halves of x.
inline Var glu(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() % 2 != 0) {
    throw DimensionError("glu: needs an even number of columns, got " + shape_string(xv.shape()));
  }
  const std::size_t n = xv.rows(), h = xv.cols() / 2;
  Tensor out({n, h});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j) out(i, j) = xv(i, j) * sigmoid(xv(i, h + j));
  return x.tape()->record(std::move(out), {x}, [x, n, h](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < h; ++j) {
        const double s = sigmoid(xv(i, h + j));
        gx(i, j) += g(i, j) * s;
        gx(i, h + j) += g(i, j) * xv(i, j) * s * (1.0 - s);
      }
  });
}

/// linear(d_in -> 2 d_out, no bias) -> ghost batch norm -> GLU.
/// The linear layer has no bias because the normalisation removes it.
struct GluBlock {
  GluBlock() = default;
  GluBlock(std::size_t in, std::size_t out, Rng& rng, double momentum = 0.9)
      : fc(in, 2 * out, false, rng), bn(2 * out, momentum) {}

  std::size_t in_width() const { return fc.in_width(); }
  std::size_t out_width() const { return fc.out_width() / 2; }

  Var forward(Var x, const ForwardContext& ctx) { return forward(x, bn, ctx); }

  /// Same weights, normalized through another state.
  Var forward(Var x, BatchNormState& norm, const ForwardContext& ctx) {
    return glu(batch_norm(fc.forward(x), norm, ctx.mode, ctx.virtual_batch));
  }

  template <class P, class B>
  void visit(const std::string& prefix, P&& params, B&& buffers) {
    fc.visit(prefix + ".fc", params);
    bn.visit(prefix + ".bn", params, buffers);
  }

  LinearParams fc;
  BatchNormState bn;
};

// ---------------------------------------------------------------------------
// Scaled dot-product attention

/// softmax(Q K^T / sqrt(d_k)) V computed independently inside consecutive
/// groups of `group` rows (0 = a single group covering every row).
inline Var grouped_attention(Var q, Var k, Var v, std::size_t group = 0) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (qv.rank() != 2 || !qv.same_shape(kv) || vv.rank() != 2 || vv.rows() != qv.rows()) {
    throw DimensionError("attention: Q " + shape_string(qv.shape()) + " K " + shape_string(kv.shape()) +
                         " V " + shape_string(vv.shape()));
  }
  const std::size_t n = qv.rows(), dk = qv.cols(), dv = vv.cols();
  const std::size_t gsz = group == 0 ? n : group;
  if (n % gsz != 0) throw DimensionError("attention: rows not divisible by group size");
  const std::size_t groups = n / gsz;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<double> weights(groups * gsz * gsz);
  std::vector<double> scores(gsz);
  Tensor out({n, dv});
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const std::size_t base = gi * gsz;
    double* a = weights.data() + gi * gsz * gsz;
    for (std::size_t i = 0; i < gsz; ++i) {
      for (std::size_t j = 0; j < gsz; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += qv(base + i, c) * kv(base + j, c);
        scores[j] = s * scale;
      }
      kernels::softmax(scores, std::span<double>(a + i * gsz, gsz));
      for (std::size_t j = 0; j < gsz; ++j) {
        const double w = a[i * gsz + j];
        for (std::size_t c = 0; c < dv; ++c) out(base + i, c) += w * vv(base + j, c);
      }
    }
  }

  return q.tape()->record(
      std::move(out), {q, k, v},
      [q, k, v, weights = std::move(weights), gsz, groups, dk, dv, scale](Tape& t, const Tensor& g) {
        const Tensor& qv = t.value(q);
        const Tensor& kv = t.value(k);
        const Tensor& vv = t.value(v);
        const bool nq = t.needs_grad(q), nk = t.needs_grad(k), nv = t.needs_grad(v);
        Tensor* gq = nq ? &t.grad_buffer(q) : nullptr;
        Tensor* gk = nk ? &t.grad_buffer(k) : nullptr;
        Tensor* gv = nv ? &t.grad_buffer(v) : nullptr;
        std::vector<double> da(gsz), ds(gsz);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const std::size_t base = gi * gsz;
          const double* a = weights.data() + gi * gsz * gsz;
          for (std::size_t i = 0; i < gsz; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < gsz; ++j) {
              double s = 0.0;
              for (std::size_t c = 0; c < dv; ++c) s += g(base + i, c) * vv(base + j, c);
              da[j] = s;
              dot += s * a[i * gsz + j];
              if (gv) {
                const double w = a[i * gsz + j];
                for (std::size_t c = 0; c < dv; ++c) (*gv)(base + j, c) += w * g(base + i, c);
              }
            }
            for (std::size_t j = 0; j < gsz; ++j) ds[j] = a[i * gsz + j] * (da[j] - dot) * scale;
            for (std::size_t j = 0; j < gsz; ++j) {
              if (ds[j] == 0.0) continue;
              for (std::size_t c = 0; c < dk; ++c) {
                if (gq) (*gq)(base + i, c) += ds[j] * kv(base + j, c);
                if (gk) (*gk)(base + j, c) += ds[j] * qv(base + i, c);
              }
            }
          }
        }
      });
}

/// Query/key/value projections W_Q, W_K, W_V, each d_h x d_k.
struct AttentionParams {
  AttentionParams() = default;
  AttentionParams(std::size_t d_h, std::size_t d_k, Rng& rng)
      : wq(xavier_uniform({d_h, d_k}, d_h, d_k, rng)),
        wk(xavier_uniform({d_h, d_k}, d_h, d_k, rng)),
        wv(xavier_uniform({d_h, d_k}, d_h, d_k, rng)) {}

  template <class P>
  void visit(const std::string& prefix, P&& params) {
    params(prefix + ".wq", wq);
    params(prefix + ".wk", wk);
    params(prefix + ".wv", wv);
  }

  Parameter wq;
  Parameter wk;
  Parameter wv;
};

/// H_attn = softmax(Q K^T / sqrt(d_k)) V with Q = h W_Q, K = h W_K, V = h W_V.
/// Rows of `h` attend to each other within groups of `group` rows
/// (0 = all rows form one group).
inline Var self_attention(Var h, AttentionParams& params, std::size_t group = 0) {
  Tape& tape = *h.tape();
  const Tensor& hv = h.value();
  if (hv.rank() != 2 || hv.cols() != params.wq.value.rows()) {
    throw DimensionError("self_attention: input " + shape_string(hv.shape()) + " for W_Q " +
                         shape_string(params.wq.value.shape()));
  }
  const Var q = matmul(h, tape.parameter(params.wq));
  const Var k = matmul(h, tape.parameter(params.wk));
  const Var v = matmul(h, tape.parameter(params.wv));
  return grouped_attention(q, k, v, group);
}

// ---------------------------------------------------------------------------
// Feature tokens

/// Embeds each scalar feature as its own d_h-wide token:
/// token(i, j) = x(i, j) * E(j, :) + B(j, :). Output rows are ordered
/// sample-major, so sample i owns rows [i d, (i + 1) d).
inline Var tokenize(Var x, Var embed, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& ev = embed.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || ev.rank() != 2 || ev.rows() != xv.cols() || !ev.same_shape(bv)) {
    throw DimensionError("tokenize: input " + shape_string(xv.shape()) + " embedding " +
                         shape_string(ev.shape()));
  }
  const std::size_t n = xv.rows(), d = xv.cols(), dh = ev.cols();
  Tensor out({n * d, dh});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t c = 0; c < dh; ++c) out(i * d + j, c) = xv(i, j) * ev(j, c) + bv(j, c);
  return x.tape()->record(std::move(out), {x, embed, bias}, [x, embed, bias, n, d, dh](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    const Tensor& ev = t.value(embed);
    Tensor* gx = t.needs_grad(x) ? &t.grad_buffer(x) : nullptr;
    Tensor* ge = t.needs_grad(embed) ? &t.grad_buffer(embed) : nullptr;
    Tensor* gb = t.needs_grad(bias) ? &t.grad_buffer(bias) : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t c = 0; c < dh; ++c) {
          const double gv = g(i * d + j, c);
          if (gx) (*gx)(i, j) += gv * ev(j, c);
          if (ge) (*ge)(j, c) += gv * xv(i, j);
          if (gb) (*gb)(j, c) += gv;
        }
  });
}

/// Collapses tokens back to one logit per feature:
/// logit(i, j) = tokens(i d + j, :) . w + b(j).
inline Var token_logits(Var tokens, Var w, Var b, std::size_t features) {
  const Tensor& tv = tokens.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (tv.rank() != 2 || features == 0 || tv.rows() % features != 0 || wv.size() != tv.cols() ||
      bv.size() != features) {
    throw DimensionError("token_logits: tokens " + shape_string(tv.shape()) + " weight " +
                         shape_string(wv.shape()));
  }
  const std::size_t n = tv.rows() / features, d = features, dk = tv.cols();
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = bv[j];
      for (std::size_t c = 0; c < dk; ++c) s += tv(i * d + j, c) * wv[c];
      out(i, j) = s;
    }
  return tokens.tape()->record(std::move(out), {tokens, w, b}, [tokens, w, b, n, d, dk](Tape& t, const Tensor& g) {
    const Tensor& tv = t.value(tokens);
    const Tensor& wv = t.value(w);
    Tensor* gt = t.needs_grad(tokens) ? &t.grad_buffer(tokens) : nullptr;
    Tensor* gw = t.needs_grad(w) ? &t.grad_buffer(w) : nullptr;
    Tensor* gb = t.needs_grad(b) ? &t.grad_buffer(b) : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double gv = g(i, j);
        if (gb) (*gb)[j] += gv;
        for (std::size_t c = 0; c < dk; ++c) {
          if (gt) (*gt)(i * d + j, c) += gv * wv[c];
          if (gw) (*gw)[c] += gv * tv(i * d + j, c);
        }
      }
  });
}

}  // namespace mtabnet
