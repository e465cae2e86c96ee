#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "mtabnet/autodiff.hpp"

namespace mtabnet {

enum class MaskType { kSparsemax, kEntmax15 };

namespace kernels {

/// Euclidean projection of z onto the probability simplex (sorted-threshold
/// algorithm). Entries with allowed[i] == false are pinned to zero and take no
/// part in the projection. Returns the threshold tau.
inline double sparsemax(std::span<const double> z, std::span<double> p,
                        std::span<const bool> allowed = {}) {
  std::vector<double> sorted;
  sorted.reserve(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (allowed.empty() || allowed[i]) sorted.push_back(z[i]);
  }
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumsum = 0.0, tau = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumsum += sorted[k];
    const double candidate = (cumsum - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] > candidate) tau = candidate;
  }
  for (std::size_t i = 0; i < z.size(); ++i) {
    const bool on = allowed.empty() || allowed[i];
    p[i] = on ? std::max(z[i] - tau, 0.0) : 0.0;
  }
  return tau;
}

/// Exact 1.5-entmax: p_i = max(0, z_i/2 - tau)^2 with tau chosen so sum p = 1.
/// Same pinning convention as sparsemax. Returns tau (in the z/2 scale).
inline double entmax15(std::span<const double> z, std::span<double> p,
                       std::span<const bool> allowed = {}) {
  std::vector<double> sorted;
  sorted.reserve(z.size());
  double zmax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (allowed.empty() || allowed[i]) {
      sorted.push_back(z[i] / 2.0);
      zmax = std::max(zmax, z[i] / 2.0);
    }
  }
  for (double& v : sorted) v -= zmax;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumsum = 0.0, cumsq = 0.0, tau = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumsum += sorted[k];
    cumsq += sorted[k] * sorted[k];
    const double kk = static_cast<double>(k + 1);
    const double m = cumsum / kk;
    const double ss = cumsq / kk;
    const double delta = (1.0 - kk * (ss - m * m)) / kk;
    const double candidate = m - std::sqrt(std::max(delta, 0.0));
    if (candidate <= sorted[k]) tau = candidate;
  }
  for (std::size_t i = 0; i < z.size(); ++i) {
    const bool on = allowed.empty() || allowed[i];
    const double d = z[i] / 2.0 - zmax - tau;
    p[i] = (on && d > 0.0) ? d * d : 0.0;
  }
  return tau + zmax;
}

inline void softmax(std::span<const double> z, std::span<double> p) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - zmax);
    total += p[i];
  }
  for (double& v : p) v /= total;
}

}  // namespace kernels

namespace detail {

/// Row-wise sparse activation with optional per-entry exclusion.
inline Var sparse_rows(Var z, MaskType type, const std::vector<bool>& allowed) {
  const Tensor& zv = z.value();
  const std::size_t rows = zv.rows(), cols = zv.cols();
  if (!allowed.empty() && allowed.size() != zv.size()) {
    throw DimensionError("sparse activation: exclusion mask size mismatch");
  }
  Tensor p(zv.shape());
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<const bool> mask;
    // std::vector<bool> has no contiguous storage; copy into a plain buffer.
    std::unique_ptr<bool[]> buf;
    if (!allowed.empty()) {
      buf = std::make_unique<bool[]>(cols);
      bool any = false;
      for (std::size_t c = 0; c < cols; ++c) {
        buf[c] = allowed[r * cols + c];
        any = any || buf[c];
      }
      // A row with every entry excluded falls back to the unrestricted activation.
      if (any) mask = std::span<const bool>(buf.get(), cols);
    }
    const double tau = type == MaskType::kSparsemax ? kernels::sparsemax(zv.row(r), p.row(r), mask)
                                                    : kernels::entmax15(zv.row(r), p.row(r), mask);
    for (std::size_t c = 0; c < cols; ++c) {
      if (!mask.empty() && !mask[c]) continue;
      const double scaled = type == MaskType::kSparsemax ? zv(r, c) : zv(r, c) / 2.0;
      margin = std::min(margin, std::abs(scaled - tau));
    }
  }
  z.tape()->note_kink(margin);
  Tape* tape = z.tape();
  const std::size_t out_id = tape->size();
  return tape->record(std::move(p), {z}, [z, out_id, type, rows, cols](Tape& t, const Tensor& g) {
    const Tensor& pv = t.value(out_id);
    Tensor& gz = t.grad_buffer(z);
    for (std::size_t r = 0; r < rows; ++r) {
      if (type == MaskType::kSparsemax) {
        // Support-restricted Jacobian: (g - mean_support(g)) on the support.
        double s = 0.0;
        std::size_t k = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          if (pv(r, c) > 0.0) {
            s += g(r, c);
            ++k;
          }
        }
        const double avg = k ? s / static_cast<double>(k) : 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          if (pv(r, c) > 0.0) gz(r, c) += g(r, c) - avg;
        }
      } else {
        // J = diag(s) - s s^T / sum(s) with s = sqrt(p) on the support.
        double sg = 0.0, ssum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double s = std::sqrt(pv(r, c));
          sg += s * g(r, c);
          ssum += s;
        }
        const double q = ssum > 0.0 ? sg / ssum : 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double s = std::sqrt(pv(r, c));
          gz(r, c) += s * g(r, c) - q * s;
        }
      }
    }
  });
}

}  // namespace detail

/// Row-wise sparsemax. A rank-1 input is treated as a single row.
inline Var sparsemax(Var z, const std::vector<bool>& allowed = {}) {
  return detail::sparse_rows(z, MaskType::kSparsemax, allowed);
}

/// Row-wise 1.5-entmax.
inline Var entmax15(Var z, const std::vector<bool>& allowed = {}) {
  return detail::sparse_rows(z, MaskType::kEntmax15, allowed);
}

inline Var sparse_activation(Var z, MaskType type, const std::vector<bool>& allowed = {}) {
  return detail::sparse_rows(z, type, allowed);
}

/// Row-wise softmax, stabilised by subtracting the row maximum.
inline Var softmax(Var z) {
  const Tensor& zv = z.value();
  const std::size_t rows = zv.rows(), cols = zv.cols();
  Tensor p(zv.shape());
  for (std::size_t r = 0; r < rows; ++r) kernels::softmax(zv.row(r), p.row(r));
  Tape* tape = z.tape();
  const std::size_t out_id = tape->size();
  return tape->record(std::move(p), {z}, [z, out_id, rows, cols](Tape& t, const Tensor& g) {
    const Tensor& pv = t.value(out_id);
    Tensor& gz = t.grad_buffer(z);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g(r, c) * pv(r, c);
      for (std::size_t c = 0; c < cols; ++c) gz(r, c) += pv(r, c) * (g(r, c) - dot);
    }
  });
}

}  // namespace mtabnet
