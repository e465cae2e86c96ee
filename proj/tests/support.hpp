#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <span>
#include <vector>

#include "mtabnet/autodiff.hpp"
#include "mtabnet/random.hpp"

namespace support {

inline mtabnet::Tensor random_tensor(mtabnet::Shape shape, mtabnet::Rng& rng, double scale = 1.0) {
  mtabnet::Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal() * scale;
  return t;
}

/// Kink margin below which a draw is redrawn: a central difference with
/// h = 1e-5 can straddle a kink up to 2h away, so 10 h leaves headroom.
inline constexpr double kKinkExclusion = 1e-4;

struct GradSweep {
  double worst = 0.0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

/// Grad checks at `count` accepted random draws from `make`.
template <class Make>
GradSweep grad_sweep(Make make, const mtabnet::ScalarFn& fn, std::size_t count,
                     std::span<mtabnet::Parameter* const> params = {}) {
  GradSweep s;
  while (s.accepted < count && s.rejected < 20 * count) {
    const std::vector<mtabnet::Tensor> inputs = make();
    const mtabnet::GradCheckResult r = mtabnet::grad_check(fn, inputs, 1e-5, params);
    if (r.kink_margin < kKinkExclusion) {
      ++s.rejected;
      continue;
    }
    s.worst = std::max(s.worst, r.max_rel_error);
    ++s.accepted;
  }
  return s;
}

}  // namespace support
