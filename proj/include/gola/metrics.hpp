// Apache License, Version 2.0, refer to LICENSE.txt

#ifndef GOLA_METRICS_HPP
#define GOLA_METRICS_HPP

#include "gola/density.hpp"

#include <cstddef>
#include <cstdint>

namespace gola {

struct DivergenceEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
  // Samples whose log ratio was non-finite and got clamped at +-700.
  std::size_t support_violations = 0;
};

inline constexpr double kLogRatioClamp = 700.0;

/// Monte Carlo KL(p || q) from n samples of p. Both densities normalized.
DivergenceEstimate kl_mc(const Density& p, const Density& q, std::size_t n, std::uint64_t seed);

/// Jensen-Shannon divergence divided by log 2, so it lies in [0, 1]. Each
/// half is estimated from n samples of its own first argument; std_error
/// combines the two independent halves.
DivergenceEstimate jsd_normalized(const Density& p, const Density& q, std::size_t n,
                                  std::uint64_t seed);

/// Dice overlap 2<p1,p2> / (<p1,p1> + <p2,p2>) in closed form.
double dice_overlap(const GaussianComponent& p1, const GaussianComponent& p2);

}  // namespace gola

#endif  // GOLA_METRICS_HPP
