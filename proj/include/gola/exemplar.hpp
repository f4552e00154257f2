// Apache License, Version 2.0, refer to LICENSE.txt

#ifndef GOLA_EXEMPLAR_HPP
#define GOLA_EXEMPLAR_HPP

#include "gola/density.hpp"
#include "gola/pipeline.hpp"

#include <cstdint>
#include <vector>

namespace gola {

// Two-story shear frame: floor masses, inter-story stiffnesses and viscous
// damping coefficients.
struct ShearFrame {
  double m1 = 1.0, m2 = 1.0;
  double k1 = 1.0, k2 = 0.5;
  double c1 = 0.2, c2 = 0.4;

  void validate() const;  // masses and stiffnesses > 0, damping >= 0
  ShearFrame with_damping(double d1, double d2) const;
};

/// State matrix [[0, I], [-M^{-1} K, -M^{-1} C]] for the state
/// (x1, x2, v1, v2).
Matrix assemble_state_matrix(const ShearFrame& frame);

/// u(t_i) = exp(A t_i) u0, one row per time. Uniformly spaced times reuse a
/// single exp(A dt).
Matrix simulate(const ShearFrame& frame, const Vector& u0, const std::vector<double>& times);

/// Kinetic plus potential energy of a state.
double mechanical_energy(const ShearFrame& frame, const Vector& state);

struct ObservationSet {
  std::vector<double> times;
  Vector values;
  double sigma = 0.02;
  Vector u0;
  int observed_index = 0;  // state coordinate seen by the sensor

  void validate() const;
};

/// n_obs uniform times on (0, horizon], y_i = u(t_i)[observed_index] + N(0, sigma^2).
ObservationSet generate_observations(const ShearFrame& truth, const Vector& u0, std::size_t n_obs,
                                     double horizon, double sigma, std::uint64_t seed,
                                     int observed_index = 0);

/// Target over (c1, c2): log phi = -(1 / (2 sigma^2)) sum (y_i - H u(t_i))^2
/// under a flat prior. The printed form of this likelihood carries the
/// opposite sign and no 1/2; that version is maximized by bad fits, so the
/// conventional Gaussian form is used. Nonpositive damping gives -inf.
/// Masses and stiffnesses come from `constants`; its damping is ignored.
/// No analytic gradient is attached, so derivatives are finite differences.
UnnormalizedTarget damping_log_likelihood(const ObservationSet& obs, const ShearFrame& constants,
                                          const Box& box);

// Default inverse problem. Chosen so the damping posterior is bimodal: with
// k1 = 2 k2 the first-floor response depends on the damping only through
// c1 + 2 c2 and c1 c2, which two distinct (c1, c2) pairs share.
struct ExemplarScenario {
  ShearFrame truth;
  Vector u0 = (Vector(4) << 0.0, 1.0, 0.0, 0.0).finished();
  double horizon = 30.0;
  std::size_t n_obs = 30;
  double sigma = 0.02;
  Box box{Vector::Constant(2, 0.01), Vector::Constant(2, 1.0)};
  std::uint64_t data_seed = 0;

  ObservationSet observations() const;
  UnnormalizedTarget target() const;
  /// GOLA settings for the finite-difference likelihood.
  GolaConfig gola_config() const;
};

/// Interior points of an n x n grid of -log phi over the box that are lower
/// than all eight neighbours.
std::vector<Vector> grid_local_minima(const UnnormalizedTarget& target, const Box& box, int n);

// Posterior over a 2-D box normalized by the trapezoid rule on an n x n grid.
// log_pdf evaluates the target exactly minus the grid log-normalizer;
// sampling picks a cell by its trapezoid mass, then a uniform point in it.
class GridPosterior {
 public:
  GridPosterior(const UnnormalizedTarget& target, const Box& box, int n = 512);

  double log_normalizer() const { return log_z_; }
  const Matrix& log_phi_grid() const { return grid_; }
  Density density() const;

 private:
  UnnormalizedTarget target_;
  Box box_;
  int n_;
  Matrix grid_;  // log phi at the nodes
  double log_z_ = 0.0;
  std::vector<double> cell_cdf_;
};

struct PushforwardSummary {
  std::vector<double> times;
  Matrix mean;  // rows: times, columns: floors
  Matrix lo95;
  Matrix hi95;
  std::size_t n_samples = 0;
  std::size_t n_rejected = 0;     // draws with nonpositive damping
  bool high_rejection = false;    // more than half of all draws rejected
};

/// Displacement statistics of both floors when posterior damping samples are
/// pushed through the frame. Throws ArgumentError for n_samples < 100.
PushforwardSummary pushforward(const Density& posterior, const ShearFrame& constants, const Vector& u0,
                               const std::vector<double>& times, std::size_t n_samples,
                               std::uint64_t seed, int workers = 1);
PushforwardSummary pushforward(const MixtureModel& posterior, const ShearFrame& constants, const Vector& u0,
                               const std::vector<double>& times, std::size_t n_samples,
                               std::uint64_t seed, int workers = 1);

}  // namespace gola

#endif  // GOLA_EXEMPLAR_HPP
