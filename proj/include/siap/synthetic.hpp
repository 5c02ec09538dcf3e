#pragma once

#include <cstdint>
#include <vector>

#include "siap/spline_basis.hpp"
#include "siap/types.hpp"

namespace siap {

/// Model-matched generator:
///   X = level 1^T + Theta^T Phi^T + A B^T + E,
/// with AR latent columns of B and spiked Gaussian noise columns of E.
struct SyntheticSpec {
  Index m = 120;
  Index n = 300;
  Index rank = 3;
  BasisSpec basis = BasisSpec::ssi_default();
  double level_min = 8.0;  // row levels uniform on [level_min, level_max]
  double level_max = 12.0;
  double trend_amplitude = 1.0;  // sd of the spline coefficients
  double factor_scale = 0.5;     // sd of the entries of A
  std::vector<double> ar = {0.8};  // shared diagonal AR coefficients of the latents
  double innovation_sd = 1.0;
  double noise_sd = 0.05;          // sqrt of the mean diagonal noise variance
  Index noise_rank = 20;
  double noise_loading_sd = 0.03;
  std::uint64_t seed = 1;
};

struct SyntheticData {
  Matrix x;       // m x n, fully observed
  Vector level;   // m
  Matrix theta;   // kappa x m
  Matrix a;       // m x rank
  Matrix b;       // n x rank
  Matrix noise;   // m x n
  Vector noise_diag;
  Matrix noise_loadings;
  PeriodicBasis basis;

  /// Noise-free part.
  Matrix signal() const { return x - noise; }
};

/// Every root of 1 - sum_l a_l z^l outside the unit circle.
bool ar_is_stationary(const std::vector<double>& coeffs);

SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace siap
