#include "siap/synthetic.hpp"

#include <Eigen/Eigenvalues>

#include "siap/error.hpp"
#include "siap/rng.hpp"

namespace siap {

bool ar_is_stationary(const std::vector<double>& coeffs) {
  const auto p = static_cast<Index>(coeffs.size());
  if (p == 0) return true;
  // Companion matrix eigenvalues are the reciprocals of the lag-polynomial roots.
  Matrix companion = Matrix::Zero(p, p);
  for (Index l = 0; l < p; ++l) companion(0, l) = coeffs[static_cast<std::size_t>(l)];
  for (Index l = 1; l < p; ++l) companion(l, l - 1) = 1.0;
  Eigen::EigenSolver<Matrix> eig(companion, false);
  return eig.eigenvalues().cwiseAbs().maxCoeff() < 1.0 - 1e-12;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.m < 1 || spec.n < 1) throw ParameterError("generate_synthetic: m and n must be >= 1");
  if (spec.rank < 0 || spec.rank > std::min(spec.m, spec.n)) {
    throw ParameterError("generate_synthetic: rank must lie in [0, min(m, n)]");
  }
  if (!ar_is_stationary(spec.ar)) throw ParameterError("generate_synthetic: AR coefficients are not stationary");
  if (spec.level_max < spec.level_min) throw ParameterError("generate_synthetic: level_max < level_min");
  if (spec.noise_rank < 0) throw ParameterError("generate_synthetic: noise_rank must be >= 0");

  const Index m = spec.m;
  const Index n = spec.n;
  SyntheticData d;
  const std::vector<double> grid = index_grid(n);
  d.basis = spec.basis.build(grid);
  const Index kappa = d.basis.size();

  // Separate streams per component keep each one stable when another's size changes.
  Rng level_rng(derive_seed(spec.seed, 0));
  Rng trend_rng(derive_seed(spec.seed, 1));
  Rng factor_rng(derive_seed(spec.seed, 2));
  Rng latent_rng(derive_seed(spec.seed, 3));
  Rng noise_rng(derive_seed(spec.seed, 4));

  d.level.resize(m);
  for (Index i = 0; i < m; ++i) d.level(i) = spec.level_min + (spec.level_max - spec.level_min) * level_rng.uniform();

  d.theta.resize(kappa, m);
  for (Index i = 0; i < m; ++i) {
    for (Index k = 0; k < kappa; ++k) d.theta(k, i) = spec.trend_amplitude * trend_rng.normal();
  }

  d.a.resize(m, spec.rank);
  for (Index c = 0; c < spec.rank; ++c) {
    for (Index i = 0; i < m; ++i) d.a(i, c) = spec.factor_scale * factor_rng.normal();
  }

  // AR latents with a burn-in so the series starts near stationarity.
  const auto p = static_cast<Index>(spec.ar.size());
  const Index burn = 200;
  d.b.resize(n, spec.rank);
  for (Index c = 0; c < spec.rank; ++c) {
    std::vector<double> series(static_cast<std::size_t>(n + burn), 0.0);
    for (Index t = 0; t < n + burn; ++t) {
      double v = spec.innovation_sd * latent_rng.normal();
      for (Index l = 1; l <= p && t - l >= 0; ++l) {
        v += spec.ar[static_cast<std::size_t>(l - 1)] * series[static_cast<std::size_t>(t - l)];
      }
      series[static_cast<std::size_t>(t)] = v;
    }
    for (Index t = 0; t < n; ++t) d.b(t, c) = series[static_cast<std::size_t>(t + burn)];
  }

  d.noise_diag.resize(m);
  for (Index i = 0; i < m; ++i) {
    d.noise_diag(i) = spec.noise_sd * spec.noise_sd * (0.5 + noise_rng.uniform());
  }
  d.noise_loadings.resize(m, spec.noise_rank);
  for (Index c = 0; c < spec.noise_rank; ++c) {
    for (Index i = 0; i < m; ++i) d.noise_loadings(i, c) = spec.noise_loading_sd * noise_rng.normal();
  }
  d.noise.resize(m, n);
  Vector z(spec.noise_rank);
  for (Index j = 0; j < n; ++j) {
    for (Index c = 0; c < spec.noise_rank; ++c) z(c) = noise_rng.normal();
    for (Index i = 0; i < m; ++i) d.noise(i, j) = std::sqrt(d.noise_diag(i)) * noise_rng.normal();
    d.noise.col(j) += d.noise_loadings * z;
  }

  d.x = d.theta.transpose() * d.basis.phi.transpose() + d.a * d.b.transpose() + d.noise;
  d.x.colwise() += d.level;
  return d;
}

}  // namespace siap
