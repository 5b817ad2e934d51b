#pragma once

#include <cstdio>
#include <vector>

#include "crl/attention.hpp"
#include "crl/matrix.hpp"
#include "crl/parallel.hpp"
#include "crl/process.hpp"
#include "crl/rng.hpp"

namespace crl {

struct ZeroTarget : Error {
  using Error::Error;
};
struct DegenerateDirection : Error {
  using Error::Error;
};

/// Directional and squared-error comparison of an output against a target.
struct AlignmentReport {
  double cosine;
  double one_minus_cos;
  double mse;
  double target_norm;
};

inline AlignmentReport alignment(const Vector& y, const Vector& target) {
  double tn = norm(target);
  if (tn == 0.0) throw ZeroTarget("alignment: zero target");
  double c = cosine(y, target);
  return {c, 1.0 - c, sq_dist(y, target), tn};
}

/// The long-context readout matrix Theta_V Sigma Theta_K^T Theta_Q.
inline Matrix readout_matrix(const AttentionParams& params, const CovarianceModel& cov) {
  params.validate();
  if (params.input_dim() != cov.dim())
    throw DimensionMismatch("readout_matrix: covariance dimension");
  return params.theta_v * (cov.sigma().base() * (params.theta_k.transposed() * params.theta_q));
}

/// q^T Theta_K Sigma Theta_K^T q / d_k expressed in terms of p = Theta_K^T q.
/// Values <= 1 put the query inside the concentration cone.
inline double cone_ratio(const CovarianceModel& cov, const Vector& p, std::size_t d_k) {
  return dot(p, cov.apply_sigma(p)) / static_cast<double>(d_k);
}

/// Population tilted mean for a centered Gaussian marginal: Sigma p / sqrt(d_k).
inline Vector gaussian_tilted_mean(const CovarianceModel& cov, const Vector& p, std::size_t d_k) {
  if (p.size() != cov.dim()) throw DimensionMismatch("gaussian_tilted_mean: p dimension");
  Vector m = cov.apply_sigma(p);
  double inv = 1.0 / std::sqrt(static_cast<double>(d_k));
  for (double& x : m) x *= inv;
  return m;
}

/// Monte-Carlo tilted mean over n i.i.d. draws from the marginal law of the
/// process. Samples are sharded deterministically (shard i uses
/// split_seed(spec.seed, i)); the result does not depend on the worker count.
/// Serves as the oracle for radial laws without a closed form.
inline Vector mc_tilted_mean(const ProcessSpec& spec, const Vector& p, std::size_t d_k,
                             std::size_t n, std::size_t shards = 16, int workers = 1) {
  spec.validate();
  if (p.size() != spec.dim) throw DimensionMismatch("mc_tilted_mean: p dimension");
  if (n == 0) throw EmptyInput("mc_tilted_mean: n must be positive");
  if (cone_ratio(spec.covariance, p, d_k) > 1.0 + 1e-9)
    std::fprintf(stderr, "warning: mc_tilted_mean query outside the concentration cone\n");
  shards = std::max<std::size_t>(1, std::min(shards, n));
  Vector tilt = p;
  double inv = 1.0 / std::sqrt(static_cast<double>(d_k));
  for (double& x : tilt) x *= inv;

  std::vector<PrefixBarycenter> acc(shards, PrefixBarycenter(tilt));
  parallel_for(shards, workers, [&](std::size_t s) {
    std::size_t lo = n * s / shards;
    std::size_t hi = n * (s + 1) / shards;
    for_each_marginal_sample(spec, hi - lo, split_seed(spec.seed, s),
                             [&](const Vector& x) { acc[s].push(x); });
  });
  PrefixBarycenter total = acc[0];
  for (std::size_t s = 1; s < shards; ++s) total.merge(acc[s]);
  return total.value();
}

/// Least-squares scalar gamma with m ~ gamma * Sigma p. Positive whenever m
/// is a valid elliptical tilted mean in the direction Sigma p.
inline double extract_gamma(const Vector& tilted_mean, const CovarianceModel& cov,
                            const Vector& p) {
  Vector sp = cov.apply_sigma(p);
  double denom = dot(sp, sp);
  if (std::sqrt(denom) < 1e-12) throw DegenerateDirection("extract_gamma: Sigma p is degenerate");
  return dot(tilted_mean, sp) / denom;
}

/// Monte-Carlo estimate of E[|x|^2 exp(2 p^T x / sqrt(d_k))] / tr(Sigma).
/// A boundedness diagnostic across dimensions, not an assertion of any
/// particular constant.
inline double tilted_second_moment_check(const ProcessSpec& spec, const Vector& p,
                                         std::size_t d_k, std::size_t n) {
  spec.validate();
  double inv = 1.0 / std::sqrt(static_cast<double>(d_k));
  Vector tilt = p;
  for (double& x : tilt) x *= inv;
  double sum = 0.0;
  for_each_marginal_sample(spec, n, spec.seed, [&](const Vector& x) {
    sum += dot(x, x) * std::exp(2.0 * dot(tilt, x));
  });
  return sum / static_cast<double>(n) / spec.covariance.trace();
}

/// Population limit bundle at one query: the readout matrix, the
/// query-dependent scalar, and the tilted mean itself (Gaussian pathway).
struct ReadoutTarget {
  Matrix matrix;
  double gamma;
  Vector tilted_mean;
};

inline ReadoutTarget gaussian_readout_target(const AttentionParams& params,
                                             const CovarianceModel& cov, const Vector& q) {
  Vector p = tmatvec(params.theta_k, q);
  Vector m = gaussian_tilted_mean(cov, p, params.d_k);
  return {readout_matrix(params, cov), extract_gamma(m, cov, p), std::move(m)};
}

/// Random frozen head whose query/key scale is calibrated so that a typical
/// query lands at cone_fraction of the concentration-cone boundary:
/// E_x[q^T Theta_K Sigma Theta_K^T q] = cone_fraction * d_k.
inline AttentionParams random_head(std::size_t d, std::size_t d_k, std::size_t d_v,
                                   const CovarianceModel& cov, double cone_fraction,
                                   std::uint64_t seed) {
  if (cov.dim() != d) throw DimensionMismatch("random_head: covariance dimension");
  if (!(cone_fraction > 0.0)) throw Error("random_head: cone_fraction must be positive");
  Rng rng(seed);
  double base = 1.0 / std::sqrt(static_cast<double>(d));
  auto draw = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& x : m.data()) x = base * rng.normal();
    return m;
  };
  Matrix tq = draw(d_k, d);
  Matrix tk = draw(d_k, d);
  Matrix tv = draw(d_v, d);
  // E_x[q^T M q] = tr(M Theta_Q Sigma Theta_Q^T) with M = Theta_K Sigma Theta_K^T.
  const Matrix& sigma = cov.sigma().base();
  Matrix m_k = tk * (sigma * tk.transposed());
  Matrix m_q = tq * (sigma * tq.transposed());
  double c0 = trace(m_k * m_q);
  if (c0 <= 0.0) throw Error("random_head: degenerate calibration");
  double s = std::pow(cone_fraction * static_cast<double>(d_k) / c0, 0.25);
  return make_attention_params(scaled(tq, s), scaled(tk, s), std::move(tv));
}

}  // namespace crl
