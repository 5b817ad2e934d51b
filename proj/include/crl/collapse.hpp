#pragma once

#include <cstdio>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "crl/attention.hpp"
#include "crl/matrix.hpp"
#include "crl/parallel.hpp"
#include "crl/process.hpp"
#include "crl/theory.hpp"

namespace crl {

struct EmptyReference : Error {
  using Error::Error;
};

/// Residual block h' = Phi(h, y): either h + mix y, or h + gain tanh(mix y)
/// entrywise. lipschitz_bound records a certified joint Lipschitz constant.
struct ResidualBlockSpec {
  enum class Kind { Linear, Tanh };
  Kind kind = Kind::Linear;
  Matrix mix;
  double gain = 1.0;
  double lipschitz_bound = 1.0;

  static ResidualBlockSpec linear(Matrix mix) {
    ResidualBlockSpec b;
    b.kind = Kind::Linear;
    b.lipschitz_bound = std::max(1.0, op_norm(mix));
    b.mix = std::move(mix);
    return b;
  }

  static ResidualBlockSpec tanh_block(Matrix mix, double gain) {
    if (gain <= 0.0) throw Error("tanh block: gain must be positive");
    ResidualBlockSpec b;
    b.kind = Kind::Tanh;
    b.gain = gain;
    b.lipschitz_bound = std::max(1.0, gain * op_norm(mix));
    b.mix = std::move(mix);
    return b;
  }

  Vector apply(const Vector& h, const Vector& y) const {
    Vector my = mix * y;
    Vector out = h;
    if (kind == Kind::Linear) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += my[i];
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += gain * std::tanh(my[i]);
    }
    return out;
  }
};

/// Depth-L stack of attention heads with residual blocks over a common token
/// dimension (d_v = d throughout).
struct LayerStack {
  ProcessSpec input_spec;
  std::vector<std::pair<AttentionParams, ResidualBlockSpec>> layers;

  std::size_t depth() const { return layers.size(); }

  void validate() const {
    input_spec.validate();
    for (const auto& [params, block] : layers) {
      params.validate();
      if (params.input_dim() != input_spec.dim || params.output_dim() != input_spec.dim)
        throw DimensionMismatch("layer stack: layer dimensions must equal the token dimension");
      if (block.mix.rows() != input_spec.dim || block.mix.cols() != input_spec.dim)
        throw DimensionMismatch("layer stack: residual mix must be d x d");
    }
  }
};

namespace detail {

/// All attention outputs of one causal layer over the given context, with
/// per-position key caching. Positions are independent given the inputs, so
/// they may be computed by several workers.
inline std::vector<Vector> causal_layer_outputs(const AttentionParams& params,
                                                const std::vector<Vector>& states, int workers) {
  std::size_t n = states.size();
  std::vector<Vector> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = params.theta_k * states[i];
  double inv = 1.0 / std::sqrt(static_cast<double>(params.d_k));
  std::vector<Vector> out(n);
  parallel_for(n, workers, [&](std::size_t j) {
    Vector q = params.theta_q * states[j];
    Vector scores(j + 1);
    double max_s = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i <= j; ++i) {
      scores[i] = dot(q, keys[i]) * inv;
      if (scores[i] > max_s) max_s = scores[i];
    }
    std::size_t d = states.front().size();
    Vector num(d, 0.0);
    double den = 0.0;
    for (std::size_t i = 0; i <= j; ++i) {
      double w = std::exp(scores[i] - max_s);
      den += w;
      const Vector& x = states[i];
      for (std::size_t m = 0; m < d; ++m) num[m] += w * x[m];
    }
    for (double& v : num) v /= den;
    out[j] = params.theta_v * num;
  });
  return out;
}

/// Hidden states for levels 0..upto (level 0 is the raw input).
inline std::vector<std::vector<Vector>> run_layers(const LayerStack& stack,
                                                   std::vector<Vector> tokens, std::size_t upto,
                                                   int workers) {
  std::vector<std::vector<Vector>> levels;
  levels.reserve(upto + 1);
  levels.push_back(std::move(tokens));
  for (std::size_t l = 1; l <= upto; ++l) {
    const auto& [params, block] = stack.layers[l - 1];
    std::vector<Vector> ys = causal_layer_outputs(params, levels.back(), workers);
    std::vector<Vector> next(ys.size());
    for (std::size_t j = 0; j < ys.size(); ++j) next[j] = block.apply(levels.back()[j], ys[j]);
    levels.push_back(std::move(next));
  }
  return levels;
}

}  // namespace detail

/// Full forward pass: h^(0) = tokens, then per layer causal attention
/// followed by the residual block at every position. Returns all L+1 levels.
inline std::vector<std::vector<Vector>> stack_forward(const LayerStack& stack,
                                                      std::span<const Vector> tokens,
                                                      int workers = 1) {
  stack.validate();
  if (tokens.empty()) throw EmptyContext("stack_forward: empty context");
  if (tokens.front().size() != stack.input_spec.dim)
    throw DimensionMismatch("stack_forward: token dimension");
  return detail::run_layers(stack, std::vector<Vector>(tokens.begin(), tokens.end()),
                            stack.depth(), workers);
}

/// Per-layer tilted-mean evaluator: either the Gaussian closed form at a
/// known covariance, or a plug-in barycenter over a frozen reference sample.
struct TiltedRef {
  bool analytic = false;
  CovarianceModel cov;          // analytic pathway
  std::vector<Vector> sample;   // plug-in pathway

  static TiltedRef analytic_gaussian(CovarianceModel c) {
    TiltedRef r;
    r.analytic = true;
    r.cov = std::move(c);
    return r;
  }

  static TiltedRef plug_in(std::vector<Vector> sample, CovarianceModel c) {
    TiltedRef r;
    r.analytic = false;
    r.sample = std::move(sample);
    r.cov = std::move(c);
    return r;
  }

  /// Tilted mean at query q for the layer this reference describes.
  Vector tilted_mean(const Vector& q, const Matrix& theta_k, std::size_t d_k) const {
    if (analytic) return gaussian_tilted_mean(cov, tmatvec(theta_k, q), d_k);
    if (sample.empty()) throw EmptyReference("tilted reference: empty sample");
    return barycenter(std::span<const Vector>(sample.data(), sample.size()), q, theta_k, d_k);
  }
};

/// The deterministic position-wise surrogate of the stack: F^(0) = id and
/// F^(l)(x) = Phi^(l)(F^(l-1)(x), Theta_V^(l) m_{l-1}(Theta_Q^(l) F^(l-1)(x))),
/// where m_{l-1} is the layer-(l-1) tilted mean (closed form or plug-in).
/// Immutable once built and shareable across workers.
struct ContextFreeMap {
  LayerStack stack;
  std::vector<SpdMatrix> layer_covariances;  // estimated Sigma_0 .. Sigma_{L-1}
  std::vector<TiltedRef> refs;               // one per layer 0 .. L-1
  std::size_t reference_length = 0;
  std::vector<double> layer_kurtosis;        // coordinate-averaged 4th/2nd^2 per layer
  std::vector<bool> kurtosis_flags;          // grossly non-elliptical layers

  Vector eval(const Vector& x) const {
    Vector h = x;
    for (std::size_t l = 0; l < stack.depth(); ++l) {
      const auto& [params, block] = stack.layers[l];
      Vector q = params.theta_q * h;
      Vector m = refs[l].tilted_mean(q, params.theta_k, params.d_k);
      Vector r = params.theta_v * m;
      h = block.apply(h, r);
    }
    return h;
  }
};

inline Vector context_free_eval(const ContextFreeMap& map, const Vector& x) {
  return map.eval(x);
}

namespace detail {

/// Second moment about zero over a window of states; regularized if the
/// factorization fails.
inline SpdMatrix window_covariance(std::span<const Vector> window, bool* regularized) {
  std::size_t d = window.front().size();
  Matrix cov(d, d);
  for (const Vector& h : window)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j) cov(i, j) += h[i] * h[j];
  double inv = 1.0 / static_cast<double>(window.size());
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      cov(i, j) *= inv;
      cov(j, i) = cov(i, j);
    }
  try {
    return cholesky(cov);
  } catch (const NotPositiveDefinite&) {
    if (regularized) *regularized = true;
    std::fprintf(stderr, "warning: layer covariance not PD, regularizing with 1e-8 I\n");
    for (std::size_t i = 0; i < d; ++i) cov(i, i) += 1e-8;
    return cholesky(cov);
  }
}

inline double window_kurtosis(std::span<const Vector> window) {
  std::size_t d = window.front().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double m2 = 0.0, m4 = 0.0;
    for (const Vector& h : window) {
      double v = h[i] * h[i];
      m2 += v;
      m4 += v * v;
    }
    m2 /= static_cast<double>(window.size());
    m4 /= static_cast<double>(window.size());
    acc += m4 / (m2 * m2);
  }
  return acc / static_cast<double>(d);
}

}  // namespace detail

/// Runs one reference stream of length burn_in + m through the stack,
/// discards the burn-in, and freezes (per layer 0..L-1) the late-window
/// second moment and the late-window hidden-state sample as the plug-in
/// population for tilted-mean evaluation.
inline ContextFreeMap estimate_layer_statistics(const LayerStack& stack, std::size_t burn_in,
                                                std::size_t m, std::uint64_t seed,
                                                int workers = 1) {
  stack.validate();
  if (m == 0) throw Error("estimate_layer_statistics: m must be positive");
  std::size_t n = burn_in + m;
  TokenStream stream = sample_stream(stack.input_spec.with_seed(seed), n);
  std::size_t upto = stack.depth() == 0 ? 0 : stack.depth() - 1;
  std::vector<std::vector<Vector>> levels =
      detail::run_layers(stack, std::move(stream.tokens), upto, workers);

  ContextFreeMap map;
  map.stack = stack;
  map.reference_length = m;
  for (std::size_t l = 0; l < stack.depth(); ++l) {
    std::span<const Vector> window(levels[l].data() + burn_in, m);
    bool regularized = false;
    SpdMatrix cov = detail::window_covariance(window, &regularized);
    double kurt = detail::window_kurtosis(window);
    map.layer_kurtosis.push_back(kurt);
    map.kurtosis_flags.push_back(kurt < 2.0 || kurt > 4.5);
    CovarianceModel cm = CovarianceModel::from_matrix(cov.base());
    map.refs.push_back(
        TiltedRef::plug_in(std::vector<Vector>(window.begin(), window.end()), std::move(cm)));
    map.layer_covariances.push_back(std::move(cov));
  }
  return map;
}

/// Context-free map for a depth-1 stack over Gaussian input with known
/// covariance: the layer-0 tilted mean is closed-form, no reference stream.
inline ContextFreeMap analytic_gaussian_map(const LayerStack& stack,
                                            const CovarianceModel& input_cov) {
  stack.validate();
  if (stack.depth() > 1)
    throw Error("analytic_gaussian_map: closed-form statistics exist only for depth <= 1");
  if (stack.input_spec.radial != RadialLaw::GaussianZ)
    throw Error("analytic_gaussian_map: Gaussian radial law required");
  ContextFreeMap map;
  map.stack = stack;
  for (std::size_t l = 0; l < stack.depth(); ++l) {
    map.layer_covariances.push_back(input_cov.sigma());
    map.refs.push_back(TiltedRef::analytic_gaussian(input_cov));
    map.layer_kurtosis.push_back(3.0);
    map.kurtosis_flags.push_back(false);
  }
  return map;
}

/// Plug-in map built from an externally provided equilibrium sample (used
/// when the stack's input is a self-generated chain rather than a stream
/// with known law). Depth-1 stacks only need the layer-0 sample.
inline ContextFreeMap plugin_map_from_sample(const LayerStack& stack, std::vector<Vector> sample,
                                             int workers = 1) {
  stack.validate();
  if (sample.empty()) throw EmptyReference("plugin_map_from_sample: empty sample");
  ContextFreeMap map;
  map.stack = stack;
  map.reference_length = sample.size();
  std::size_t upto = stack.depth() == 0 ? 0 : stack.depth() - 1;
  std::vector<std::vector<Vector>> levels =
      detail::run_layers(stack, std::move(sample), upto, workers);
  for (std::size_t l = 0; l < stack.depth(); ++l) {
    std::span<const Vector> window(levels[l].data(), levels[l].size());
    SpdMatrix cov = detail::window_covariance(window, nullptr);
    double kurt = detail::window_kurtosis(window);
    map.layer_kurtosis.push_back(kurt);
    map.kurtosis_flags.push_back(kurt < 2.0 || kurt > 4.5);
    CovarianceModel cm = CovarianceModel::from_matrix(cov.base());
    map.refs.push_back(
        TiltedRef::plug_in(std::vector<Vector>(window.begin(), window.end()), std::move(cm)));
    map.layer_covariances.push_back(std::move(cov));
  }
  return map;
}

struct CollapseRow {
  std::size_t t;
  double mean_sq_error;
  double stderr_;
  std::size_t n_seeds;
  std::size_t layer_depth;
};

/// Measures E |h_t^(L) - F^(L)(x_t)|^2 at the checkpoint positions over
/// n_seeds fresh streams (seed r uses split_seed(input seed, r)). The top
/// layer is only evaluated at the checkpoints; layers below it must be
/// materialized at every position.
inline std::vector<CollapseRow> collapse_experiment(const LayerStack& stack,
                                                    const ContextFreeMap& map,
                                                    std::span<const std::size_t> positions,
                                                    std::size_t n_seeds, int workers = 1) {
  stack.validate();
  if (positions.empty()) throw EmptyCheckpoints("collapse_experiment: no positions");
  for (std::size_t i = 1; i < positions.size(); ++i)
    if (positions[i] <= positions[i - 1])
      throw Error("collapse_experiment: positions must be ascending");
  std::size_t n = positions.back();
  std::size_t depth = stack.depth();

  std::vector<std::vector<double>> errors(n_seeds,
                                          std::vector<double>(positions.size(), 0.0));
  parallel_for(n_seeds, workers, [&](std::size_t rep) {
    TokenStream stream =
        sample_stream(stack.input_spec.with_seed(split_seed(stack.input_spec.seed, rep)), n);
    if (depth == 0) return;  // F^(0) = id, error identically zero
    std::vector<std::vector<Vector>> levels =
        detail::run_layers(stack, std::move(stream.tokens), depth - 1, 1);
    const auto& [params, block] = stack.layers[depth - 1];
    const std::vector<Vector>& below = levels[depth - 1];
    for (std::size_t c = 0; c < positions.size(); ++c) {
      std::size_t t = positions[c];
      Vector q = params.theta_q * below[t - 1];
      Vector xbar =
          barycenter(std::span<const Vector>(below.data(), t), q, params.theta_k, params.d_k);
      Vector y = params.theta_v * xbar;
      Vector h_top = block.apply(below[t - 1], y);
      errors[rep][c] = sq_dist(h_top, map.eval(levels[0][t - 1]));
    }
  });

  std::vector<CollapseRow> rows;
  rows.reserve(positions.size());
  for (std::size_t c = 0; c < positions.size(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n_seeds; ++r) mean += errors[r][c];
    mean /= static_cast<double>(n_seeds);
    double var = 0.0;
    for (std::size_t r = 0; r < n_seeds; ++r) {
      double d = errors[r][c] - mean;
      var += d * d;
    }
    double se = n_seeds > 1 ? std::sqrt(var / static_cast<double>(n_seeds - 1) /
                                        static_cast<double>(n_seeds))
                            : 0.0;
    rows.push_back({positions[c], mean, se, n_seeds, depth});
  }
  return rows;
}

}  // namespace crl
