#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crl/collapse.hpp"
#include "crl/matrix.hpp"
#include "crl/process.hpp"
#include "crl/rng.hpp"

namespace crl {

struct SharedNoiseRequired : Error {
  using Error::Error;
};
struct UnknownTestFunction : Error {
  using Error::Error;
};
struct EmptyCodebook : Error {
  using Error::Error;
};

/// Decoder Psi(h, x, xi) = gain * tanh(A h + C x) + tau * xi, applied
/// entrywise. Globally Lipschitz in h with constant gain * |A|_op, and
/// bounded up to the noise, so long autoregressive runs stay in range.
struct DecoderSpec {
  Matrix h_mix;  // A
  Matrix x_mix;  // C
  double noise_scale = 0.0;  // tau
  double squash_gain = 1.0;  // g

  void validate() const {
    if (h_mix.rows() != h_mix.cols() || x_mix.rows() != x_mix.cols() ||
        h_mix.rows() != x_mix.rows())
      throw DimensionMismatch("decoder: A and C must be square with equal dimension");
    if (noise_scale < 0.0) throw Error("decoder: noise scale must be nonnegative");
    if (squash_gain <= 0.0) throw Error("decoder: gain must be positive");
  }

  std::size_t dim() const { return h_mix.rows(); }

  /// Certified Lipschitz constant in the hidden-state argument.
  double lipschitz() const { return squash_gain * op_norm(h_mix); }

  /// Noise-free part g * tanh(A h + C x).
  Vector det(const Vector& h, const Vector& x) const {
    Vector a = h_mix * h;
    Vector c = x_mix * x;
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = squash_gain * std::tanh(a[i] + c[i]);
    return out;
  }

  Vector apply(const Vector& h, const Vector& x, const Vector& xi) const {
    Vector out = det(h, x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += noise_scale * xi[i];
    return out;
  }
};

/// Incrementally extends the hidden-state arrays of a causal stack as tokens
/// arrive. Appending token t costs O(t L (d_k + d)), so a generation of n
/// steps costs O(n^2 L) in total; earlier positions never change because
/// attention is causal.
class StackRunner {
 public:
  explicit StackRunner(const LayerStack& stack) : stack_(&stack) {
    stack.validate();
    states_.resize(stack.depth() + 1);
    keys_.resize(stack.depth());
  }

  /// Feeds the next token and returns the terminal hidden state h_t^(L).
  const Vector& append(const Vector& x) {
    states_[0].push_back(x);
    double inv = 0.0;
    for (std::size_t l = 1; l <= stack_->depth(); ++l) {
      const auto& [params, block] = stack_->layers[l - 1];
      const std::vector<Vector>& below = states_[l - 1];
      const Vector& h_new = below.back();
      keys_[l - 1].push_back(params.theta_k * h_new);
      Vector q = params.theta_q * h_new;
      inv = 1.0 / std::sqrt(static_cast<double>(params.d_k));
      std::size_t t = below.size();
      Vector scores(t);
      double max_s = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < t; ++i) {
        scores[i] = dot(q, keys_[l - 1][i]) * inv;
        if (scores[i] > max_s) max_s = scores[i];
      }
      std::size_t d = h_new.size();
      Vector num(d, 0.0);
      double den = 0.0;
      for (std::size_t i = 0; i < t; ++i) {
        double w = std::exp(scores[i] - max_s);
        den += w;
        for (std::size_t m = 0; m < d; ++m) num[m] += w * below[i][m];
      }
      for (double& v : num) v /= den;
      Vector y = params.theta_v * num;
      states_[l].push_back(block.apply(h_new, y));
    }
    return states_[stack_->depth()].back();
  }

  const std::vector<Vector>& level(std::size_t l) const { return states_[l]; }

 private:
  const LayerStack* stack_;
  std::vector<std::vector<Vector>> states_;
  std::vector<std::vector<Vector>> keys_;
};

namespace detail {

inline Vector draw_noise(Rng& rng, std::size_t d) {
  Vector xi(d);
  rng.normal_fill(xi);
  return xi;
}

}  // namespace detail

/// Autoregressive generation driven by the true stack:
/// x_{t+1} = Psi(h_t^(L), x_t, xi_{t+1}). Returns (x_0, x_1, ..., x_steps).
inline std::vector<Vector> generate_full(const LayerStack& stack, const DecoderSpec& dec,
                                         const Vector& x0, std::size_t steps,
                                         std::uint64_t seed) {
  dec.validate();
  if (steps == 0) throw Error("generate_full: steps must be >= 1");
  if (x0.size() != stack.input_spec.dim) throw DimensionMismatch("generate_full: x0 dimension");
  StackRunner runner(stack);
  Rng rng(seed);
  std::vector<Vector> traj;
  traj.reserve(steps + 1);
  traj.push_back(x0);
  for (std::size_t t = 0; t < steps; ++t) {
    const Vector& h = runner.append(traj.back());
    Vector xi = detail::draw_noise(rng, x0.size());
    traj.push_back(dec.apply(h, traj.back(), xi));
  }
  return traj;
}

/// Same dynamics with the hidden state replaced by the context-free map:
/// x_{t+1} = Psi(F(x_t), x_t, xi_{t+1}). Cost linear in steps. With the same
/// seed the noise realizations match generate_full step for step.
inline std::vector<Vector> generate_surrogate(const ContextFreeMap& map, const DecoderSpec& dec,
                                              const Vector& x0, std::size_t steps,
                                              std::uint64_t seed) {
  dec.validate();
  if (steps == 0) throw Error("generate_surrogate: steps must be >= 1");
  Rng rng(seed);
  std::vector<Vector> traj;
  traj.reserve(steps + 1);
  traj.push_back(x0);
  for (std::size_t t = 0; t < steps; ++t) {
    Vector f = map.eval(traj.back());
    Vector xi = detail::draw_noise(rng, x0.size());
    traj.push_back(dec.apply(f, traj.back(), xi));
  }
  return traj;
}

/// Full and surrogate chains driven by one shared noise realization, with the
/// noise retained so one-step closure gaps can be evaluated afterwards.
struct TrajectoryPair {
  std::vector<Vector> full;
  std::vector<Vector> surrogate;
  std::vector<Vector> noise;  // xi_1 .. xi_steps
  const ContextFreeMap* map = nullptr;
  DecoderSpec dec;
  bool shared_noise = false;
};

inline TrajectoryPair generate_pair(const LayerStack& stack, const ContextFreeMap& map,
                                    const DecoderSpec& dec, const Vector& x0, std::size_t steps,
                                    std::uint64_t seed) {
  dec.validate();
  if (steps == 0) throw Error("generate_pair: steps must be >= 1");
  Rng rng(seed);
  TrajectoryPair pair;
  pair.map = &map;
  pair.dec = dec;
  pair.shared_noise = true;
  pair.noise.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) pair.noise.push_back(detail::draw_noise(rng, x0.size()));

  StackRunner runner(stack);
  pair.full.reserve(steps + 1);
  pair.full.push_back(x0);
  for (std::size_t t = 0; t < steps; ++t) {
    const Vector& h = runner.append(pair.full.back());
    pair.full.push_back(dec.apply(h, pair.full.back(), pair.noise[t]));
  }
  pair.surrogate.reserve(steps + 1);
  pair.surrogate.push_back(x0);
  for (std::size_t t = 0; t < steps; ++t) {
    Vector f = map.eval(pair.surrogate.back());
    pair.surrogate.push_back(dec.apply(f, pair.surrogate.back(), pair.noise[t]));
  }
  return pair;
}

/// One-step closure gaps along the full trajectory:
/// gap_t = |x_{t+1} - Psi(F(x_t), x_t, xi_{t+1})| evaluated on the realized
/// history, so the comparison isolates hidden-state collapse and does not
/// compound trajectory divergence. Returns sliding-window means
/// (t, mean of gaps over the last `window` steps) for every t >= window.
inline std::vector<std::pair<std::size_t, double>> closure_divergence(const TrajectoryPair& pair,
                                                                      std::size_t window) {
  if (!pair.shared_noise || pair.map == nullptr)
    throw SharedNoiseRequired("closure_divergence: pair must carry shared noise");
  std::size_t steps = pair.noise.size();
  if (window == 0 || window > steps)
    throw Error("closure_divergence: window must be in [1, steps]");
  std::vector<double> gaps(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Vector f = pair.map->eval(pair.full[t]);
    Vector pred = pair.dec.apply(f, pair.full[t], pair.noise[t]);
    gaps[t] = std::sqrt(sq_dist(pair.full[t + 1], pred));
  }
  std::vector<std::pair<std::size_t, double>> out;
  out.reserve(steps - window + 1);
  double acc = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    acc += gaps[t];
    if (t + 1 >= window) {
      if (t + 1 > window) acc -= gaps[t + 1 - window - 1];
      out.emplace_back(t + 1, acc / static_cast<double>(window));
    }
  }
  return out;
}

/// Bounded Lipschitz test functions accepted by kernel_apply.
inline const std::map<std::string, std::function<double(const Vector&)>>& test_functions() {
  static const std::map<std::string, std::function<double(const Vector&)>> registry = {
      {"one", [](const Vector&) { return 1.0; }},
      {"tanh0", [](const Vector& v) { return std::tanh(v[0]); }},
      {"radial_bump", [](const Vector& v) { return std::exp(-dot(v, v)); }},
      {"cosine_feature",
       [](const Vector& v) {
         double s = 0.0;
         for (double x : v) s += x;
         return std::cos(s / std::sqrt(static_cast<double>(v.size())));
       }},
  };
  return registry;
}

/// Monte-Carlo application of the one-step kernel
/// K phi(x) = E_xi[ phi(Psi(F(x), x, xi)) ]. The tau = 0 path is evaluated
/// without sampling, so the noise-free degeneracy K phi(x) = phi(g(x)) is
/// exact.
inline double kernel_apply(const ContextFreeMap& map, const DecoderSpec& dec, const Vector& x,
                           const std::string& phi_name, std::size_t n_noise,
                           std::uint64_t seed = 0) {
  auto it = test_functions().find(phi_name);
  if (it == test_functions().end())
    throw UnknownTestFunction("kernel_apply: unknown test function '" + phi_name + "'");
  const auto& phi = it->second;
  Vector f = map.eval(x);
  if (dec.noise_scale == 0.0) return phi(dec.det(f, x));
  if (n_noise == 0) throw Error("kernel_apply: n_noise must be positive");
  Rng rng(seed);
  double acc = 0.0;
  for (std::size_t k = 0; k < n_noise; ++k) {
    Vector xi = detail::draw_noise(rng, x.size());
    acc += phi(dec.apply(f, x, xi));
  }
  return acc / static_cast<double>(n_noise);
}

/// A fixed point or short cycle of the noise-free skeleton
/// g(x) = Psi_det(F(x), x), with a finite-difference contraction estimate and
/// the fraction of random starts that converged to it.
struct AttractorReport {
  enum class Kind { FixedPoint, Cycle, NoneFound };
  Kind kind = Kind::NoneFound;
  std::size_t period = 0;
  std::vector<Vector> orbit;
  double local_contraction = 0.0;
  double basin_hits = 0.0;
};

namespace detail {

/// Spectral radius of the finite-difference Jacobian of `g` at x, estimated
/// from the asymptotic growth factor of repeated Jacobian applications.
template <class G>
double fd_spectral_radius(G&& g, const Vector& x) {
  std::size_t d = x.size();
  double eps = 1e-5 * (1.0 + norm(x));
  Matrix jac(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    Vector xp = x, xm = x;
    xp[j] += eps;
    xm[j] -= eps;
    Vector gp = g(xp), gm = g(xm);
    for (std::size_t i = 0; i < d; ++i) jac(i, j) = (gp[i] - gm[i]) / (2.0 * eps);
  }
  Rng rng(0x7a11b0bull);
  Vector v(d);
  for (double& e : v) e = rng.normal();
  double nv = norm(v);
  if (nv == 0.0) return 0.0;
  for (double& e : v) e /= nv;
  double growth = 0.0;
  const int warmup = 60, measure = 40;
  for (int k = 0; k < warmup + measure; ++k) {
    Vector w = jac * v;
    double nw = norm(w);
    if (nw < 1e-300) return 0.0;
    if (k >= warmup) growth += std::log(nw);
    for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / nw;
  }
  return std::exp(growth / measure);
}

inline double orbit_distance(const std::vector<Vector>& a, const std::vector<Vector>& b) {
  // Symmetric Hausdorff-style distance between orbit point sets.
  double worst = 0.0;
  for (const Vector& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vector& q : b) best = std::min(best, std::sqrt(sq_dist(p, q)));
    worst = std::max(worst, best);
  }
  for (const Vector& q : b) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vector& p : a) best = std::min(best, std::sqrt(sq_dist(p, q)));
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace detail

/// Iterates the noise-free skeleton from n_starts random initializations,
/// classifies the terminal behaviour (fixed point, cycle up to period 32, or
/// neither), deduplicates attractors within 10 tol, and reports per-attractor
/// contraction and basin fractions. Reports are sorted by orbit coordinates
/// so the output is independent of start ordering.
inline std::vector<AttractorReport> find_attractors(const ContextFreeMap& map,
                                                    const DecoderSpec& dec, std::size_t n_starts,
                                                    std::size_t max_iters, double tol,
                                                    std::uint64_t seed) {
  dec.validate();
  if (n_starts == 0) throw Error("find_attractors: need at least one start");
  auto g = [&](const Vector& x) { return dec.det(map.eval(x), x); };
  const std::size_t max_period = 32;
  double merge_tol = 10.0 * tol;

  struct Found {
    std::vector<Vector> orbit;  // size 1 for fixed points
    std::size_t hits = 0;
  };
  std::vector<Found> found;
  std::size_t none_count = 0;

  Rng rng(seed);
  std::size_t d = dec.dim();
  for (std::size_t s = 0; s < n_starts; ++s) {
    Vector x(d);
    for (double& v : x) v = 1.5 * rng.normal();
    std::vector<Vector> candidate_orbit;
    bool fixed = false;
    for (std::size_t it = 0; it < max_iters; ++it) {
      Vector next = g(x);
      if (std::sqrt(sq_dist(next, x)) <= tol) {
        x = std::move(next);
        fixed = true;
        break;
      }
      x = std::move(next);
    }
    if (fixed) {
      candidate_orbit.push_back(x);
    } else {
      // Trailing orbit: look for the smallest period whose shifts agree.
      std::vector<Vector> tail;
      tail.reserve(3 * max_period);
      Vector y = x;
      for (std::size_t i = 0; i < 3 * max_period; ++i) {
        y = g(y);
        tail.push_back(y);
      }
      std::size_t period = 0;
      for (std::size_t p = 1; p <= max_period && period == 0; ++p) {
        bool ok = true;
        for (std::size_t i = tail.size() - p; i < tail.size(); ++i)
          if (std::sqrt(sq_dist(tail[i], tail[i - p])) > merge_tol) {
            ok = false;
            break;
          }
        if (ok) period = p;
      }
      if (period == 0) {
        ++none_count;
        continue;
      }
      candidate_orbit.assign(tail.end() - static_cast<std::ptrdiff_t>(period), tail.end());
    }
    bool merged = false;
    for (Found& f : found) {
      if (f.orbit.size() == candidate_orbit.size() &&
          detail::orbit_distance(f.orbit, candidate_orbit) <= merge_tol) {
        ++f.hits;
        merged = true;
        break;
      }
    }
    if (!merged) found.push_back({std::move(candidate_orbit), 1});
  }

  std::vector<AttractorReport> reports;
  for (Found& f : found) {
    AttractorReport r;
    r.period = f.orbit.size();
    r.kind = r.period == 1 ? AttractorReport::Kind::FixedPoint : AttractorReport::Kind::Cycle;
    r.basin_hits = static_cast<double>(f.hits) / static_cast<double>(n_starts);
    // Contraction of the period-composed map at a point of the orbit.
    std::size_t p = r.period;
    auto g_p = [&](const Vector& x0) {
      Vector y = x0;
      for (std::size_t i = 0; i < p; ++i) y = g(y);
      return y;
    };
    r.local_contraction = detail::fd_spectral_radius(g_p, f.orbit.front());
    r.orbit = std::move(f.orbit);
    reports.push_back(std::move(r));
  }
  std::sort(reports.begin(), reports.end(), [](const AttractorReport& a, const AttractorReport& b) {
    return a.orbit.front() < b.orbit.front();
  });
  if (reports.empty()) {
    AttractorReport r;
    r.kind = AttractorReport::Kind::NoneFound;
    r.basin_hits = 0.0;
    reports.push_back(std::move(r));
  }
  (void)none_count;
  return reports;
}

struct RepetitionMetrics {
  bool loop_detected = false;
  std::size_t loop_period = 0;
  double entropy = 0.0;  // empirical symbol entropy, nats
};

/// Nearest-codeword symbols; ties resolve to the lowest index.
inline std::vector<std::size_t> quantize_trajectory(std::span<const Vector> traj,
                                                    std::span<const Vector> codebook) {
  if (codebook.empty()) throw EmptyCodebook("quantize_trajectory: empty codebook");
  std::vector<std::size_t> symbols(traj.size());
  for (std::size_t t = 0; t < traj.size(); ++t) {
    std::size_t best = 0;
    double best_d = sq_dist(traj[t], codebook[0]);
    for (std::size_t c = 1; c < codebook.size(); ++c) {
      double dd = sq_dist(traj[t], codebook[c]);
      if (dd < best_d) {
        best_d = dd;
        best = c;
      }
    }
    symbols[t] = best;
  }
  return symbols;
}

/// Quantizes the trajectory to nearest-codeword symbols, then runs exact
/// cycle detection over the trailing half of the symbol sequence and
/// computes the empirical symbol entropy of the whole sequence.
inline RepetitionMetrics repetition_metrics(std::span<const Vector> traj,
                                            std::span<const Vector> codebook) {
  if (codebook.empty()) throw EmptyCodebook("repetition_metrics: empty codebook");
  if (traj.empty()) throw EmptyContext("repetition_metrics: empty trajectory");
  std::vector<std::size_t> symbols = quantize_trajectory(traj, codebook);
  RepetitionMetrics out;
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t s : symbols) ++counts[s];
  for (const auto& [sym, c] : counts) {
    double p = static_cast<double>(c) / static_cast<double>(symbols.size());
    out.entropy -= p * std::log(p);
  }
  // Exact periodicity over the trailing half.
  std::size_t half = symbols.size() / 2;
  if (half == 0) half = symbols.size();
  std::size_t begin = symbols.size() - half;
  std::size_t max_p = std::min<std::size_t>(64, half / 2 == 0 ? 1 : half / 2);
  for (std::size_t p = 1; p <= max_p; ++p) {
    bool ok = true;
    for (std::size_t i = begin + p; i < symbols.size(); ++i)
      if (symbols[i] != symbols[i - p]) {
        ok = false;
        break;
      }
    if (ok) {
      out.loop_detected = true;
      out.loop_period = p;
      break;
    }
  }
  return out;
}

}  // namespace crl
