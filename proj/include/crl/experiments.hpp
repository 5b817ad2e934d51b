#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crl/attention.hpp"
#include "crl/collapse.hpp"
#include "crl/config.hpp"
#include "crl/csv.hpp"
#include "crl/icl.hpp"
#include "crl/markov.hpp"
#include "crl/matrix.hpp"
#include "crl/parallel.hpp"
#include "crl/process.hpp"
#include "crl/slope.hpp"
#include "crl/svg.hpp"
#include "crl/theory.hpp"

namespace crl {

inline std::string build_id() {
#ifdef CRL_BUILD_ID
  return CRL_BUILD_ID;
#else
  return "unknown";
#endif
}

/// One verifiable statement about an experiment's output, with the threshold
/// it was checked against.
struct Claim {
  std::string name;
  bool pass;
  double value;
  std::string threshold;
};

// ---------------------------------------------------------------------------
// Trend utilities
// ---------------------------------------------------------------------------

/// Pool-adjacent-violators projection onto nondecreasing sequences.
inline std::vector<double> isotonic_fit(std::span<const double> v) {
  struct Block {
    double sum;
    std::size_t count;
  };
  std::vector<Block> blocks;
  for (double x : v) {
    blocks.push_back({x, 1});
    while (blocks.size() > 1) {
      auto& a = blocks[blocks.size() - 2];
      auto& b = blocks.back();
      if (a.sum / a.count <= b.sum / b.count) break;
      a.sum += b.sum;
      a.count += b.count;
      blocks.pop_back();
    }
  }
  std::vector<double> fit;
  fit.reserve(v.size());
  for (const Block& b : blocks)
    for (std::size_t i = 0; i < b.count; ++i) fit.push_back(b.sum / b.count);
  return fit;
}

/// L-infinity distance between a sequence and its nondecreasing projection.
inline double isotonic_violation_increasing(std::span<const double> v) {
  std::vector<double> fit = isotonic_fit(v);
  double worst = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(v[i] - fit[i]));
  return worst;
}

inline double isotonic_violation_decreasing(std::span<const double> v) {
  std::vector<double> neg(v.begin(), v.end());
  for (double& x : neg) x = -x;
  return isotonic_violation_increasing(neg);
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Per-experiment runners
// ---------------------------------------------------------------------------

struct ExperimentOutput {
  std::string csv_text;
  std::vector<Claim> claims;
  nlohmann::json extra = nlohmann::json::object();
  std::string plot_x, plot_y;
  bool plot_logx = false, plot_logy = false;
};

namespace detail {

inline void mean_stderr(std::span<const double> v, double& mean, double& se) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) {
    double d = x - mean;
    var += d * d;
  }
  se = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1) /
                                static_cast<double>(v.size()))
                    : 0.0;
}

/// Random square matrix rescaled to a prescribed operator norm.
inline Matrix random_operator(std::size_t d, double target_norm, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(d, d);
  double base = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& x : m.data()) x = base * rng.normal();
  double n = op_norm(m);
  return scaled(m, target_norm / n);
}

inline LayerStack build_stack(const ExperimentConfig& cfg, const CovarianceModel& cov,
                              std::size_t depth) {
  LayerStack stack;
  stack.input_spec = make_process(cov, cfg.radial, cfg.dependence, cfg.master_seed);
  for (std::size_t l = 1; l <= depth; ++l) {
    AttentionParams head = random_head(cfg.dim, cfg.d_k, cfg.dim, cov, cfg.cone_fraction,
                                       split_seed(cfg.weight_seed, l));
    Matrix mix = random_operator(cfg.dim, cfg.mix_scale, split_seed(cfg.weight_seed, 1000 + l));
    stack.layers.emplace_back(std::move(head), ResidualBlockSpec::linear(std::move(mix)));
  }
  stack.validate();
  return stack;
}

inline DecoderSpec build_decoder(const ExperimentConfig& cfg, std::size_t d, double noise) {
  DecoderSpec dec;
  dec.h_mix = random_operator(d, cfg.a_scale, split_seed(cfg.weight_seed, 11));
  dec.x_mix = random_operator(d, cfg.c_scale, split_seed(cfg.weight_seed, 12));
  dec.squash_gain = cfg.gain;
  dec.noise_scale = noise;
  dec.validate();
  return dec;
}

}  // namespace detail

/// Directional alignment of a frozen random head against its covariance
/// readout across token positions, aggregated over replicate streams.
inline ExperimentOutput run_readout_align(const ExperimentConfig& cfg, int workers) {
  CovarianceModel cov = cfg.build_covariance();
  AttentionParams head =
      random_head(cfg.dim, cfg.d_k, cfg.d_v, cov, cfg.cone_fraction, cfg.weight_seed);
  Matrix readout = readout_matrix(head, cov);
  std::size_t n = cfg.lengths.back();

  std::vector<std::vector<double>> cos(cfg.replicates,
                                       std::vector<double>(cfg.lengths.size(), 0.0));
  parallel_for(cfg.replicates, workers, [&](std::size_t rep) {
    TokenStream stream =
        sample_stream(cfg.build_process(split_seed(cfg.master_seed, rep)), n);
    for (std::size_t c = 0; c < cfg.lengths.size(); ++c) {
      std::size_t t = cfg.lengths[c];
      const Vector& x_t = stream.tokens[t - 1];
      Vector q = head.theta_q * x_t;
      Vector xbar = barycenter(std::span<const Vector>(stream.tokens.data(), t), q, head.theta_k,
                               head.d_k);
      Vector y = head.theta_v * xbar;
      cos[rep][c] = cosine(y, readout * x_t);
    }
  });

  CsvBuilder csv({"t", "median_cosine", "mean_cosine", "stderr", "n_seeds"});
  std::vector<double> medians(cfg.lengths.size());
  for (std::size_t c = 0; c < cfg.lengths.size(); ++c) {
    std::vector<double> column(cfg.replicates);
    for (std::size_t r = 0; r < cfg.replicates; ++r) column[r] = cos[r][c];
    double mean, se;
    detail::mean_stderr(column, mean, se);
    medians[c] = median_of(column);
    csv.row({std::to_string(cfg.lengths[c]), format_g17(medians[c]), format_g17(mean),
             format_g17(se), std::to_string(cfg.replicates)});
  }

  ExperimentOutput out;
  out.csv_text = csv.str();
  double iso = isotonic_violation_increasing(medians);
  out.claims.push_back({"median_cosine_nondecreasing", iso <= 0.02, iso, "<= 0.02"});
  out.claims.push_back({"median_cosine_at_max_length", medians.back() >= 0.95, medians.back(),
                        ">= 0.95 at t = " + std::to_string(cfg.lengths.back())});
  out.extra["final_median_cosine"] = medians.back();
  out.plot_x = "t";
  out.plot_y = "median_cosine";
  out.plot_logx = true;
  return out;
}

/// L2 concentration of the prefix barycenter at a fixed query, with a
/// log-log slope fit and an optional trace-doubling comparison at fixed n.
inline ExperimentOutput run_rate(const ExperimentConfig& cfg, int workers) {
  CovarianceModel cov = cfg.build_covariance();
  Rng wrng(cfg.weight_seed);
  Vector p(cfg.dim);
  for (double& x : p) x = wrng.normal();
  auto calibrate = [&](const CovarianceModel& c, Vector dir) {
    double quad = dot(dir, c.apply_sigma(dir));
    double scale = std::sqrt(cfg.cone_fraction * static_cast<double>(cfg.d_k) / quad);
    for (double& x : dir) x *= scale;
    return dir;
  };
  p = calibrate(cov, p);
  Vector target = gaussian_tilted_mean(cov, p, cfg.d_k);
  Matrix eye = Matrix::identity(cfg.dim);

  std::size_t n_max = cfg.lengths.back();
  std::vector<std::vector<double>> errs(cfg.replicates,
                                        std::vector<double>(cfg.lengths.size(), 0.0));
  parallel_for(cfg.replicates, workers, [&](std::size_t rep) {
    TokenStream stream =
        sample_stream(cfg.build_process(split_seed(cfg.master_seed, rep)), n_max);
    auto values = streaming_prefix_barycenter(stream, p, eye, cfg.d_k, cfg.lengths);
    for (std::size_t c = 0; c < values.size(); ++c)
      errs[rep][c] = sq_dist(values[c].second, target);
  });

  CsvBuilder csv({"n", "mean_sq_error", "stderr", "n_replicates"});
  std::vector<std::pair<double, double>> points;
  for (std::size_t c = 0; c < cfg.lengths.size(); ++c) {
    std::vector<double> column(cfg.replicates);
    for (std::size_t r = 0; r < cfg.replicates; ++r) column[r] = errs[r][c];
    double mean, se;
    detail::mean_stderr(column, mean, se);
    points.emplace_back(static_cast<double>(cfg.lengths[c]), mean);
    csv.row({std::to_string(cfg.lengths[c]), format_g17(mean), format_g17(se),
             std::to_string(cfg.replicates)});
  }

  ExperimentOutput out;
  out.csv_text = csv.str();
  SlopeFit fit = fit_slope(points);
  out.claims.push_back({"rate_slope_in_range", fit.slope >= -1.15 && fit.slope <= -0.85,
                        fit.slope, "in [-1.15, -0.85]"});
  out.claims.push_back({"rate_fit_r2", fit.r2 >= 0.98, fit.r2, ">= 0.98"});
  out.extra["slope_fit"] = {{"slope", fit.slope},
                            {"intercept", fit.intercept},
                            {"r2", fit.r2},
                            {"points", fit.points}};

  if (cfg.trace_check) {
    CovarianceModel cov2 = cfg.build_covariance(cfg.trace_factor);
    Vector p2 = calibrate(cov2, p);  // same direction, same cone fraction
    Vector target2 = gaussian_tilted_mean(cov2, p2, cfg.d_k);
    std::vector<double> base(cfg.replicates), doubled(cfg.replicates);
    std::vector<std::size_t> single_cp = {cfg.trace_n};
    // Disjoint seeds for the scaled run: under shared seeds the two streams
    // are exact rescalings of each other and the ratio is c by construction.
    parallel_for(cfg.replicates, workers, [&](std::size_t rep) {
      TokenStream s1 =
          sample_stream(cfg.build_process(split_seed(cfg.master_seed, rep)), cfg.trace_n);
      base[rep] =
          sq_dist(streaming_prefix_barycenter(s1, p, eye, cfg.d_k, single_cp)[0].second, target);
      TokenStream s2 = sample_stream(
          cfg.build_process(split_seed(cfg.master_seed, 1000000ull + rep), cfg.trace_factor),
          cfg.trace_n);
      doubled[rep] = sq_dist(
          streaming_prefix_barycenter(s2, p2, eye, cfg.d_k, single_cp)[0].second, target2);
    });
    double mb, sb, md, sd;
    detail::mean_stderr(base, mb, sb);
    detail::mean_stderr(doubled, md, sd);
    double ratio = md / mb;
    out.claims.push_back(
        {"trace_scaling_ratio", ratio >= 1.5 && ratio <= 2.5, ratio, "in [1.5, 2.5]"});
    out.extra["trace_check"] = {{"n", cfg.trace_n},
                                {"factor", cfg.trace_factor},
                                {"base_mean", mb},
                                {"scaled_mean", md},
                                {"ratio", ratio}};
  }
  out.plot_x = "n";
  out.plot_y = "mean_sq_error";
  out.plot_logx = true;
  out.plot_logy = true;
  return out;
}

/// In-context regression sweeps (single head and residual stack protocols).
inline ExperimentOutput run_icl(const ExperimentConfig& cfg, int workers) {
  StackConfig stack_cfg{cfg.layers, cfg.step, cfg.d_u, cfg.d_w};
  IclSweepResult sweep =
      run_icl_sweep(cfg.lengths, cfg.replicates, stack_cfg, cfg.master_seed, workers);

  CsvBuilder csv({"length", "metric", "predictor", "target", "mean", "stderr", "n_tasks"});
  for (const IclSweepRow& r : sweep.rows)
    csv.row({std::to_string(r.length), r.metric, r.predictor, r.target, format_g17(r.mean),
             format_g17(r.stderr_), std::to_string(r.n_tasks)});

  auto value_of = [&](std::size_t length, const std::string& metric, const std::string& predictor,
                      const std::string& target) {
    for (const IclSweepRow& r : sweep.rows)
      if (r.length == length && r.metric == metric && r.predictor == predictor &&
          r.target == target)
        return r.mean;
    throw Error("icl sweep row not found");
  };
  std::size_t last = cfg.lengths.back();

  ExperimentOutput out;
  out.csv_text = csv.str();
  bool stack_experiment = cfg.experiment == ExperimentKind::IclStack;
  std::string predictor = stack_experiment ? "stack" : "one_step_head";
  std::string target = stack_experiment ? "b_k_u" : "sigma_wu_u";

  std::vector<double> cos_column;
  for (std::size_t length : cfg.lengths)
    cos_column.push_back(value_of(length, "cosine", predictor, target));
  double iso = isotonic_violation_increasing(cos_column);
  out.claims.push_back({"cosine_trend_nondecreasing", iso <= 0.02, iso, "<= 0.02"});

  double final_cos = cos_column.back();
  out.claims.push_back({"mean_cosine_at_max_length", final_cos >= 0.99, final_cos,
                        ">= 0.99 at t-1 = " + std::to_string(last)});
  if (stack_experiment) {
    out.claims.push_back({"gd_contraction_exact", sweep.gd_contraction_violations == 0,
                          static_cast<double>(sweep.gd_contraction_violations),
                          "0 violating tasks"});
  } else {
    double mse = value_of(last, "mse", predictor, target);
    double msq = value_of(last, "target_msq", predictor, target);
    out.claims.push_back(
        {"mse_within_10pct_of_target_norm", mse <= 0.1 * msq, mse / msq, "<= 0.1"});
  }
  out.extra["final_cosine"] = final_cos;
  out.plot_x = "length";
  out.plot_y = "mean";
  out.plot_logx = true;
  // The plot reads the cosine rows of the tested predictor only.
  CsvBuilder plot_csv({"length", "mean"});
  for (std::size_t i = 0; i < cfg.lengths.size(); ++i)
    plot_csv.row({std::to_string(cfg.lengths[i]), format_g17(cos_column[i])});
  out.extra["plot_rows"] = plot_csv.str();
  return out;
}

/// Multi-layer collapse of the terminal hidden state onto the context-free
/// map, with the depth-1 Gaussian case checked against its analytic limit.
inline ExperimentOutput run_collapse(const ExperimentConfig& cfg, int workers) {
  CovarianceModel cov = cfg.build_covariance();
  LayerStack stack = detail::build_stack(cfg, cov, cfg.depth);
  bool analytic = cfg.depth == 1 && cfg.radial == RadialLaw::GaussianZ &&
                  cfg.dependence.kind == Dependence::Kind::Iid;
  ContextFreeMap map =
      analytic ? analytic_gaussian_map(stack, cov)
               : estimate_layer_statistics(stack, cfg.reference_burn, cfg.reference_m,
                                           split_seed(cfg.master_seed, 0x9e0full), workers);
  std::vector<CollapseRow> rows =
      collapse_experiment(stack, map, cfg.lengths, cfg.replicates, workers);

  CsvBuilder csv({"t", "mean_sq_error", "stderr", "n_seeds", "layer_depth"});
  std::vector<double> means;
  std::vector<std::pair<double, double>> points;
  for (const CollapseRow& r : rows) {
    csv.row({std::to_string(r.t), format_g17(r.mean_sq_error), format_g17(r.stderr_),
             std::to_string(r.n_seeds), std::to_string(r.layer_depth)});
    means.push_back(r.mean_sq_error);
    points.emplace_back(static_cast<double>(r.t), r.mean_sq_error);
  }

  ExperimentOutput out;
  out.csv_text = csv.str();
  if (cfg.depth == 1) {
    SlopeFit fit = fit_slope(points);
    out.claims.push_back({"collapse_slope_in_range", fit.slope >= -1.25 && fit.slope <= -0.75,
                          fit.slope, "in [-1.25, -0.75]"});
    out.extra["slope_fit"] = {{"slope", fit.slope}, {"r2", fit.r2}, {"points", fit.points}};
  } else {
    bool strict = true;
    double worst = 0.0;
    for (std::size_t i = 1; i < means.size(); ++i) {
      worst = std::max(worst, means[i] / means[i - 1]);
      if (means[i] >= means[i - 1]) strict = false;
    }
    out.claims.push_back({"collapse_strictly_decreasing", strict, worst,
                          "every adjacent ratio below 1"});
    double ratio = means.back() / means.front();
    out.claims.push_back({"collapse_final_over_initial", ratio <= 0.1, ratio, "<= 0.1"});
  }
  double iso = isotonic_violation_decreasing(means);
  out.claims.push_back({"collapse_monotone_trend", iso <= 0.05 * means.front(),
                        means.front() > 0 ? iso / means.front() : 0.0,
                        "isotonic violation <= 5% of first level"});

  nlohmann::json sidecar;
  sidecar["layer_depth"] = cfg.depth;
  sidecar["analytic_layer0"] = analytic;
  sidecar["reference_length"] = map.reference_length;
  nlohmann::json traces = nlohmann::json::array();
  for (const SpdMatrix& s : map.layer_covariances) traces.push_back(s.trace());
  sidecar["layer_covariance_traces"] = traces;
  nlohmann::json lips = nlohmann::json::array();
  for (const auto& [params, block] : stack.layers) lips.push_back(block.lipschitz_bound);
  sidecar["residual_lipschitz_bounds"] = lips;
  sidecar["layer_kurtosis"] = map.layer_kurtosis;
  nlohmann::json flags = nlohmann::json::array();
  for (bool f : map.kurtosis_flags) flags.push_back(f);
  sidecar["kurtosis_flags"] = flags;
  out.extra["sidecar"] = sidecar;

  out.plot_x = "t";
  out.plot_y = "mean_sq_error";
  out.plot_logx = true;
  out.plot_logy = true;
  return out;
}

/// One-step Markov-closure gap along a generated chain, with the context-free
/// statistics estimated from a pilot run of the same chain.
inline ExperimentOutput run_markov_closure(const ExperimentConfig& cfg, int workers) {
  CovarianceModel cov = cfg.build_covariance();
  LayerStack stack = detail::build_stack(cfg, cov, 1);
  DecoderSpec dec = detail::build_decoder(cfg, cfg.dim, cfg.noise);

  Rng x0_rng(split_seed(cfg.master_seed, 0));
  Vector z(cfg.dim);
  ProcessSpec marginal = cfg.build_process(0);
  Vector x0 = next_elliptical(x0_rng, marginal, z);

  std::vector<Vector> pilot =
      generate_full(stack, dec, x0, cfg.pilot_steps, split_seed(cfg.master_seed, 1));
  std::vector<Vector> ref(pilot.begin() + static_cast<std::ptrdiff_t>(pilot.size() / 2),
                          pilot.end());
  ContextFreeMap map = plugin_map_from_sample(stack, std::move(ref), workers);

  // Replicate chains share the frozen map but carry independent noise; the
  // reported windowed gaps are chain averages.
  std::size_t n_points = cfg.steps - cfg.window + 1;
  std::vector<std::vector<double>> per_chain(cfg.replicates);
  parallel_for(cfg.replicates, workers, [&](std::size_t rep) {
    TrajectoryPair pair = generate_pair(stack, map, dec, pilot.back(), cfg.steps,
                                        split_seed(cfg.master_seed, 100 + rep));
    auto gaps = closure_divergence(pair, cfg.window);
    per_chain[rep].resize(gaps.size());
    for (std::size_t i = 0; i < gaps.size(); ++i) per_chain[rep][i] = gaps[i].second;
  });
  std::vector<double> gap_mean(n_points, 0.0);
  for (const auto& chain : per_chain)
    for (std::size_t i = 0; i < n_points; ++i) gap_mean[i] += chain[i];
  for (double& g : gap_mean) g /= static_cast<double>(cfg.replicates);

  CsvBuilder csv({"t", "gap_window_mean"});
  for (std::size_t i = 0; i < n_points; ++i)
    csv.row({std::to_string(cfg.window + i), format_g17(gap_mean[i])});

  ExperimentOutput out;
  out.csv_text = csv.str();
  double first = gap_mean.front();
  double final = gap_mean.back();
  out.claims.push_back({"closure_final_window_within_quarter_of_first", final <= 0.25 * first,
                        first > 0 ? final / first : 0.0, "<= 0.25"});

  // Noise-free kernel degeneracy: the tau = 0 path must equal phi(g(x))
  // without any sampling.
  DecoderSpec dec0 = dec;
  dec0.noise_scale = 0.0;
  Rng probe_rng(split_seed(cfg.master_seed, 3));
  double worst = 0.0;
  for (int k = 0; k < 5; ++k) {
    Vector x(cfg.dim);
    for (double& v : x) v = probe_rng.normal();
    for (const char* phi : {"one", "tanh0", "radial_bump", "cosine_feature"}) {
      double lhs = kernel_apply(map, dec0, x, phi, 1);
      double rhs = test_functions().at(phi)(dec0.det(map.eval(x), x));
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  }
  out.claims.push_back({"kernel_noise_free_degeneracy_exact", worst == 0.0, worst, "== 0"});

  out.extra["first_window_mean"] = first;
  out.extra["final_window_mean"] = final;
  out.extra["decoder_lipschitz"] = dec.lipschitz();
  out.extra["reference_length"] = map.reference_length;
  out.plot_x = "t";
  out.plot_y = "gap_window_mean";
  out.plot_logx = true;
  out.plot_logy = true;
  return out;
}

/// Attractors of the noise-free skeleton and the repetition structure of a
/// generated trajectory.
inline ExperimentOutput run_attractors(const ExperimentConfig& cfg, int workers) {
  (void)workers;
  std::size_t d = cfg.dim;
  LayerStack stack;
  stack.input_spec = make_process(CovarianceModel::identity(d), RadialLaw::GaussianZ,
                                  Dependence::iid(), cfg.master_seed);
  ContextFreeMap map;
  map.stack = stack;  // depth 0: F = id

  DecoderSpec dec = detail::build_decoder(cfg, d, 0.0);
  std::vector<AttractorReport> reports =
      find_attractors(map, dec, cfg.n_starts, cfg.max_iters, cfg.tol, split_seed(cfg.master_seed, 1));

  Rng x0_rng(split_seed(cfg.master_seed, 2));
  Vector x0(d);
  for (double& v : x0) v = x0_rng.normal();
  std::vector<Vector> traj =
      generate_surrogate(map, dec, x0, cfg.traj_steps, split_seed(cfg.master_seed, 4));

  Rng cb_rng(split_seed(cfg.master_seed, 3));
  std::vector<Vector> codebook(cfg.codebook_size, Vector(d));
  for (Vector& c : codebook)
    for (double& v : c) v = cb_rng.normal();
  RepetitionMetrics rep = repetition_metrics(traj, codebook);

  std::vector<std::size_t> symbols = quantize_trajectory(traj, codebook);
  CsvBuilder csv({"step", "symbol"});
  for (std::size_t t = 0; t < symbols.size(); ++t)
    csv.row({std::to_string(t), std::to_string(symbols[t])});

  const AttractorReport* best = nullptr;
  for (const AttractorReport& r : reports)
    if (r.kind != AttractorReport::Kind::NoneFound && (!best || r.basin_hits > best->basin_hits))
      best = &r;

  ExperimentOutput out;
  out.csv_text = csv.str();
  bool full_basin = best != nullptr && best->basin_hits == 1.0;
  out.claims.push_back({"attractor_with_full_basin", full_basin,
                        best ? best->basin_hits : 0.0, "basin_hits == 1.0"});
  bool period_match = best != nullptr && rep.loop_detected && rep.loop_period == best->period;
  out.claims.push_back({"trajectory_loop_matches_attractor_period", period_match,
                        static_cast<double>(rep.loop_period),
                        best ? "== " + std::to_string(best->period) : "attractor required"});
  bool contractive = best != nullptr && best->local_contraction < 1.0;
  out.claims.push_back({"attractor_locally_contractive", contractive,
                        best ? best->local_contraction : 0.0, "< 1"});

  nlohmann::json jreports = nlohmann::json::array();
  for (const AttractorReport& r : reports) {
    nlohmann::json jr;
    jr["kind"] = r.kind == AttractorReport::Kind::FixedPoint
                     ? "fixed_point"
                     : (r.kind == AttractorReport::Kind::Cycle ? "cycle" : "none_found");
    jr["period"] = r.period;
    nlohmann::json orbit = nlohmann::json::array();
    for (const Vector& x : r.orbit) orbit.push_back(x);
    jr["orbit"] = orbit;
    jr["contraction"] = r.local_contraction;
    jr["basin_hits"] = r.basin_hits;
    jreports.push_back(jr);
  }
  out.extra["attractors"] = jreports;
  out.extra["trajectory_entropy"] = rep.entropy;
  out.extra["loop_period"] = rep.loop_period;
  out.plot_x = "step";
  out.plot_y = "symbol";
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch, artifact emission, summary validation
// ---------------------------------------------------------------------------

struct RunOptions {
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  int workers = 0;  // 0 means available parallelism
};

struct RunResult {
  int exit_code = 0;
  std::string out_dir;
  nlohmann::json summary;
};

/// Checks a summary document against the published shape: schema version,
/// experiment name, config hash, master seed, and per-claim booleans with
/// thresholds. Throws Error on the first violation.
inline void validate_summary(const nlohmann::json& s) {
  if (!s.is_object()) throw Error("summary: not an object");
  if (!s.contains("schema") || !s["schema"].is_number_integer() || s["schema"] != 1)
    throw Error("summary: schema must be the integer 1");
  if (!s.contains("experiment") || !s["experiment"].is_string() ||
      !experiment_names().count(s["experiment"].get<std::string>()))
    throw Error("summary: experiment must name a known experiment");
  if (!s.contains("config_hash") || !s["config_hash"].is_string() ||
      s["config_hash"].get<std::string>().size() != 16)
    throw Error("summary: config_hash must be a 16-hex-digit string");
  if (!s.contains("build") || !s["build"].is_string()) throw Error("summary: build id missing");
  if (!s.contains("master_seed") || !s["master_seed"].is_number_integer() ||
      (s["master_seed"].is_number_integer() && !s["master_seed"].is_number_unsigned() &&
       s["master_seed"].get<std::int64_t>() < 0))
    throw Error("summary: master_seed must be a nonnegative integer");
  if (!s.contains("claims") || !s["claims"].is_array() || s["claims"].empty())
    throw Error("summary: claims must be a nonempty array");
  for (const auto& c : s["claims"]) {
    if (!c.contains("name") || !c["name"].is_string()) throw Error("summary: claim name");
    if (!c.contains("pass") || !c["pass"].is_boolean()) throw Error("summary: claim pass flag");
    if (!c.contains("value") || !c["value"].is_number()) throw Error("summary: claim value");
    if (!c.contains("threshold") || !c["threshold"].is_string())
      throw Error("summary: claim threshold");
  }
  if (!s.contains("outputs") || !s["outputs"].is_object())
    throw Error("summary: outputs object missing");
}

inline RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  ExperimentConfig cfg = config;
  if (options.seed) cfg.master_seed = *options.seed;
  int workers = options.workers > 0 ? options.workers : default_workers();

  ExperimentOutput out;
  switch (cfg.experiment) {
    case ExperimentKind::ReadoutAlign:
      out = run_readout_align(cfg, workers);
      break;
    case ExperimentKind::Rate:
      out = run_rate(cfg, workers);
      break;
    case ExperimentKind::IclSingle:
    case ExperimentKind::IclStack:
      out = run_icl(cfg, workers);
      break;
    case ExperimentKind::Collapse:
      out = run_collapse(cfg, workers);
      break;
    case ExperimentKind::MarkovClosure:
      out = run_markov_closure(cfg, workers);
      break;
    case ExperimentKind::Attractors:
      out = run_attractors(cfg, workers);
      break;
  }

  std::string dir = options.out_dir.value_or(cfg.output);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoFailure("cannot create output directory " + dir + ": " + ec.message());

  std::string csv_path = (fs::path(dir) / "results.csv").string();
  write_file_atomic(csv_path, out.csv_text);

  // Standalone sidecar artifacts, also embedded in the summary.
  if (out.extra.contains("sidecar"))
    write_file_atomic((fs::path(dir) / "sidecar.json").string(),
                      out.extra["sidecar"].dump(2) + "\n");
  if (out.extra.contains("attractors"))
    write_file_atomic((fs::path(dir) / "attractors.json").string(),
                      out.extra["attractors"].dump(2) + "\n");

  // The ICL sweep plots a single metric column extracted from the long table.
  std::string plot_source = csv_path;
  if (out.extra.contains("plot_rows")) {
    plot_source = (fs::path(dir) / "plot_data.csv").string();
    write_file_atomic(plot_source, out.extra["plot_rows"].get<std::string>());
    out.extra.erase("plot_rows");
  }
  std::string svg_path = (fs::path(dir) / "plot.svg").string();
  emit_svg(plot_source, out.plot_x, out.plot_y, out.plot_logx, out.plot_logy, svg_path);

  nlohmann::json summary;
  summary["schema"] = 1;
  summary["experiment"] = cfg.name;
  summary["build"] = build_id();
  summary["config_hash"] = fnv1a_hex(cfg.config_text);
  summary["master_seed"] = cfg.master_seed;
  summary["workers"] = workers;
  nlohmann::json claims = nlohmann::json::array();
  bool all_pass = true;
  for (const Claim& c : out.claims) {
    claims.push_back(
        {{"name", c.name}, {"pass", c.pass}, {"value", c.value}, {"threshold", c.threshold}});
    all_pass = all_pass && c.pass;
  }
  summary["claims"] = claims;
  summary["outputs"] = {{"results", "results.csv"}, {"plot", "plot.svg"}};
  for (auto& [key, value] : out.extra.items()) summary[key] = value;
  validate_summary(summary);
  write_file_atomic((fs::path(dir) / "summary.json").string(), summary.dump(2) + "\n");

  return {all_pass ? 0 : 3, dir, summary};
}

inline RunResult run_experiment_file(const std::string& config_path, const RunOptions& options) {
  return run_experiment(ExperimentConfig::load(config_path), options);
}

}  // namespace crl
