#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crl/attention.hpp"
#include "crl/matrix.hpp"
#include "crl/parallel.hpp"
#include "crl/rng.hpp"
#include "crl/theory.hpp"

namespace crl {

struct SingularCovariance : Error {
  using Error::Error;
};

/// One in-context linear-regression instance: diagonal covariate covariance,
/// a regression matrix, labelled demonstrations, and a label-masked query.
struct PromptTask {
  std::size_t d_u = 0;
  std::size_t d_w = 0;
  SpdMatrix sigma_uu;
  Matrix beta;  // d_u x d_w
  std::vector<std::pair<Vector, Vector>> demos;
  Vector query_u;

  std::size_t context_length() const { return demos.size() + 1; }
};

/// Residual-stack shape: K blocks with a common step size.
struct StackConfig {
  std::size_t layers = 1;
  double step = 1e-2;
  std::size_t d_u = 0;
  std::size_t d_w = 0;
};

/// Population gradient-descent iterates B^(0) ... B^(K).
struct GdTrace {
  std::vector<Matrix> iterates;
};

/// Samples a task: diagonal Sigma_uu with entries Uniform[0.25, 1], beta with
/// standard Gaussian entries, t-1 noise-free demonstrations w = beta^T u, and
/// a query covariate. The diagonal prior keeps lambda_max(Sigma_uu) <= 1.
/// The optional label noise is off by default and excluded from the
/// reference protocol.
inline PromptTask make_task(std::size_t d_u, std::size_t d_w, std::size_t t, std::uint64_t seed,
                            double noise = 0.0) {
  if (t < 2) throw Error("make_task: need t >= 2");
  Rng rng(seed);
  Vector diag(d_u);
  for (double& x : diag) x = rng.uniform(0.25, 1.0);
  Matrix beta(d_u, d_w);
  for (double& x : beta.data()) x = rng.normal();

  PromptTask task;
  task.d_u = d_u;
  task.d_w = d_w;
  task.sigma_uu = cholesky(Matrix::diagonal(diag));
  task.beta = std::move(beta);

  Vector sqrt_diag(d_u);
  for (std::size_t i = 0; i < d_u; ++i) sqrt_diag[i] = std::sqrt(diag[i]);
  auto draw_u = [&] {
    Vector u(d_u);
    for (std::size_t i = 0; i < d_u; ++i) u[i] = sqrt_diag[i] * rng.normal();
    return u;
  };
  for (std::size_t j = 0; j + 1 < t; ++j) {
    Vector u = draw_u();
    Vector w = tmatvec(task.beta, u);
    if (noise > 0.0)
      for (double& x : w) x += noise * rng.normal();
    task.demos.emplace_back(std::move(u), std::move(w));
  }
  task.query_u = draw_u();
  return task;
}

/// Cross-covariance block Sigma_wu = beta^T Sigma_uu (d_w x d_u).
inline Matrix sigma_wu(const PromptTask& task) {
  return task.beta.transposed() * task.sigma_uu.base();
}

/// Selector head: queries and keys read the covariate slot, values read the
/// target slot, d_k = d_u.
inline AttentionParams icl_selector_head(std::size_t d_u, std::size_t d_w) {
  std::size_t d = d_u + d_w;
  Matrix s_u(d_u, d);
  for (std::size_t i = 0; i < d_u; ++i) s_u(i, i) = 1.0;
  Matrix s_w(d_w, d);
  for (std::size_t i = 0; i < d_w; ++i) s_w(i, d_u + i) = 1.0;
  return make_attention_params(s_u, s_u, std::move(s_w));
}

/// Prompt tokens (u_j, w_j) for the demonstrations, then (u_t, 0) for the
/// query. The query's target slot is a hard zero.
inline std::vector<Vector> assemble_tokens(const PromptTask& task) {
  std::size_t d = task.d_u + task.d_w;
  std::vector<Vector> tokens;
  tokens.reserve(task.context_length());
  for (const auto& [u, w] : task.demos) {
    Vector x(d, 0.0);
    std::copy(u.begin(), u.end(), x.begin());
    std::copy(w.begin(), w.end(), x.begin() + static_cast<std::ptrdiff_t>(task.d_u));
    tokens.push_back(std::move(x));
  }
  Vector x(d, 0.0);
  std::copy(task.query_u.begin(), task.query_u.end(), x.begin());
  tokens.push_back(std::move(x));
  return tokens;
}

/// Runs the selector head causally over the prompt and returns
/// sqrt(d_u) * y_t at the query position. For Gaussian covariates the
/// directional scalar of the long-context limit is exactly 1/sqrt(d_u), so
/// the rescale makes the output directly comparable to Sigma_wu u_t.
inline Vector one_step_head(const PromptTask& task) {
  AttentionParams head = icl_selector_head(task.d_u, task.d_w);
  std::vector<Vector> tokens = assemble_tokens(task);
  std::vector<Vector> outputs = causal_head(head, tokens);
  Vector y = std::move(outputs.back());
  double c = std::sqrt(static_cast<double>(task.d_u));
  for (double& v : y) v *= c;
  return y;
}

/// Exact population recursion B^(k+1) = B^(k) - eta (B^(k) Sigma_uu - Sigma_wu)
/// from B^(0) = 0.
inline GdTrace gd_iterate(const Matrix& sigma_uu_mat, const Matrix& sigma_wu_mat, double eta,
                          std::size_t k) {
  if (eta < 0.0) throw Error("gd_iterate: eta must be nonnegative");
  if (sigma_uu_mat.rows() != sigma_uu_mat.cols() || sigma_wu_mat.cols() != sigma_uu_mat.rows())
    throw DimensionMismatch("gd_iterate: block shapes");
  GdTrace trace;
  trace.iterates.reserve(k + 1);
  trace.iterates.push_back(Matrix(sigma_wu_mat.rows(), sigma_wu_mat.cols()));
  for (std::size_t i = 0; i < k; ++i) {
    const Matrix& b = trace.iterates.back();
    Matrix grad = b * sigma_uu_mat - sigma_wu_mat;
    trace.iterates.push_back(b - scaled(grad, eta));
  }
  return trace;
}

/// K residual blocks over the prompt. Queries and keys read the covariate
/// slot (which no block mutates), so the causal softmax weights are computed
/// once and reused across blocks; each block updates every position's target
/// slot by r_j <- r_j - eta sqrt(d_u) sum_{i<=j} a_ji r_i. Returns the query
/// prediction w_hat = -r_t after K blocks.
inline Vector residual_stack_forward(const PromptTask& task, const StackConfig& cfg) {
  if (cfg.d_u != task.d_u || cfg.d_w != task.d_w)
    throw DimensionMismatch("residual_stack_forward: config does not match task");
  std::size_t t = task.context_length();
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(task.d_u));

  std::vector<const Vector*> us(t);
  for (std::size_t j = 0; j + 1 < t; ++j) us[j] = &task.demos[j].first;
  us[t - 1] = &task.query_u;

  // Causal softmax weights over covariate logits u_j . u_i / sqrt(d_u);
  // row j holds weights for positions 0..j.
  std::vector<std::vector<double>> weights(t);
  for (std::size_t j = 0; j < t; ++j) {
    Vector scores(j + 1);
    for (std::size_t i = 0; i <= j; ++i) scores[i] = dot(*us[j], *us[i]) * inv_sqrt;
    weights[j] = stable_softmax(scores);
  }

  // r^(0): demonstration targets, hard zero at the query.
  std::vector<Vector> r(t);
  for (std::size_t j = 0; j + 1 < t; ++j) r[j] = task.demos[j].second;
  r[t - 1] = Vector(task.d_w, 0.0);

  double c = cfg.step * std::sqrt(static_cast<double>(task.d_u));
  std::vector<Vector> readout(t);
  for (std::size_t k = 0; k < cfg.layers; ++k) {
    for (std::size_t j = 0; j < t; ++j) {
      Vector y(task.d_w, 0.0);
      const std::vector<double>& w = weights[j];
      for (std::size_t i = 0; i <= j; ++i)
        for (std::size_t m = 0; m < task.d_w; ++m) y[m] += w[i] * r[i][m];
      readout[j] = std::move(y);
    }
    for (std::size_t j = 0; j < t; ++j)
      for (std::size_t m = 0; m < task.d_w; ++m) r[j][m] -= c * readout[j][m];
  }
  return scaled(r[t - 1], -1.0);
}

/// Bayes/population regressor at the query: Sigma_wu Sigma_uu^{-1} u_t, which
/// for these tasks reduces algebraically to beta^T u_t.
inline Vector bayes_predictor(const PromptTask& task) {
  for (std::size_t i = 0; i < task.d_u; ++i)
    if (task.sigma_uu.chol()(i, i) < 1e-12)
      throw SingularCovariance("bayes_predictor: Sigma_uu is numerically singular");
  Vector solved = task.sigma_uu.solve(task.query_u);
  return sigma_wu(task) * solved;
}

/// One aggregate cell of the sweep table.
struct IclSweepRow {
  std::size_t length;  // number of demonstrations t - 1
  std::string metric;
  std::string predictor;
  std::string target;
  double mean;
  double stderr_;
  std::size_t n_tasks;
};

/// Per-length task ensembles for three predictor/target pairs:
/// (single head, Sigma_wu u_t), (stack, B^(K) u_t), (stack, B* u_t), plus the
/// mean squared target norms used to normalize errors. Task (li, ti) draws
/// its seed as split_seed(master, li * 10^6 + ti), so extending the length
/// grid never reshuffles existing tasks. Also reports whether the exact GD
/// contraction bound held on every task.
struct IclSweepResult {
  std::vector<IclSweepRow> rows;
  std::size_t gd_contraction_violations = 0;
};

inline IclSweepResult run_icl_sweep(std::span<const std::size_t> lengths,
                                    std::size_t tasks_per_length, const StackConfig& cfg,
                                    std::uint64_t master_seed, int workers = 1) {
  for (std::size_t i = 1; i < lengths.size(); ++i)
    if (lengths[i] <= lengths[i - 1]) throw Error("run_icl_sweep: lengths must be ascending");
  if (tasks_per_length == 0) throw Error("run_icl_sweep: need at least one task");

  struct Cell {
    double cos_single, mse_single, cos_stack_gd, mse_stack_gd, cos_stack_bayes, mse_stack_bayes;
    double msq_single_target, msq_gd_target, msq_bayes_target;
    bool contraction_ok;
  };
  std::vector<Cell> cells(lengths.size() * tasks_per_length);

  parallel_for(cells.size(), workers, [&](std::size_t idx) {
    std::size_t li = idx / tasks_per_length;
    std::size_t ti = idx % tasks_per_length;
    std::uint64_t seed = split_seed(master_seed, li * 1000000ull + ti);
    PromptTask task = make_task(cfg.d_u, cfg.d_w, lengths[li] + 1, seed);

    Matrix swu = sigma_wu(task);
    Vector target_single = swu * task.query_u;
    GdTrace trace = gd_iterate(task.sigma_uu.base(), swu, cfg.step, cfg.layers);
    Vector target_gd = trace.iterates.back() * task.query_u;
    Vector target_bayes = bayes_predictor(task);

    Vector single = one_step_head(task);
    Vector stack = residual_stack_forward(task, cfg);

    // ||B^(k) - B*||_F <= ||I - eta Sigma_uu||_op^k ||B*||_F, exact on the trace.
    // Sigma_uu is diagonal for sampled tasks, so the operator norm is a scan.
    Matrix b_star = task.beta.transposed();
    double rate = 0.0;
    for (std::size_t i = 0; i < task.d_u; ++i)
      rate = std::max(rate, std::abs(1.0 - cfg.step * task.sigma_uu.base()(i, i)));
    double b_star_norm = frobenius_norm(b_star);
    bool ok = true;
    for (std::size_t k = 0; k < trace.iterates.size(); ++k) {
      double lhs = frobenius_norm(trace.iterates[k] - b_star);
      double rhs = std::pow(rate, static_cast<double>(k)) * b_star_norm;
      if (lhs > rhs * (1.0 + 1e-12)) ok = false;
    }

    Cell& c = cells[idx];
    c.cos_single = cosine(single, target_single);
    c.mse_single = sq_dist(single, target_single);
    c.cos_stack_gd = cosine(stack, target_gd);
    c.mse_stack_gd = sq_dist(stack, target_gd);
    c.cos_stack_bayes = cosine(stack, target_bayes);
    c.mse_stack_bayes = sq_dist(stack, target_bayes);
    c.msq_single_target = dot(target_single, target_single);
    c.msq_gd_target = dot(target_gd, target_gd);
    c.msq_bayes_target = dot(target_bayes, target_bayes);
    c.contraction_ok = ok;
  });

  IclSweepResult result;
  auto emit = [&](std::size_t li, const std::string& metric, const std::string& predictor,
                  const std::string& target, double Cell::*field) {
    double mean = 0.0;
    for (std::size_t ti = 0; ti < tasks_per_length; ++ti)
      mean += cells[li * tasks_per_length + ti].*field;
    mean /= static_cast<double>(tasks_per_length);
    double var = 0.0;
    for (std::size_t ti = 0; ti < tasks_per_length; ++ti) {
      double d = cells[li * tasks_per_length + ti].*field - mean;
      var += d * d;
    }
    double se = tasks_per_length > 1
                    ? std::sqrt(var / static_cast<double>(tasks_per_length - 1) /
                                static_cast<double>(tasks_per_length))
                    : 0.0;
    result.rows.push_back(
        {lengths[li], metric, predictor, target, mean, se, tasks_per_length});
  };
  for (std::size_t li = 0; li < lengths.size(); ++li) {
    emit(li, "cosine", "one_step_head", "sigma_wu_u", &Cell::cos_single);
    emit(li, "mse", "one_step_head", "sigma_wu_u", &Cell::mse_single);
    emit(li, "target_msq", "one_step_head", "sigma_wu_u", &Cell::msq_single_target);
    emit(li, "cosine", "stack", "b_k_u", &Cell::cos_stack_gd);
    emit(li, "mse", "stack", "b_k_u", &Cell::mse_stack_gd);
    emit(li, "target_msq", "stack", "b_k_u", &Cell::msq_gd_target);
    emit(li, "cosine", "stack", "b_star_u", &Cell::cos_stack_bayes);
    emit(li, "mse", "stack", "b_star_u", &Cell::mse_stack_bayes);
    emit(li, "target_msq", "stack", "b_star_u", &Cell::msq_bayes_target);
  }
  for (const Cell& c : cells)
    if (!c.contraction_ok) ++result.gd_contraction_violations;
  return result;
}

}  // namespace crl
