#include <catch_amalgamated.hpp>

#include "crl/icl.hpp"
#include "oracles.hpp"

using namespace crl;

TEST_CASE("make_task shape and protocol guarantees") {
  PromptTask task = make_task(16, 4, 513, 12345);
  CHECK(task.d_u + task.d_w == 20);
  CHECK(task.demos.size() == 512);
  CHECK(task.query_u.size() == 16);

  // Diagonal prior keeps every eigenvalue at most 1, so eta = 1e-2 is stable.
  double lam_max = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    double v = task.sigma_uu.base()(i, i);
    CHECK(v >= 0.25);
    CHECK(v <= 1.0);
    lam_max = std::max(lam_max, v);
    for (std::size_t j = 0; j < 16; ++j)
      if (i != j) CHECK(task.sigma_uu.base()(i, j) == 0.0);
  }
  CHECK(1e-2 < 2.0 / lam_max);

  // Noise-free demonstrations: w = beta^T u exactly.
  for (const auto& [u, w] : task.demos) {
    Vector expect = tmatvec(task.beta, u);
    CHECK(std::sqrt(sq_dist(w, expect)) <= 1e-12);
  }

  CHECK_THROWS_AS(make_task(4, 2, 1, 1), Error);
}

TEST_CASE("one_step_head hand-computable two-token case") {
  // d_u = d_w = 1, one demonstration (u1, w1), query u2.
  PromptTask task;
  task.d_u = 1;
  task.d_w = 1;
  task.sigma_uu = cholesky(Matrix(1, 1, {0.5}));
  task.beta = Matrix(1, 1, {1.7});
  double u1 = 0.8, u2 = -0.6;
  task.demos.emplace_back(Vector{u1}, Vector{1.7 * u1});
  task.query_u = Vector{u2};

  Vector got = one_step_head(task);
  // Softmax over scores (u2 u1, u2 u2) picks the demo weight a1; the query
  // token carries a zero target slot. Output is rescaled by sqrt(d_u) = 1.
  double s1 = u2 * u1, s2 = u2 * u2;
  double a1 = std::exp(s1) / (std::exp(s1) + std::exp(s2));
  CHECK(got[0] == Catch::Approx(a1 * 1.7 * u1).epsilon(1e-12));
}

TEST_CASE("one_step_head zero task") {
  PromptTask task = make_task(4, 2, 33, 777);
  task.beta = Matrix(4, 2);  // beta = 0 makes every target zero
  for (auto& [u, w] : task.demos) w = Vector(2, 0.0);
  Vector out = one_step_head(task);
  CHECK(norm(out) == 0.0);
}

TEST_CASE("gd_iterate closed forms") {
  Matrix sig = Matrix::diagonal({0.5, 1.0});
  Matrix swu(1, 2, {0.3, -0.2});

  // eta = 1, one step: B^(1) = Sigma_wu.
  GdTrace one = gd_iterate(sig, swu, 1.0, 1);
  CHECK(frobenius_norm(one.iterates[0]) == 0.0);
  CHECK(frobenius_norm(one.iterates[1] - swu) == 0.0);

  // eta = 0: all iterates zero.
  GdTrace frozen = gd_iterate(sig, swu, 0.0, 5);
  for (const Matrix& b : frozen.iterates) CHECK(frobenius_norm(b) == 0.0);

  // Scalar case: B^(k) = b (1 - (1 - eta)^k).
  double b = -1.3, eta = 0.2;
  GdTrace scalar = gd_iterate(Matrix(1, 1, {1.0}), Matrix(1, 1, {b}), eta, 12);
  for (std::size_t k = 0; k <= 12; ++k) {
    double expect = b * (1.0 - std::pow(1.0 - eta, static_cast<double>(k)));
    CHECK(scalar.iterates[k](0, 0) == Catch::Approx(expect).margin(1e-14));
  }
}

TEST_CASE("gd contraction bound holds exactly on random tasks") {
  for (int trial = 0; trial < 100; ++trial) {
    PromptTask task = make_task(8, 3, 4, split_seed(31415, trial));
    Matrix swu = sigma_wu(task);
    double eta = 0.05;
    GdTrace trace = gd_iterate(task.sigma_uu.base(), swu, eta, 10);
    Matrix b_star = task.beta.transposed();
    double rate = 0.0;
    for (std::size_t i = 0; i < 8; ++i)
      rate = std::max(rate, std::abs(1.0 - eta * task.sigma_uu.base()(i, i)));
    double b_norm = frobenius_norm(b_star);
    for (std::size_t k = 0; k < trace.iterates.size(); ++k) {
      double lhs = frobenius_norm(trace.iterates[k] - b_star);
      double rhs = std::pow(rate, static_cast<double>(k)) * b_norm;
      CHECK(lhs <= rhs * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("residual stack against the layered reference implementation") {
  StackConfig cfg{3, 0.05, 6, 2};
  PromptTask task = make_task(6, 2, 24, 999);
  oracles::ReferenceStackResult ref = oracles::reference_stack(task, cfg);
  Vector fast = residual_stack_forward(task, cfg);
  CHECK(std::sqrt(sq_dist(fast, ref.prediction)) <= 1e-12);

  // Covariate slots are never mutated by any block.
  for (const auto& level : ref.states)
    for (std::size_t j = 0; j < level.size(); ++j)
      for (std::size_t i = 0; i < task.d_u; ++i)
        CHECK(level[j][i] == ref.states[0][j][i]);

  // Residual initialization: r^(0) = w for demos, 0 at the query.
  for (std::size_t j = 0; j < task.demos.size(); ++j)
    for (std::size_t m = 0; m < task.d_w; ++m)
      CHECK(ref.states[0][j][task.d_u + m] == task.demos[j].second[m]);
  for (std::size_t m = 0; m < task.d_w; ++m)
    CHECK(ref.states[0].back()[task.d_u + m] == 0.0);
}

TEST_CASE("K = 1 stack equals eta times the single head") {
  PromptTask task = make_task(5, 3, 17, 2718);
  StackConfig cfg{1, 0.3, 5, 3};
  Vector stack = residual_stack_forward(task, cfg);
  Vector head = one_step_head(task);
  for (std::size_t m = 0; m < 3; ++m)
    CHECK(stack[m] == Catch::Approx(cfg.step * head[m]).margin(1e-12));
}

TEST_CASE("eta = 0 stack predicts zero") {
  PromptTask task = make_task(4, 2, 9, 5);
  StackConfig cfg{4, 0.0, 4, 2};
  CHECK(norm(residual_stack_forward(task, cfg)) == 0.0);
}

TEST_CASE("bayes predictor equals beta^T u via algebraic cancellation") {
  for (int trial = 0; trial < 20; ++trial) {
    PromptTask task = make_task(7, 3, 5, split_seed(161803, trial));
    Vector bayes = bayes_predictor(task);
    Vector direct = tmatvec(task.beta, task.query_u);
    CHECK(std::sqrt(sq_dist(bayes, direct)) <= 1e-10 * std::max(1.0, norm(direct)));
  }
}

TEST_CASE("icl sweep table structure and determinism") {
  StackConfig cfg{2, 0.05, 4, 2};
  std::vector<std::size_t> lengths = {4, 16};
  IclSweepResult a = run_icl_sweep(lengths, 8, cfg, 424242, 1);
  IclSweepResult b = run_icl_sweep(lengths, 8, cfg, 424242, 2);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].mean == b.rows[i].mean);
    CHECK(a.rows[i].stderr_ == b.rows[i].stderr_);
    CHECK(a.rows[i].n_tasks == 8);
  }
  CHECK(a.gd_contraction_violations == 0);

  // Single-task degenerate sweep: means equal the single-task metrics.
  IclSweepResult single = run_icl_sweep(std::vector<std::size_t>{6}, 1, cfg, 3131, 1);
  PromptTask task = make_task(4, 2, 7, split_seed(3131, 0));
  Vector target = sigma_wu(task) * task.query_u;
  Vector head = one_step_head(task);
  for (const IclSweepRow& r : single.rows) {
    CHECK(r.stderr_ == 0.0);
    if (r.metric == "cosine" && r.predictor == "one_step_head")
      CHECK(r.mean == Catch::Approx(cosine(head, target)).epsilon(1e-14));
    if (r.metric == "mse" && r.predictor == "one_step_head")
      CHECK(r.mean == Catch::Approx(sq_dist(head, target)).epsilon(1e-14));
  }

  CHECK_THROWS_AS(run_icl_sweep(std::vector<std::size_t>{8, 4}, 4, cfg, 1, 1), Error);
}

TEST_CASE("icl sweep cosine trend over growing context") {
  StackConfig cfg{1, 0.01, 8, 2};
  std::vector<std::size_t> lengths = {8, 32, 128, 512};
  IclSweepResult sweep = run_icl_sweep(lengths, 96, cfg, 112233, 2);
  std::vector<double> cos_means;
  for (const IclSweepRow& r : sweep.rows)
    if (r.metric == "cosine" && r.predictor == "one_step_head") cos_means.push_back(r.mean);
  REQUIRE(cos_means.size() == lengths.size());
  for (std::size_t i = 1; i < cos_means.size(); ++i) CHECK(cos_means[i] > cos_means[i - 1] - 0.02);
  CHECK(cos_means.back() > 0.9);
}
