#include <catch_amalgamated.hpp>

#include "crl/theory.hpp"
#include "oracles.hpp"

using namespace crl;

TEST_CASE("gaussian tilted mean closed form") {
  CovarianceModel id4 = CovarianceModel::identity(4);
  Vector zero = gaussian_tilted_mean(id4, Vector(4, 0.0), 4);
  CHECK(norm(zero) == 0.0);

  // Sigma = I, d_k = 4: p / 2.
  Vector p = {1.0, -2.0, 0.5, 3.0};
  Vector m = gaussian_tilted_mean(id4, p, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(m[i] == Catch::Approx(p[i] / 2.0).epsilon(1e-15));

  // Sigma = diag(4, 1), p = (1, 1), d_k = 4: (2, 0.5).
  CovarianceModel diag = CovarianceModel::from_matrix(Matrix::diagonal({4.0, 1.0}));
  Vector m2 = gaussian_tilted_mean(diag, Vector{1.0, 1.0}, 4);
  CHECK(m2[0] == Catch::Approx(2.0).epsilon(1e-15));
  CHECK(m2[1] == Catch::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("monte-carlo tilted mean against the closed form") {
  // diag(4,1) case from the closed-form test, 1e6 samples, 1% relative.
  CovarianceModel diag = CovarianceModel::from_matrix(Matrix::diagonal({4.0, 1.0}));
  ProcessSpec spec = make_process(diag, RadialLaw::GaussianZ, Dependence::iid(), 606);
  Vector mc = mc_tilted_mean(spec, Vector{1.0, 1.0}, 4, 1000000);
  Vector cf = gaussian_tilted_mean(diag, Vector{1.0, 1.0}, 4);
  CHECK(std::sqrt(sq_dist(mc, cf)) / norm(cf) <= 0.01);

  // p = 0: the empirical mean obeys a CLT envelope.
  Vector m0 = mc_tilted_mean(spec, Vector{0.0, 0.0}, 4, 1000000);
  CHECK(norm(m0) <= 5.0 * std::sqrt(diag.trace() / 1e6));

  // Sharding layout is fixed, so results are reproducible across workers.
  Vector mc1 = mc_tilted_mean(spec, Vector{1.0, 1.0}, 4, 200000, 16, 1);
  Vector mc2 = mc_tilted_mean(spec, Vector{1.0, 1.0}, 4, 200000, 16, 2);
  CHECK(sq_dist(mc1, mc2) == 0.0);
}

TEST_CASE("sphere law tilted mean points along the tilt by symmetry") {
  std::size_t d = 8;
  ProcessSpec spec =
      make_process(CovarianceModel::identity(d), RadialLaw::SphereZ, Dependence::iid(), 701);
  Vector e1(d, 0.0);
  e1[0] = 1.0;
  Vector m = mc_tilted_mean(spec, e1, d, 1000000);
  CHECK(cosine(m, e1) >= 0.99);
}

TEST_CASE("rotational equivariance of the tilted-mean map") {
  std::size_t d = 8;
  ProcessSpec spec =
      make_process(CovarianceModel::identity(d), RadialLaw::GaussianZ, Dependence::iid(), 702);
  Rng rng(19);
  Matrix r = random_rotation(d, rng);
  Vector p(d);
  for (double& x : p) x = rng.normal();
  double scale = std::sqrt(0.5 * d / dot(p, p));
  for (double& x : p) x *= scale;
  Vector rp = r * p;
  Vector lhs = mc_tilted_mean(spec.with_seed(703), rp, d, 1000000);
  Vector rhs = r * mc_tilted_mean(spec.with_seed(704), p, d, 1000000);
  CHECK(cosine(lhs, rhs) >= 0.99);
}

TEST_CASE("B-invariance: the tilted mean depends on B only through Sigma") {
  std::size_t d = 4;
  Rng rng(23);
  Matrix sigma = oracles::random_spd(d, rng);
  CovarianceModel c1 = CovarianceModel::from_matrix(sigma);
  Matrix rot = random_rotation(d, rng);
  CovarianceModel c2 = CovarianceModel::from_factor(c1.factor() * rot);
  CHECK(frobenius_norm(c2.sigma().base() - sigma) <= 1e-9 * frobenius_norm(sigma));

  Vector p(d);
  for (double& x : p) x = rng.normal();
  double scale = std::sqrt(0.5 * d / dot(p, c1.apply_sigma(p)));
  for (double& x : p) x *= scale;

  ProcessSpec s1 = make_process(c1, RadialLaw::GaussianZ, Dependence::iid(), 801);
  ProcessSpec s2 = make_process(c2, RadialLaw::GaussianZ, Dependence::iid(), 802);
  Vector m1 = mc_tilted_mean(s1, p, d, 1000000);
  Vector m2 = mc_tilted_mean(s2, p, d, 1000000);
  CHECK(std::sqrt(sq_dist(m1, m2)) / norm(m1) <= 0.03);
  CHECK(cosine(m1, m2) >= 0.999);
}

TEST_CASE("readout matrix block structure and brute force") {
  // Selector heads pick out the cross-covariance block.
  std::size_t d_u = 3, d_w = 2, d = d_u + d_w;
  Matrix s_u(d_u, d), s_w(d_w, d);
  for (std::size_t i = 0; i < d_u; ++i) s_u(i, i) = 1.0;
  for (std::size_t i = 0; i < d_w; ++i) s_w(i, d_u + i) = 1.0;
  Rng rng(31);
  Matrix sigma = oracles::random_spd(d, rng);
  CovarianceModel cov = CovarianceModel::from_matrix(sigma);
  AttentionParams head = make_attention_params(s_u, s_u, s_w);
  Matrix ro = readout_matrix(head, cov);
  // Acting on a token (u, 0), the readout reduces to the cross-covariance
  // block Sigma_wu applied to u; the target-slot columns vanish.
  REQUIRE(ro.rows() == d_w);
  REQUIRE(ro.cols() == d);
  for (std::size_t i = 0; i < d_w; ++i) {
    for (std::size_t j = 0; j < d_u; ++j)
      CHECK(ro(i, j) == Catch::Approx(sigma(d_u + i, j)).epsilon(1e-13));
    for (std::size_t j = d_u; j < d; ++j) CHECK(ro(i, j) == 0.0);
  }

  // Identity everything.
  AttentionParams id = make_attention_params(Matrix::identity(2), Matrix::identity(2),
                                             Matrix::identity(2));
  Matrix r2 = readout_matrix(id, CovarianceModel::identity(2));
  CHECK(frobenius_norm(r2 - Matrix::identity(2)) == 0.0);

  // Random 2x2 factors against a direct triple product.
  Matrix tq(2, 2), tk(2, 2), tv(2, 2);
  for (double& x : tq.data()) x = rng.normal();
  for (double& x : tk.data()) x = rng.normal();
  for (double& x : tv.data()) x = rng.normal();
  Matrix sig2 = oracles::random_spd(2, rng);
  Matrix direct = tv * (sig2 * (tk.transposed() * tq));
  Matrix got = readout_matrix(make_attention_params(tq, tk, tv),
                              CovarianceModel::from_matrix(sig2));
  CHECK(frobenius_norm(direct - got) <= 1e-12 * frobenius_norm(direct));
}

TEST_CASE("extract_gamma") {
  std::size_t d = 5;
  Rng rng(37);
  Matrix sigma = oracles::random_spd(d, rng);
  CovarianceModel cov = CovarianceModel::from_matrix(sigma);
  Vector p(d);
  for (double& x : p) x = rng.normal();

  // Gaussian pathway: exactly 1/sqrt(d_k).
  for (std::size_t d_k : {1ul, 4ul, 16ul}) {
    Vector m = gaussian_tilted_mean(cov, p, d_k);
    double gamma = extract_gamma(m, cov, p);
    CHECK(gamma == Catch::Approx(1.0 / std::sqrt(static_cast<double>(d_k))).epsilon(1e-14));
  }

  // Linearity in the mean.
  Vector m = gaussian_tilted_mean(cov, p, 4);
  double g1 = extract_gamma(m, cov, p);
  double g2 = extract_gamma(scaled(m, 3.0), cov, p);
  CHECK(g2 == Catch::Approx(3.0 * g1).epsilon(1e-13));

  CHECK_THROWS_AS(extract_gamma(m, cov, Vector(d, 0.0)), DegenerateDirection);

  // Sphere law: positive scalar with small collinearity residual.
  ProcessSpec sph =
      make_process(CovarianceModel::identity(8), RadialLaw::SphereZ, Dependence::iid(), 901);
  Vector e1(8, 0.0);
  e1[0] = 1.0;
  Vector mc = mc_tilted_mean(sph, e1, 8, 1000000);
  double gamma = extract_gamma(mc, CovarianceModel::identity(8), e1);
  CHECK(gamma > 0.0);
  Vector resid = mc - scaled(e1, gamma);
  CHECK(norm(resid) / norm(mc) <= 0.05);
}

TEST_CASE("alignment report") {
  Vector target = {3.0, 4.0};
  AlignmentReport same = alignment(target, target);
  CHECK(same.cosine == 1.0);
  CHECK(same.one_minus_cos == 0.0);
  CHECK(same.mse == 0.0);
  CHECK(same.target_norm == 5.0);

  AlignmentReport twice = alignment(scaled(target, 2.0), target);
  CHECK(twice.cosine == 1.0);
  CHECK(twice.mse == Catch::Approx(25.0).epsilon(1e-14));

  // Perturbation of 0.6 |target| keeps cosine at least 0.8.
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    Vector e(2);
    for (double& x : e) x = rng.normal();
    double c = 0.6 * norm(target) / norm(e);
    for (double& x : e) x *= c;
    AlignmentReport r = alignment(target + e, target);
    CHECK(r.cosine >= 0.8 - 1e-12);
    CHECK(r.one_minus_cos == Catch::Approx(1.0 - r.cosine).margin(1e-15));
  }

  CHECK_THROWS_AS(alignment(target, Vector{0.0, 0.0}), ZeroTarget);
}

TEST_CASE("tilted second moment diagnostic") {
  // p = 0: the ratio is 1 up to sampling error.
  std::size_t d = 6;
  Rng rng(43);
  CovarianceModel cov = CovarianceModel::from_matrix(oracles::random_spd(d, rng));
  ProcessSpec spec = make_process(cov, RadialLaw::GaussianZ, Dependence::iid(), 1001);
  double r0 = tilted_second_moment_check(spec, Vector(d, 0.0), d, 400000);
  CHECK(r0 == Catch::Approx(1.0).margin(0.05));

  // Gaussian on the cone boundary: ratios across dimensions stay within a
  // factor 2 of each other (dimension-free boundedness).
  std::vector<double> ratios;
  for (std::size_t dim : {4ul, 16ul, 64ul}) {
    ProcessSpec s = make_process(CovarianceModel::identity(dim), RadialLaw::GaussianZ,
                                 Dependence::iid(), 1100 + dim);
    Vector p(dim, 0.0);
    p[0] = std::sqrt(static_cast<double>(dim));  // p^T Sigma p = d_k exactly
    ratios.push_back(tilted_second_moment_check(s, p, dim, 400000));
  }
  for (double a : ratios)
    for (double b : ratios) CHECK(a / b <= 2.0);

  // Sphere law: deterministic envelope from |x| <= |B|_op sqrt(d).
  std::size_t ds = 8;
  ProcessSpec sph =
      make_process(CovarianceModel::identity(ds), RadialLaw::SphereZ, Dependence::iid(), 1200);
  Vector p(ds, 0.0);
  p[0] = std::sqrt(static_cast<double>(ds));
  double ratio = tilted_second_moment_check(sph, p, ds, 200000);
  double envelope = static_cast<double>(ds) / static_cast<double>(ds) *
                    std::exp(2.0 * std::sqrt(static_cast<double>(ds)));
  CHECK(ratio > 0.0);
  CHECK(ratio <= envelope);
}

TEST_CASE("random head calibration hits the requested cone fraction") {
  std::size_t d = 16, d_k = 8;
  Rng rng(47);
  CovarianceModel cov = CovarianceModel::from_matrix(oracles::random_spd(d, rng));
  AttentionParams head = random_head(d, d_k, d, cov, 0.5, 31337);
  // Average the realized quadratic form over many tokens.
  ProcessSpec spec = make_process(cov, RadialLaw::GaussianZ, Dependence::iid(), 1300);
  double acc = 0.0;
  std::size_t n = 20000;
  for_each_marginal_sample(spec, n, spec.seed, [&](const Vector& x) {
    Vector q = head.theta_q * x;
    Vector p = tmatvec(head.theta_k, q);
    acc += dot(p, cov.apply_sigma(p));
  });
  acc /= static_cast<double>(n) * static_cast<double>(d_k);
  CHECK(acc == Catch::Approx(0.5).margin(0.05));
}

TEST_CASE("gaussian readout target bundle") {
  std::size_t d = 6, d_k = 3;
  Rng rng(53);
  CovarianceModel cov = CovarianceModel::from_matrix(oracles::random_spd(d, rng));
  AttentionParams head = random_head(d, d_k, d, cov, 0.4, 99);
  Vector q(d_k);
  for (double& x : q) x = rng.normal();
  ReadoutTarget target = gaussian_readout_target(head, cov, q);
  CHECK(target.gamma == Catch::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-12));
  Vector p = tmatvec(head.theta_k, q);
  Vector expect = scaled(cov.apply_sigma(p), target.gamma);
  CHECK(std::sqrt(sq_dist(target.tilted_mean, expect)) <= 1e-12);
}
