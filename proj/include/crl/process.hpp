#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "crl/matrix.hpp"
#include "crl/rng.hpp"

namespace crl {

struct UnsupportedRadial : Error {
  using Error::Error;
};

/// Law of the isotropic driver Z: standard Gaussian, or sqrt(d) times a
/// uniform point on the unit sphere. Both are centered with identity
/// covariance.
enum class RadialLaw { GaussianZ, SphereZ };

/// Second-order model of the token marginal: an SPD covariance together with
/// a factor B such that B B^T = sigma. The default factor is the Cholesky
/// factor, but any square root may be supplied.
class CovarianceModel {
 public:
  CovarianceModel() = default;

  static CovarianceModel from_matrix(const Matrix& sigma) {
    CovarianceModel c;
    c.sigma_ = cholesky(sigma);
    c.factor_ = c.sigma_.chol();
    return c;
  }

  static CovarianceModel identity(std::size_t d) { return from_matrix(Matrix::identity(d)); }

  static CovarianceModel from_factor(const Matrix& b) {
    if (b.rows() != b.cols()) throw DimensionMismatch("covariance factor must be square");
    Matrix sigma(b.rows(), b.rows());
    for (std::size_t i = 0; i < b.rows(); ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < b.cols(); ++k) s += b(i, k) * b(j, k);
        sigma(i, j) = s;
        sigma(j, i) = s;
      }
    CovarianceModel c;
    c.sigma_ = cholesky(sigma);  // also certifies that b is invertible
    c.factor_ = b;
    return c;
  }

  const SpdMatrix& sigma() const { return sigma_; }
  const Matrix& factor() const { return factor_; }
  std::size_t dim() const { return sigma_.dim(); }
  double trace() const { return sigma_.trace(); }

  Vector apply_sigma(const Vector& v) const { return sigma_.base() * v; }
  Vector apply_factor(const Vector& z) const { return factor_ * z; }

 private:
  SpdMatrix sigma_;
  Matrix factor_;
};

struct Dependence {
  enum class Kind { Iid, Var1 };
  Kind kind = Kind::Iid;
  double rho = 0.0;

  static Dependence iid() { return {}; }
  static Dependence var1(double rho) {
    if (!(std::abs(rho) < 1.0)) throw Error("var1: |rho| must be < 1");
    return {Kind::Var1, rho};
  }
};

/// Generative law of a token stream: elliptical marginal B Z with the chosen
/// radial driver, either i.i.d. in time or a stationary VAR(1) recursion.
struct ProcessSpec {
  std::size_t dim = 0;
  CovarianceModel covariance;
  RadialLaw radial = RadialLaw::GaussianZ;
  Dependence dependence;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim == 0 || covariance.dim() != dim)
      throw DimensionMismatch("process spec: covariance dimension mismatch");
    if (dependence.kind == Dependence::Kind::Var1 && radial != RadialLaw::GaussianZ)
      throw UnsupportedRadial("var1 requires the Gaussian radial law");
  }

  ProcessSpec with_seed(std::uint64_t s) const {
    ProcessSpec out = *this;
    out.seed = s;
    return out;
  }
};

inline ProcessSpec make_process(CovarianceModel cov, RadialLaw radial, Dependence dep,
                                std::uint64_t seed) {
  ProcessSpec spec;
  spec.dim = cov.dim();
  spec.covariance = std::move(cov);
  spec.radial = radial;
  spec.dependence = dep;
  spec.seed = seed;
  spec.validate();
  return spec;
}

struct TokenStream {
  ProcessSpec spec;
  std::vector<Vector> tokens;
};

/// Draws Z into z: standard normal coordinates, or a uniform sphere point
/// rescaled so that |z|^2 = d exactly.
inline void draw_radial(Rng& rng, RadialLaw law, Vector& z) {
  rng.normal_fill(z);
  if (law == RadialLaw::SphereZ) {
    double n = norm(z);
    while (n < 1e-300) {  // never happens in practice; keeps the map total
      rng.normal_fill(z);
      n = norm(z);
    }
    double c = std::sqrt(static_cast<double>(z.size())) / n;
    for (double& x : z) x *= c;
  }
}

/// One marginal draw x = B z. Each call consumes exactly dim normal deviates
/// (plus rejections for the sphere law, which have probability zero).
inline Vector next_elliptical(Rng& rng, const ProcessSpec& spec, Vector& z_buf) {
  draw_radial(rng, spec.radial, z_buf);
  return spec.covariance.apply_factor(z_buf);
}

/// n i.i.d. elliptical tokens. Deterministic given spec.seed.
inline TokenStream sample_elliptical(const ProcessSpec& spec, std::size_t n) {
  spec.validate();
  if (spec.dependence.kind != Dependence::Kind::Iid)
    throw Error("sample_elliptical: spec must be i.i.d.");
  Rng rng(spec.seed);
  TokenStream out{spec, {}};
  out.tokens.reserve(n);
  Vector z(spec.dim);
  for (std::size_t j = 0; j < n; ++j) out.tokens.push_back(next_elliptical(rng, spec, z));
  return out;
}

/// Stationary Gaussian VAR(1): x_1 ~ N(0, Sigma), then
/// x_{j+1} = rho x_j + sqrt(1 - rho^2) B eps_j. The stationary marginal
/// covariance is exactly Sigma and every coordinate has lag-1
/// autocorrelation rho. At rho = 0 the draw sequence coincides with
/// sample_elliptical under the same seed.
inline TokenStream sample_var1(const ProcessSpec& spec, std::size_t n) {
  spec.validate();
  if (spec.dependence.kind != Dependence::Kind::Var1)
    throw Error("sample_var1: spec must be var1");
  if (spec.radial != RadialLaw::GaussianZ)
    throw UnsupportedRadial("sample_var1: only the Gaussian radial law is closed under VAR(1)");
  double rho = spec.dependence.rho;
  double innov = std::sqrt(1.0 - rho * rho);
  Rng rng(spec.seed);
  TokenStream out{spec, {}};
  out.tokens.reserve(n);
  Vector z(spec.dim);
  for (std::size_t j = 0; j < n; ++j) {
    Vector shock = next_elliptical(rng, spec, z);
    if (j == 0) {
      out.tokens.push_back(std::move(shock));
    } else {
      const Vector& prev = out.tokens.back();
      Vector x(spec.dim);
      for (std::size_t i = 0; i < spec.dim; ++i) x[i] = rho * prev[i] + innov * shock[i];
      out.tokens.push_back(std::move(x));
    }
  }
  return out;
}

inline TokenStream sample_stream(const ProcessSpec& spec, std::size_t n) {
  return spec.dependence.kind == Dependence::Kind::Iid ? sample_elliptical(spec, n)
                                                       : sample_var1(spec, n);
}

/// Visits n draws from the marginal law of the process without materializing
/// a stream. Used by Monte-Carlo estimators of population functionals.
template <class F>
void for_each_marginal_sample(const ProcessSpec& spec, std::size_t n, std::uint64_t seed, F&& f) {
  spec.validate();
  Rng rng(seed);
  Vector z(spec.dim);
  for (std::size_t j = 0; j < n; ++j) f(next_elliptical(rng, spec, z));
}

/// Haar-ish orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
inline Matrix random_rotation(std::size_t d, Rng& rng) {
  Matrix q(d, d);
  for (double& x : q.data()) x = rng.normal();
  // Modified Gram-Schmidt on columns.
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += q(i, j) * q(i, k);
      for (std::size_t i = 0; i < d; ++i) q(i, j) -= s * q(i, k);
    }
    double n = 0.0;
    for (std::size_t i = 0; i < d; ++i) n += q(i, j) * q(i, j);
    n = std::sqrt(n);
    for (std::size_t i = 0; i < d; ++i) q(i, j) /= n;
  }
  return q;
}

}  // namespace crl
