#pragma once

#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "crl/matrix.hpp"
#include "crl/parallel.hpp"
#include "crl/process.hpp"

namespace crl {

struct EmptyContext : Error {
  using Error::Error;
};
struct EmptyCheckpoints : Error {
  using Error::Error;
};

/// Frozen weights of one causal softmax attention head.
struct AttentionParams {
  Matrix theta_q;  // d_k x d
  Matrix theta_k;  // d_k x d
  Matrix theta_v;  // d_v x d
  std::size_t d_k = 0;

  std::size_t input_dim() const { return theta_q.cols(); }
  std::size_t output_dim() const { return theta_v.rows(); }

  void validate() const {
    if (theta_q.rows() != theta_k.rows() || theta_q.rows() != d_k)
      throw DimensionMismatch("attention params: query/key row count must equal d_k");
    if (theta_q.cols() != theta_k.cols() || theta_q.cols() != theta_v.cols())
      throw DimensionMismatch("attention params: column counts must agree");
  }
};

inline AttentionParams make_attention_params(Matrix theta_q, Matrix theta_k, Matrix theta_v) {
  AttentionParams p{std::move(theta_q), std::move(theta_k), std::move(theta_v), 0};
  p.d_k = p.theta_q.rows();
  p.validate();
  return p;
}

namespace detail {

/// Softmax-weighted mean of tokens with scores dot(tilt, x_j), computed with
/// max-subtracted exponentials. tilt already carries the 1/sqrt(d_k) scale.
inline Vector tilted_mean(std::span<const Vector> tokens, const Vector& tilt) {
  if (tokens.empty()) throw EmptyContext("tilted mean of empty context");
  std::size_t d = tokens.front().size();
  if (tilt.size() != d) throw DimensionMismatch("tilted mean: tilt dimension");
  double max_s = -std::numeric_limits<double>::infinity();
  std::vector<double> scores(tokens.size());
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    scores[j] = dot(tilt, tokens[j]);
    if (scores[j] > max_s) max_s = scores[j];
  }
  Vector num(d, 0.0);
  double den = 0.0;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    double w = std::exp(scores[j] - max_s);
    den += w;
    const Vector& x = tokens[j];
    for (std::size_t i = 0; i < d; ++i) num[i] += w * x[i];
  }
  for (double& x : num) x /= den;
  return num;
}

}  // namespace detail

/// Exponentially tilted empirical mean of the context tokens at query q:
/// weights are softmax of q^T Theta_K x_j / sqrt(d_k). The output lies in the
/// convex hull of the tokens.
inline Vector barycenter(std::span<const Vector> tokens, const Vector& q, const Matrix& theta_k,
                         std::size_t d_k) {
  if (tokens.empty()) throw EmptyContext("barycenter: empty context");
  if (q.size() != theta_k.rows()) throw DimensionMismatch("barycenter: query dimension");
  if (theta_k.cols() != tokens.front().size())
    throw DimensionMismatch("barycenter: token dimension");
  Vector tilt = tmatvec(theta_k, q);  // p = Theta_K^T q
  double inv = 1.0 / std::sqrt(static_cast<double>(d_k));
  for (double& x : tilt) x *= inv;
  return detail::tilted_mean(tokens, tilt);
}

/// Causal single-head attention: for every position t,
/// y_t = Theta_V * barycenter(tokens[1..t], Theta_Q x_t). All positions are
/// computed in one call with O(t^2 d) work and O(d) extra space per position.
inline std::vector<Vector> causal_head(const AttentionParams& params,
                                       std::span<const Vector> tokens, int workers = 1) {
  params.validate();
  if (tokens.empty()) throw EmptyContext("causal_head: empty context");
  if (tokens.front().size() != params.input_dim())
    throw DimensionMismatch("causal_head: token dimension");
  std::vector<Vector> out(tokens.size());
  parallel_for(tokens.size(), workers, [&](std::size_t t) {
    Vector q = params.theta_q * tokens[t];
    Vector xbar = barycenter(tokens.subspan(0, t + 1), q, params.theta_k, params.d_k);
    out[t] = params.theta_v * xbar;
  });
  return out;
}

/// One-pass accumulator for prefix barycenters at a fixed tilt. Maintains the
/// running maximum score and rescales the tilted numerator and denominator
/// whenever a new score exceeds it, so streams of any length stay in range.
class PrefixBarycenter {
 public:
  /// tilt must already include the 1/sqrt(d_k) scale.
  explicit PrefixBarycenter(Vector tilt)
      : tilt_(std::move(tilt)), num_(tilt_.size(), 0.0) {}

  static PrefixBarycenter for_query(const Vector& q, const Matrix& theta_k, std::size_t d_k) {
    if (q.size() != theta_k.rows()) throw DimensionMismatch("prefix barycenter: query dimension");
    Vector tilt = tmatvec(theta_k, q);
    double inv = 1.0 / std::sqrt(static_cast<double>(d_k));
    for (double& x : tilt) x *= inv;
    return PrefixBarycenter(std::move(tilt));
  }

  void push(const Vector& x) {
    double s = dot(tilt_, x);
    if (count_ == 0 || s > max_) {
      if (count_ > 0) {
        double c = std::exp(max_ - s);
        for (double& v : num_) v *= c;
        den_ *= c;
      }
      max_ = s;
    }
    double w = std::exp(s - max_);
    for (std::size_t i = 0; i < num_.size(); ++i) num_[i] += w * x[i];
    den_ += w;
    ++count_;
  }

  std::size_t count() const { return count_; }

  Vector value() const {
    if (count_ == 0) throw EmptyContext("prefix barycenter: no tokens pushed");
    Vector v = num_;
    for (double& x : v) x /= den_;
    return v;
  }

  /// Merges another accumulator over the same tilt (used by sharded
  /// Monte-Carlo estimators). Equivalent to pushing the other shard's tokens.
  void merge(const PrefixBarycenter& other) {
    if (other.count_ == 0) return;
    if (count_ == 0) {
      *this = other;
      return;
    }
    double m = std::max(max_, other.max_);
    double c_self = std::exp(max_ - m);
    double c_other = std::exp(other.max_ - m);
    for (std::size_t i = 0; i < num_.size(); ++i)
      num_[i] = num_[i] * c_self + other.num_[i] * c_other;
    den_ = den_ * c_self + other.den_ * c_other;
    max_ = m;
    count_ += other.count_;
  }

 private:
  Vector tilt_;
  double max_ = 0.0;
  Vector num_;
  double den_ = 0.0;
  std::size_t count_ = 0;
};

/// Prefix barycenters of a stream at a fixed query, emitted at the requested
/// checkpoints. Single pass, cost linear in the stream length.
inline std::vector<std::pair<std::size_t, Vector>> streaming_prefix_barycenter(
    const TokenStream& stream, const Vector& q, const Matrix& theta_k, std::size_t d_k,
    std::span<const std::size_t> checkpoints) {
  if (checkpoints.empty()) throw EmptyCheckpoints("streaming_prefix_barycenter: no checkpoints");
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    if (checkpoints[c] < 1 || checkpoints[c] > stream.tokens.size())
      throw Error("streaming_prefix_barycenter: checkpoint out of range");
    if (c > 0 && checkpoints[c] <= checkpoints[c - 1])
      throw Error("streaming_prefix_barycenter: checkpoints must be strictly increasing");
  }
  PrefixBarycenter acc = PrefixBarycenter::for_query(q, theta_k, d_k);
  std::vector<std::pair<std::size_t, Vector>> out;
  out.reserve(checkpoints.size());
  std::size_t next = 0;
  for (std::size_t j = 0; j < stream.tokens.size() && next < checkpoints.size(); ++j) {
    acc.push(stream.tokens[j]);
    if (j + 1 == checkpoints[next]) {
      out.emplace_back(j + 1, acc.value());
      ++next;
    }
  }
  return out;
}

}  // namespace crl
