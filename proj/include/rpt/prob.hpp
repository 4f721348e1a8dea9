#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rpt/rng.hpp"

namespace rpt {

// Shared validation tolerance: a distribution's mass must be 1 within this.
inline constexpr double kProbTol = 1e-12;

// Conditioning on an event of zero probability.
struct degenerate_conditioning_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Vocab {
  int size = 0;
  explicit Vocab(int v) : size(v) {
    if (v < 2) throw std::invalid_argument("Vocab: size must be at least 2");
  }
};

// Immutable probability vector over a vocabulary. All entries are
// non-negative and finite and sum to 1 within kProbTol.
class Distribution {
 public:
  Distribution() = default;
  explicit Distribution(std::vector<double> probs) : p_(std::move(probs)) { check(); }

  static Distribution uniform(int v) {
    if (v < 1) throw std::invalid_argument("Distribution::uniform: empty vocabulary");
    return Distribution(std::vector<double>(static_cast<std::size_t>(v), 1.0 / v));
  }

  static Distribution point_mass(int v, int at) {
    if (at < 0 || at >= v) throw std::invalid_argument("Distribution::point_mass: index out of range");
    std::vector<double> p(static_cast<std::size_t>(v), 0.0);
    p[static_cast<std::size_t>(at)] = 1.0;
    return Distribution(std::move(p));
  }

  int size() const { return static_cast<int>(p_.size()); }
  double operator[](int i) const { return p_[static_cast<std::size_t>(i)]; }
  std::span<const double> values() const { return p_; }

 private:
  std::vector<double> p_;

  void check() const {
    if (p_.empty()) throw std::invalid_argument("Distribution: empty probability vector");
    double sum = 0.0;
    for (double x : p_) {
      if (!std::isfinite(x)) throw std::invalid_argument("Distribution: non-finite entry");
      if (x < 0.0) throw std::invalid_argument("Distribution: negative entry");
      sum += x;
    }
    if (std::abs(sum - 1.0) > kProbTol)
      throw std::invalid_argument("Distribution: entries sum to " + std::to_string(sum) + ", expected 1");
  }
};

// Non-negative weights -> normalized distribution.
inline Distribution normalize(std::span<const double> weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w)) throw std::invalid_argument("normalize: non-finite weight");
    if (w < 0.0) throw std::invalid_argument("normalize: negative weight");
    sum += w;
  }
  if (sum <= 0.0) throw std::invalid_argument("normalize: weights sum to zero");
  std::vector<double> p(weights.begin(), weights.end());
  for (double& x : p) x /= sum;
  return Distribution(std::move(p));
}

// Joint distribution of an adjacent token pair (prev, next). Row index is the
// earlier token, column index the later one; entries sum to 1.
class JointMatrix {
 public:
  JointMatrix() = default;
  JointMatrix(int vocab, std::vector<double> entries) : v_(vocab), p_(std::move(entries)) { check(); }

  int vocab() const { return v_; }
  double at(int prev, int next) const { return p_[idx(prev, next)]; }
  std::span<const double> values() const { return p_; }

  Distribution marginal_prev() const {
    std::vector<double> m(static_cast<std::size_t>(v_), 0.0);
    for (int a = 0; a < v_; ++a)
      for (int b = 0; b < v_; ++b) m[static_cast<std::size_t>(a)] += at(a, b);
    return Distribution(std::move(m));
  }

  Distribution marginal_next() const {
    std::vector<double> m(static_cast<std::size_t>(v_), 0.0);
    for (int a = 0; a < v_; ++a)
      for (int b = 0; b < v_; ++b) m[static_cast<std::size_t>(b)] += at(a, b);
    return Distribution(std::move(m));
  }

 private:
  int v_ = 0;
  std::vector<double> p_;

  std::size_t idx(int a, int b) const { return static_cast<std::size_t>(a) * v_ + b; }

  void check() const {
    if (v_ < 2) throw std::invalid_argument("JointMatrix: vocabulary must have at least 2 tokens");
    if (p_.size() != static_cast<std::size_t>(v_) * v_)
      throw std::invalid_argument("JointMatrix: entry count does not match vocabulary");
    double sum = 0.0;
    for (double x : p_) {
      if (!std::isfinite(x)) throw std::invalid_argument("JointMatrix: non-finite entry");
      if (x < 0.0) throw std::invalid_argument("JointMatrix: negative entry");
      sum += x;
    }
    if (std::abs(sum - 1.0) > kProbTol)
      throw std::invalid_argument("JointMatrix: entries sum to " + std::to_string(sum) + ", expected 1");
  }
};

// Conditional distributions m(b|a), stored slice-major: slice a holds the
// distribution of the outcome b given conditioning token a. Every slice is a
// valid Distribution.
class ConditionalMatrix {
 public:
  ConditionalMatrix() = default;
  ConditionalMatrix(int vocab, std::vector<double> entries) : v_(vocab), p_(std::move(entries)) { check(); }

  int vocab() const { return v_; }
  // Probability of outcome b given conditioning token a.
  double prob(int b, int a) const { return p_[static_cast<std::size_t>(a) * v_ + b]; }
  std::span<const double> slice(int a) const {
    return std::span<const double>(p_).subspan(static_cast<std::size_t>(a) * v_, static_cast<std::size_t>(v_));
  }
  std::span<const double> values() const { return p_; }

  static ConditionalMatrix from_slices(const std::vector<Distribution>& slices) {
    if (slices.empty()) throw std::invalid_argument("ConditionalMatrix: no slices");
    int v = slices[0].size();
    std::vector<double> p;
    p.reserve(static_cast<std::size_t>(v) * v);
    for (const auto& s : slices) {
      if (s.size() != v) throw std::invalid_argument("ConditionalMatrix: slice size mismatch");
      p.insert(p.end(), s.values().begin(), s.values().end());
    }
    if (static_cast<int>(slices.size()) != v)
      throw std::invalid_argument("ConditionalMatrix: need one slice per token");
    return ConditionalMatrix(v, std::move(p));
  }

 private:
  int v_ = 0;
  std::vector<double> p_;

  void check() const {
    if (v_ < 2) throw std::invalid_argument("ConditionalMatrix: vocabulary must have at least 2 tokens");
    if (p_.size() != static_cast<std::size_t>(v_) * v_)
      throw std::invalid_argument("ConditionalMatrix: entry count does not match vocabulary");
    for (int a = 0; a < v_; ++a) {
      double sum = 0.0;
      for (int b = 0; b < v_; ++b) {
        double x = prob(b, a);
        if (!std::isfinite(x)) throw std::invalid_argument("ConditionalMatrix: non-finite entry");
        if (x < 0.0) throw std::invalid_argument("ConditionalMatrix: negative entry");
        sum += x;
      }
      if (std::abs(sum - 1.0) > kProbTol)
        throw std::invalid_argument("ConditionalMatrix: slice " + std::to_string(a) + " sums to " +
                                    std::to_string(sum) + ", expected 1");
    }
  }
};

// Signed perturbation table. Slice-major like ConditionalMatrix; a marginal
// error is a single slice, a joint error a single slice of length V*V.
// Each slice sums to 0 (difference of two normalized distributions).
struct ErrorTable {
  int slices = 0;
  int slice_len = 0;
  std::vector<double> values;

  ErrorTable() = default;
  ErrorTable(int n_slices, int len, std::vector<double> vals)
      : slices(n_slices), slice_len(len), values(std::move(vals)) {
    if (slices < 1 || slice_len < 1) throw std::invalid_argument("ErrorTable: empty shape");
    if (values.size() != static_cast<std::size_t>(slices) * slice_len)
      throw std::invalid_argument("ErrorTable: value count does not match shape");
    for (int s = 0; s < slices; ++s) {
      double sum = 0.0;
      for (int i = 0; i < slice_len; ++i) {
        double x = values[static_cast<std::size_t>(s) * slice_len + i];
        if (!std::isfinite(x)) throw std::invalid_argument("ErrorTable: non-finite entry");
        sum += x;
      }
      if (std::abs(sum) > kProbTol)
        throw std::invalid_argument("ErrorTable: slice " + std::to_string(s) + " sums to " +
                                    std::to_string(sum) + ", expected 0");
    }
  }

  double at(int s, int i) const { return values[static_cast<std::size_t>(s) * slice_len + i]; }

  static ErrorTable between(const Distribution& hat, const Distribution& truth) {
    if (hat.size() != truth.size()) throw std::invalid_argument("ErrorTable: size mismatch");
    std::vector<double> d(static_cast<std::size_t>(hat.size()));
    for (int i = 0; i < hat.size(); ++i) d[static_cast<std::size_t>(i)] = hat[i] - truth[i];
    return ErrorTable(1, hat.size(), std::move(d));
  }

  static ErrorTable between(const ConditionalMatrix& hat, const ConditionalMatrix& truth) {
    if (hat.vocab() != truth.vocab()) throw std::invalid_argument("ErrorTable: vocabulary mismatch");
    int v = hat.vocab();
    std::vector<double> d(static_cast<std::size_t>(v) * v);
    for (int a = 0; a < v; ++a)
      for (int b = 0; b < v; ++b)
        d[static_cast<std::size_t>(a) * v + b] = hat.prob(b, a) - truth.prob(b, a);
    return ErrorTable(v, v, std::move(d));
  }

  static ErrorTable between(const JointMatrix& hat, const JointMatrix& truth) {
    if (hat.vocab() != truth.vocab()) throw std::invalid_argument("ErrorTable: vocabulary mismatch");
    int v = hat.vocab();
    std::vector<double> d(static_cast<std::size_t>(v) * v);
    for (int a = 0; a < v; ++a)
      for (int b = 0; b < v; ++b)
        d[static_cast<std::size_t>(a) * v + b] = hat.at(a, b) - truth.at(a, b);
    return ErrorTable(1, v * v, std::move(d));
  }
};

// Total-variation distance: half the L1 distance between the vectors.
inline double tv_distance(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) throw std::invalid_argument("tv_distance: size mismatch");
  double s = 0.0;
  for (int i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("tv_distance: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

// Sum of absolute entries.
inline double l1_norm(const ErrorTable& e) {
  double s = 0.0;
  for (double x : e.values) s += std::abs(x);
  return s;
}

// Largest slice L1: max over conditioning tokens of the slice's total
// absolute error. Coincides with l1_norm for single-slice tables.
inline double max_norm(const ErrorTable& e) {
  double best = 0.0;
  for (int s = 0; s < e.slices; ++s) {
    double acc = 0.0;
    for (int i = 0; i < e.slice_len; ++i) acc += std::abs(e.at(s, i));
    if (acc > best) best = acc;
  }
  return best;
}

// Largest absolute entry.
inline double max_abs(const ErrorTable& e) {
  double best = 0.0;
  for (double x : e.values) best = std::max(best, std::abs(x));
  return best;
}

// Deterministic convex combination (1 - level) * p + level * noise.
// The result is exactly normalized because both inputs are.
inline Distribution mix_with(const Distribution& p, double level, const Distribution& noise) {
  if (p.size() != noise.size()) throw std::invalid_argument("mix_with: size mismatch");
  if (level < 0.0 || level > 1.0) throw std::invalid_argument("mix_with: level must be in [0, 1]");
  std::vector<double> out(static_cast<std::size_t>(p.size()));
  for (int i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = (1.0 - level) * p[i] + level * noise[i];
  return Distribution(std::move(out));
}

// Perturbs p toward a freshly sampled noise distribution (normalized i.i.d.
// uniforms). Returns both the mixture and the noise that was drawn.
struct NoisyMix {
  Distribution mixed;
  Distribution noise;
};

inline NoisyMix mix_noise(const Distribution& p, double level, Rng& rng) {
  std::vector<double> w(static_cast<std::size_t>(p.size()));
  for (double& x : w) x = rng.unit();
  Distribution noise = normalize(w);
  return NoisyMix{mix_with(p, level, noise), std::move(noise)};
}

// Factorization of a pair joint into its marginals and both conditionals:
// next_given_prev(b|a) = joint(a,b)/sum_b joint(a,b), and symmetrically
// prev_given_next(a|b). Every row and column sum of the joint must be
// positive, otherwise the conditioning event has zero probability.
struct JointFactorization {
  Distribution marginal_prev;
  Distribution marginal_next;
  ConditionalMatrix next_given_prev;
  ConditionalMatrix prev_given_next;
};

inline JointFactorization conditionals_from_joint(const JointMatrix& joint) {
  int v = joint.vocab();
  std::vector<double> row_sum(static_cast<std::size_t>(v), 0.0), col_sum(static_cast<std::size_t>(v), 0.0);
  for (int a = 0; a < v; ++a)
    for (int b = 0; b < v; ++b) {
      row_sum[static_cast<std::size_t>(a)] += joint.at(a, b);
      col_sum[static_cast<std::size_t>(b)] += joint.at(a, b);
    }
  for (int a = 0; a < v; ++a)
    if (row_sum[static_cast<std::size_t>(a)] <= 0.0)
      throw degenerate_conditioning_error("conditionals_from_joint: marginal of prev token " +
                                          std::to_string(a) + " is zero");
  for (int b = 0; b < v; ++b)
    if (col_sum[static_cast<std::size_t>(b)] <= 0.0)
      throw degenerate_conditioning_error("conditionals_from_joint: marginal of next token " +
                                          std::to_string(b) + " is zero");

  std::vector<double> ngp(static_cast<std::size_t>(v) * v), pgn(static_cast<std::size_t>(v) * v);
  for (int a = 0; a < v; ++a)
    for (int b = 0; b < v; ++b) {
      ngp[static_cast<std::size_t>(a) * v + b] = joint.at(a, b) / row_sum[static_cast<std::size_t>(a)];
      pgn[static_cast<std::size_t>(b) * v + a] = joint.at(a, b) / col_sum[static_cast<std::size_t>(b)];
    }
  return JointFactorization{Distribution(std::move(row_sum)), Distribution(std::move(col_sum)),
                            ConditionalMatrix(v, std::move(ngp)), ConditionalMatrix(v, std::move(pgn))};
}

}  // namespace rpt
