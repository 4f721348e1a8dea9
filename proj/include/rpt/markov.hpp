#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rpt/prob.hpp"
#include "rpt/rng.hpp"

namespace rpt {

struct convergence_error : std::runtime_error {
  double residual;
  convergence_error(const std::string& msg, double res) : std::runtime_error(msg), residual(res) {}
};

struct non_ergodic_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct degenerate_ratio_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Row-stochastic kernel over pair states (prev, next), flattened row-major as
// state = prev * V + next. Size is V^2 x V^2.
class TransitionKernel {
 public:
  TransitionKernel() = default;
  TransitionKernel(int vocab, std::vector<double> entries) : v_(vocab), m_(std::move(entries)) { check(); }

  int vocab() const { return v_; }
  int states() const { return v_ * v_; }
  static int state_index(int prev, int next, int vocab) { return prev * vocab + next; }

  double at(int from, int to) const { return m_[static_cast<std::size_t>(from) * states() + to]; }
  std::span<const double> row(int from) const {
    return std::span<const double>(m_).subspan(static_cast<std::size_t>(from) * states(),
                                               static_cast<std::size_t>(states()));
  }
  std::span<const double> values() const { return m_; }

 private:
  int v_ = 0;
  std::vector<double> m_;

  void check() const {
    if (v_ < 2) throw std::invalid_argument("TransitionKernel: vocabulary must have at least 2 tokens");
    std::size_t s = static_cast<std::size_t>(states());
    if (m_.size() != s * s) throw std::invalid_argument("TransitionKernel: entry count does not match V^2 x V^2");
    for (int from = 0; from < states(); ++from) {
      double sum = 0.0;
      for (int to = 0; to < states(); ++to) {
        double x = at(from, to);
        if (!std::isfinite(x)) throw std::invalid_argument("TransitionKernel: non-finite entry");
        if (x < 0.0) throw std::invalid_argument("TransitionKernel: negative entry");
        sum += x;
      }
      if (std::abs(sum - 1.0) > kProbTol)
        throw std::invalid_argument("TransitionKernel: row " + std::to_string(from) + " sums to " +
                                    std::to_string(sum) + ", expected 1");
    }
  }
};

// One resample-previous-tokens step on the pair (prev, next): redraw prev
// from prev_given_next conditioned on the current next token, then redraw
// next from next_given_prev conditioned on the fresh prev. The source state
// enters only through its next component, so rows repeat across prev.
inline TransitionKernel build_rpt_kernel(const ConditionalMatrix& prev_given_next,
                                         const ConditionalMatrix& next_given_prev) {
  if (prev_given_next.vocab() != next_given_prev.vocab())
    throw std::invalid_argument("build_rpt_kernel: vocabulary mismatch");
  int v = prev_given_next.vocab();
  int s = v * v;
  std::vector<double> m(static_cast<std::size_t>(s) * s);
  for (int a = 0; a < v; ++a) {
    for (int b = 0; b < v; ++b) {
      std::size_t row = static_cast<std::size_t>(a * v + b) * s;
      for (int a2 = 0; a2 < v; ++a2) {
        double pa2 = prev_given_next.prob(a2, b);
        for (int b2 = 0; b2 < v; ++b2) m[row + static_cast<std::size_t>(a2 * v + b2)] = pa2 * next_given_prev.prob(b2, a2);
      }
    }
  }
  return TransitionKernel(v, std::move(m));
}

namespace detail {

// Indices of one representative per distinct kernel row (bitwise comparison).
// RPT kernels have at most V distinct rows, which keeps the pairwise scan cheap.
inline std::vector<int> distinct_rows(const TransitionKernel& k) {
  int s = k.states();
  std::vector<int> order(static_cast<std::size_t>(s));
  std::iota(order.begin(), order.end(), 0);
  auto less = [&](int x, int y) {
    auto rx = k.row(x), ry = k.row(y);
    return std::lexicographical_compare(rx.begin(), rx.end(), ry.begin(), ry.end());
  };
  std::sort(order.begin(), order.end(), less);
  std::vector<int> reps;
  for (int i = 0; i < s; ++i) {
    if (i == 0 || less(order[static_cast<std::size_t>(i - 1)], order[static_cast<std::size_t>(i)]))
      reps.push_back(order[static_cast<std::size_t>(i)]);
  }
  return reps;
}

}  // namespace detail

// Dobrushin ergodicity coefficient: the largest total-variation distance
// between any two rows. 0 means one-step forgetting, 1 means no one-step
// contraction guarantee. Invariant under relabeling the states.
inline double ergodicity_coefficient(const TransitionKernel& k) {
  std::vector<int> reps = detail::distinct_rows(k);
  double best = 0.0;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    auto ri = k.row(reps[i]);
    for (std::size_t j = i + 1; j < reps.size(); ++j) {
      double tv = tv_distance(ri, k.row(reps[j]));
      if (tv > best) best = tv;
    }
  }
  return std::clamp(best, 0.0, 1.0);
}

// kappa = 1 / (1 - Dobrushin coefficient); the stationary-perturbation
// condition number. Errors out when the coefficient is 1 (no contraction).
inline double condition_number(const TransitionKernel& k) {
  double lambda = ergodicity_coefficient(k);
  if (lambda >= 1.0 - 1e-12)
    throw non_ergodic_error("condition_number: ergodicity coefficient is 1 within tolerance");
  return 1.0 / (1.0 - lambda);
}

// Stationary pair distribution by power iteration, stopping when the
// max-entry residual |r.P - r| drops to tol. Refuses kernels whose Dobrushin
// coefficient is 1 within 1e-12: a fixed point still exists there, but it
// need not be unique (identity kernel), so a residual test proves nothing.
inline JointMatrix stationary_distribution(const TransitionKernel& k, const JointMatrix& init,
                                           double tol = 1e-12, int max_iters = 100000) {
  if (init.vocab() != k.vocab()) throw std::invalid_argument("stationary_distribution: vocabulary mismatch");
  if (tol <= 0.0) throw std::invalid_argument("stationary_distribution: tol must be positive");
  if (max_iters < 1) throw std::invalid_argument("stationary_distribution: max_iters must be positive");

  int s = k.states();
  std::vector<double> r(init.values().begin(), init.values().end());
  std::vector<double> next(static_cast<std::size_t>(s));

  auto step_residual = [&]() {
    std::fill(next.begin(), next.end(), 0.0);
    for (int from = 0; from < s; ++from) {
      double rf = r[static_cast<std::size_t>(from)];
      if (rf == 0.0) continue;
      auto row = k.row(from);
      for (int to = 0; to < s; ++to) next[static_cast<std::size_t>(to)] += rf * row[static_cast<std::size_t>(to)];
    }
    double res = 0.0;
    for (int i = 0; i < s; ++i) res = std::max(res, std::abs(next[static_cast<std::size_t>(i)] - r[static_cast<std::size_t>(i)]));
    return res;
  };

  double lambda = ergodicity_coefficient(k);
  if (lambda >= 1.0 - 1e-12) {
    double res = step_residual();
    throw convergence_error("stationary_distribution: kernel is not contracting (Dobrushin coefficient " +
                                std::to_string(lambda) + "); stationary point may not be unique",
                            res);
  }

  double residual = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    residual = step_residual();
    double mass = std::accumulate(next.begin(), next.end(), 0.0);
    for (double& x : next) x /= mass;
    r.swap(next);
    if (residual <= tol) return JointMatrix(k.vocab(), std::move(r));
  }
  throw convergence_error("stationary_distribution: residual " + std::to_string(residual) + " after " +
                              std::to_string(max_iters) + " iterations, tol " + std::to_string(tol),
                          residual);
}

inline JointMatrix stationary_distribution(const TransitionKernel& k, double tol = 1e-12, int max_iters = 100000) {
  int s = k.states();
  return stationary_distribution(
      k, JointMatrix(k.vocab(), std::vector<double>(static_cast<std::size_t>(s), 1.0 / s)), tol, max_iters);
}

// Ground truth plus hatted (perturbed) estimates of the three conditionals a
// sampler consumes, with their signed error tables (hat minus truth).
struct PerturbationBundle {
  JointMatrix ground_truth;
  Distribution marginal_prev;
  ConditionalMatrix next_given_prev;
  ConditionalMatrix prev_given_next;

  Distribution hat_marginal_prev;
  ConditionalMatrix hat_next_given_prev;
  ConditionalMatrix hat_prev_given_next;

  ErrorTable eps_marginal;         // 1 x V
  ErrorTable eps_next_given_prev;  // V slices
  ErrorTable eps_prev_given_next;  // V slices
};

inline PerturbationBundle bundle_from_hats(JointMatrix joint, Distribution hat_marginal,
                                           ConditionalMatrix hat_ngp, ConditionalMatrix hat_pgn) {
  JointFactorization f = conditionals_from_joint(joint);
  ErrorTable em = ErrorTable::between(hat_marginal, f.marginal_prev);
  ErrorTable en = ErrorTable::between(hat_ngp, f.next_given_prev);
  ErrorTable ep = ErrorTable::between(hat_pgn, f.prev_given_next);
  return PerturbationBundle{std::move(joint),
                            std::move(f.marginal_prev),
                            std::move(f.next_given_prev),
                            std::move(f.prev_given_next),
                            std::move(hat_marginal),
                            std::move(hat_ngp),
                            std::move(hat_pgn),
                            std::move(em),
                            std::move(en),
                            std::move(ep)};
}

// Perturbs the marginal and forward conditional at noise_next, and the
// backward conditional at noise_prev, each slice mixed toward its own fresh
// random distribution. Draw order is fixed: marginal, forward slices 0..V-1,
// then backward slices 0..V-1.
inline PerturbationBundle make_perturbation_bundle(const JointMatrix& joint, double noise_next,
                                                   double noise_prev, Rng& rng) {
  JointFactorization f = conditionals_from_joint(joint);
  int v = joint.vocab();
  Distribution hat_marginal = mix_noise(f.marginal_prev, noise_next, rng).mixed;
  std::vector<Distribution> ngp_slices, pgn_slices;
  ngp_slices.reserve(static_cast<std::size_t>(v));
  pgn_slices.reserve(static_cast<std::size_t>(v));
  for (int a = 0; a < v; ++a) {
    std::vector<double> s(f.next_given_prev.slice(a).begin(), f.next_given_prev.slice(a).end());
    ngp_slices.push_back(mix_noise(Distribution(std::move(s)), noise_next, rng).mixed);
  }
  for (int b = 0; b < v; ++b) {
    std::vector<double> s(f.prev_given_next.slice(b).begin(), f.prev_given_next.slice(b).end());
    pgn_slices.push_back(mix_noise(Distribution(std::move(s)), noise_prev, rng).mixed);
  }
  return bundle_from_hats(joint, std::move(hat_marginal), ConditionalMatrix::from_slices(ngp_slices),
                          ConditionalMatrix::from_slices(pgn_slices));
}

// Sampled noise directions for a bundle, so one draw can be re-mixed at
// several scales (the hats move along a fixed ray as the level varies).
struct BundleNoise {
  Distribution marginal;
  std::vector<Distribution> next_given_prev;  // one per conditioning token
  std::vector<Distribution> prev_given_next;
};

inline BundleNoise sample_bundle_noise(int vocab, Rng& rng) {
  auto draw = [&rng](int v) {
    std::vector<double> w(static_cast<std::size_t>(v));
    for (double& x : w) x = rng.unit();
    return normalize(w);
  };
  BundleNoise n;
  n.marginal = draw(vocab);
  for (int a = 0; a < vocab; ++a) n.next_given_prev.push_back(draw(vocab));
  for (int b = 0; b < vocab; ++b) n.prev_given_next.push_back(draw(vocab));
  return n;
}

inline PerturbationBundle bundle_at_level(const JointMatrix& joint, const BundleNoise& noise,
                                          double noise_next, double noise_prev) {
  JointFactorization f = conditionals_from_joint(joint);
  int v = joint.vocab();
  Distribution hat_marginal = mix_with(f.marginal_prev, noise_next, noise.marginal);
  std::vector<Distribution> ngp_slices, pgn_slices;
  for (int a = 0; a < v; ++a) {
    std::vector<double> s(f.next_given_prev.slice(a).begin(), f.next_given_prev.slice(a).end());
    ngp_slices.push_back(mix_with(Distribution(std::move(s)), noise_next, noise.next_given_prev[static_cast<std::size_t>(a)]));
  }
  for (int b = 0; b < v; ++b) {
    std::vector<double> s(f.prev_given_next.slice(b).begin(), f.prev_given_next.slice(b).end());
    pgn_slices.push_back(mix_with(Distribution(std::move(s)), noise_prev, noise.prev_given_next[static_cast<std::size_t>(b)]));
  }
  return bundle_from_hats(joint, std::move(hat_marginal), ConditionalMatrix::from_slices(ngp_slices),
                          ConditionalMatrix::from_slices(pgn_slices));
}

// Joint the plain next-token sampler realizes, hat(a,b) = hat_marginal(a) *
// hat_ngp(b|a), its exact error against the ground truth, and the first-order
// prediction err(a,b) ~= eps_marginal(a) pi(b|a) + eps_ngp(b|a) pi(a).
struct NtpJointError {
  int vocab = 0;
  std::vector<double> hat_joint;  // V x V, row-major (prev, next)
  ErrorTable exact_error;         // single slice of length V*V
  ErrorTable first_order;         // single slice of length V*V
};

inline NtpJointError ntp_joint_error(const PerturbationBundle& b) {
  int v = b.ground_truth.vocab();
  std::vector<double> hat(static_cast<std::size_t>(v) * v), exact(static_cast<std::size_t>(v) * v),
      first(static_cast<std::size_t>(v) * v);
  for (int a = 0; a < v; ++a) {
    for (int n = 0; n < v; ++n) {
      std::size_t i = static_cast<std::size_t>(a) * v + n;
      hat[i] = b.hat_marginal_prev[a] * b.hat_next_given_prev.prob(n, a);
      exact[i] = hat[i] - b.ground_truth.at(a, n);
      first[i] = b.eps_marginal.at(0, a) * b.next_given_prev.prob(n, a) +
                 b.eps_next_given_prev.at(a, n) * b.marginal_prev[a];
    }
  }
  return NtpJointError{v, std::move(hat), ErrorTable(1, v * v, std::move(exact)),
                       ErrorTable(1, v * v, std::move(first))};
}

// First-order bound on the L1 error of the next-token joint:
// |eps_marginal|_1 + |eps_next_given_prev|_max.
inline double ntp_error_bound(const PerturbationBundle& b) {
  return l1_norm(b.eps_marginal) + max_norm(b.eps_next_given_prev);
}

// First-order bound on the max-norm of the pair-kernel perturbation:
// |eps_prev_given_next|_max + |eps_next_given_prev|_max.
inline double kernel_error_bound(const PerturbationBundle& b) {
  return max_norm(b.eps_prev_given_next) + max_norm(b.eps_next_given_prev);
}

// Bound on the L1 error of the perturbed kernel's stationary distribution:
// kappa of the unperturbed kernel times the kernel perturbation bound.
inline double rpt_error_bound(const PerturbationBundle& b, double kappa) {
  if (kappa < 1.0) throw std::invalid_argument("rpt_error_bound: kappa must be at least 1");
  return kappa * kernel_error_bound(b);
}

// Ratio of the resampling bound to the next-token bound; < 1 means the
// resampling error analysis wins.
inline double rpt_factor(const PerturbationBundle& b, double kappa) {
  double ntp = ntp_error_bound(b);
  if (ntp <= 0.0) throw degenerate_ratio_error("rpt_factor: next-token bound is zero");
  return rpt_error_bound(b, kappa) / ntp;
}

// Exact perturbed-minus-true kernel difference, row max-norm, and the
// first-order prediction e(a',b') ~= eps_pgn(a'|b) ngp(b'|a') +
// eps_ngp(b'|a') pgn(a'|b), whose rows also depend only on b.
struct KernelError {
  double exact_max_norm = 0.0;
  double first_order_max_norm = 0.0;
  double quadratic_gap_max_norm = 0.0;  // max-norm of (exact - first order), the higher-order remainder
};

inline KernelError kernel_error(const PerturbationBundle& b) {
  int v = b.ground_truth.vocab();
  KernelError out;
  for (int bcur = 0; bcur < v; ++bcur) {  // source state enters through its next component only
    double row_exact = 0.0, row_first = 0.0, row_diff = 0.0;
    for (int a2 = 0; a2 < v; ++a2) {
      for (int b2 = 0; b2 < v; ++b2) {
        double exact = b.hat_prev_given_next.prob(a2, bcur) * b.hat_next_given_prev.prob(b2, a2) -
                       b.prev_given_next.prob(a2, bcur) * b.next_given_prev.prob(b2, a2);
        double first = b.eps_prev_given_next.at(bcur, a2) * b.next_given_prev.prob(b2, a2) +
                       b.eps_next_given_prev.at(a2, b2) * b.prev_given_next.prob(a2, bcur);
        row_exact += std::abs(exact);
        row_first += std::abs(first);
        row_diff += std::abs(exact - first);
      }
    }
    out.exact_max_norm = std::max(out.exact_max_norm, row_exact);
    out.first_order_max_norm = std::max(out.first_order_max_norm, row_first);
    out.quadratic_gap_max_norm = std::max(out.quadratic_gap_max_norm, row_diff);
  }
  return out;
}

}  // namespace rpt
