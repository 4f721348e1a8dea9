#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rpt/prob.hpp"
#include "rpt/rng.hpp"

namespace rpt {

// Order-m Markov source over a vocabulary of V tokens, with every
// conditional known exactly. transition holds V^m rows of length V, row
// index = sum_j history[j] * V^(m-1-j) over the last m tokens (oldest
// first); initial is a distribution over the V^m possible seed histories.
struct SourceSpec {
  int vocab = 0;
  int order = 0;
  std::vector<double> transition;  // V^m x V, row-major
  std::vector<double> initial;     // distribution over V^m seeds

  std::size_t rows() const {
    std::size_t r = 1;
    for (int i = 0; i < order; ++i) r *= static_cast<std::size_t>(vocab);
    return r;
  }

  std::size_t history_index(std::span<const int> history) const {
    if (history.size() < static_cast<std::size_t>(order))
      throw std::invalid_argument("SourceSpec: need at least `order` context tokens");
    std::size_t idx = 0;
    for (std::size_t j = history.size() - static_cast<std::size_t>(order); j < history.size(); ++j) {
      int t = history[j];
      if (t < 0 || t >= vocab) throw std::invalid_argument("SourceSpec: token out of range");
      idx = idx * static_cast<std::size_t>(vocab) + static_cast<std::size_t>(t);
    }
    return idx;
  }

  std::span<const double> row(std::size_t idx) const {
    return std::span<const double>(transition).subspan(idx * static_cast<std::size_t>(vocab),
                                                       static_cast<std::size_t>(vocab));
  }

  void validate() const {
    if (vocab < 2) throw std::invalid_argument("SourceSpec: vocab must be at least 2");
    if (order < 1) throw std::invalid_argument("SourceSpec: order must be at least 1");
    if (transition.size() != rows() * static_cast<std::size_t>(vocab))
      throw std::invalid_argument("SourceSpec: transition table has wrong size");
    if (initial.size() != rows()) throw std::invalid_argument("SourceSpec: initial distribution has wrong size");
    for (std::size_t r = 0; r < rows(); ++r) (void)Distribution(std::vector<double>(row(r).begin(), row(r).end()));
    (void)Distribution(std::vector<double>(initial));
  }
};

// Exact next-token distribution given at least `order` context tokens.
inline Distribution exact_source_conditional(const SourceSpec& s, std::span<const int> context) {
  auto r = s.row(s.history_index(context));
  return Distribution(std::vector<double>(r.begin(), r.end()));
}

// Exact posterior of the token at the queried slot given the natural context
// before it and `ell` ground-truth future tokens after it:
// p(x | ctx, fut) proportional to p(x | ctx) * prod_j p(fut_j | shifted ctx).
inline Distribution exact_ptp_conditional(const SourceSpec& s, std::span<const int> context,
                                          std::span<const int> future, int ell) {
  if (ell < 1) throw std::invalid_argument("exact_ptp_conditional: ell must be at least 1");
  if (static_cast<int>(future.size()) != ell)
    throw std::invalid_argument("exact_ptp_conditional: need exactly ell future tokens");
  std::vector<double> w(static_cast<std::size_t>(s.vocab));
  Distribution prior = exact_source_conditional(s, context);
  std::vector<int> hist(context.begin(), context.end());
  for (int x = 0; x < s.vocab; ++x) {
    double lik = prior[x];
    hist.push_back(x);
    for (int j = 0; j < ell && lik > 0.0; ++j) {
      lik *= exact_source_conditional(s, hist)[future[static_cast<std::size_t>(j)]];
      hist.push_back(future[static_cast<std::size_t>(j)]);
    }
    hist.resize(context.size());
    w[static_cast<std::size_t>(x)] = lik;
  }
  double total = 0.0;
  for (double x : w) total += x;
  if (total <= 0.0)
    throw degenerate_conditioning_error("exact_ptp_conditional: observed future has zero probability");
  return normalize(w);
}

// Samples a sequence of the given length; the first `order` tokens come from
// the initial seed distribution, the rest from the transition rows.
inline std::vector<int> sample_source(const SourceSpec& s, int length, Rng& rng) {
  if (length < s.order) throw std::invalid_argument("sample_source: length shorter than the source order");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(length));
  std::size_t seed_idx = static_cast<std::size_t>(rng.sample(s.initial));
  std::vector<int> seed(static_cast<std::size_t>(s.order));
  for (int j = s.order - 1; j >= 0; --j) {
    seed[static_cast<std::size_t>(j)] = static_cast<int>(seed_idx % static_cast<std::size_t>(s.vocab));
    seed_idx /= static_cast<std::size_t>(s.vocab);
  }
  out.insert(out.end(), seed.begin(), seed.end());
  while (static_cast<int>(out.size()) < length) out.push_back(rng.sample(s.row(s.history_index(out))));
  return out;
}

// Source where the future pins down the past: the next token is
// perm[(sum of the last m tokens) mod V] with probability a + (1-a)/V and
// uniform otherwise. Next-token prediction carries real entropy, while a
// token's successors identify it almost surely, so resampling has room to
// help. perm is a fixed rotation keyed by perm_shift.
inline SourceSpec make_coupled_source(int vocab, int order, double strength, int perm_shift = 1) {
  if (strength < 0.0 || strength >= 1.0)
    throw std::invalid_argument("make_coupled_source: strength must be in [0, 1)");
  SourceSpec s;
  s.vocab = vocab;
  s.order = order;
  s.transition.assign(s.rows() * static_cast<std::size_t>(vocab), 0.0);
  std::vector<int> hist(static_cast<std::size_t>(order), 0);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    std::size_t rem = r;
    int sum = 0;
    for (int j = order - 1; j >= 0; --j) {
      hist[static_cast<std::size_t>(j)] = static_cast<int>(rem % static_cast<std::size_t>(vocab));
      rem /= static_cast<std::size_t>(vocab);
    }
    for (int t : hist) sum += t;
    int target = (sum + perm_shift) % vocab;
    for (int b = 0; b < vocab; ++b)
      s.transition[r * static_cast<std::size_t>(vocab) + static_cast<std::size_t>(b)] =
          (1.0 - strength) / vocab + (b == target ? strength : 0.0);
  }
  s.initial.assign(s.rows(), 1.0 / static_cast<double>(s.rows()));
  s.validate();
  return s;
}

// Four-token alternating source: "pick" tokens {0,1} are drawn uniformly and
// each is echoed deterministically as 2 or 3. At pick positions the next
// token cannot be predicted (entropy ln 2) yet is fully determined by the
// echo that follows it, the sharpest possible resampling situation.
inline SourceSpec make_echo_source() {
  SourceSpec s;
  s.vocab = 4;
  s.order = 1;
  s.transition = {
      0.0, 0.0, 1.0, 0.0,  // after 0: emit its echo 2
      0.0, 0.0, 0.0, 1.0,  // after 1: emit its echo 3
      0.5, 0.5, 0.0, 0.0,  // after an echo: fresh uniform pick
      0.5, 0.5, 0.0, 0.0,
  };
  s.initial = {0.0, 0.0, 0.5, 0.5};  // start at an echo so position 1 is a pick
  s.validate();
  return s;
}

inline SourceSpec make_uniform_source(int vocab, int order) {
  SourceSpec s;
  s.vocab = vocab;
  s.order = order;
  s.transition.assign(s.rows() * static_cast<std::size_t>(vocab), 1.0 / vocab);
  s.initial.assign(s.rows(), 1.0 / static_cast<double>(s.rows()));
  s.validate();
  return s;
}

// Deterministic cycle: every history leads to (last token + 1) mod V.
inline SourceSpec make_deterministic_source(int vocab, int order) {
  SourceSpec s;
  s.vocab = vocab;
  s.order = order;
  s.transition.assign(s.rows() * static_cast<std::size_t>(vocab), 0.0);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    int last = static_cast<int>(r % static_cast<std::size_t>(vocab));
    s.transition[r * static_cast<std::size_t>(vocab) + static_cast<std::size_t>((last + 1) % vocab)] = 1.0;
  }
  s.initial.assign(s.rows(), 1.0 / static_cast<double>(s.rows()));
  s.validate();
  return s;
}

// Every transition row drawn as a fresh normalized uniform vector.
inline SourceSpec make_random_source(int vocab, int order, Rng& rng) {
  SourceSpec s;
  s.vocab = vocab;
  s.order = order;
  s.transition.reserve(s.rows() * static_cast<std::size_t>(vocab));
  for (std::size_t r = 0; r < s.rows(); ++r) {
    std::vector<double> w(static_cast<std::size_t>(vocab));
    for (double& x : w) x = rng.unit();
    Distribution d = normalize(w);
    s.transition.insert(s.transition.end(), d.values().begin(), d.values().end());
  }
  s.initial.assign(s.rows(), 1.0 / static_cast<double>(s.rows()));
  s.validate();
  return s;
}

}  // namespace rpt
