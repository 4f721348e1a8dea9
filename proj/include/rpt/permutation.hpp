#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rpt/rng.hpp"

namespace rpt {

struct malformed_permutation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input order sigma and target map tau for one training sequence, both
// 1-based: position i of the model input carries original token sigma[i-1]
// and is trained to predict original token tau[i-1]. tau values of n+1 mark
// positions whose target falls off the sequence end (loss-masked).
struct PermutationPlan {
  std::vector<int> sigma;
  std::vector<int> tau;
  std::vector<int> deltas;       // tau - sigma, the positional offsets fed to the model
  std::vector<int> swap_starts;  // 1-based start of each rotated block
  int window = 0;                // block width w used to build sigma
};

struct SigmaDraw {
  std::vector<int> sigma;
  std::vector<int> swap_starts;
};

// Left-to-right traversal: at each eligible index k, with probability q the
// block (k..k+w-1) is rotated so token k moves to the block's end and the
// rest shift one place left; traversal then resumes at k+w, so blocks never
// overlap. Blocks must fit: no swap starts after n-w+1.
inline SigmaDraw build_sigma(int n, double q, int w, Rng& rng) {
  if (n < 1) throw std::invalid_argument("build_sigma: sequence must be non-empty");
  if (w < 2) throw std::invalid_argument("build_sigma: window must be at least 2");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("build_sigma: swap probability must be in [0, 1]");
  SigmaDraw d;
  d.sigma.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) d.sigma[static_cast<std::size_t>(i)] = i + 1;
  int k = 1;
  while (k <= n - w + 1) {
    if (rng.bernoulli(q)) {
      for (int j = 0; j < w - 1; ++j) d.sigma[static_cast<std::size_t>(k - 1 + j)] = k + 1 + j;
      d.sigma[static_cast<std::size_t>(k - 1 + w - 1)] = k;
      d.swap_starts.push_back(k);
      k += w;
    } else {
      k += 1;
    }
  }
  return d;
}

// Rebuilds sigma's block structure and checks it against swap_starts; throws
// on any inconsistency so corrupted plans are caught before training.
inline void check_sigma(const std::vector<int>& sigma, const std::vector<int>& swap_starts, int w) {
  int n = static_cast<int>(sigma.size());
  std::size_t next_block = 0;
  int i = 1;
  while (i <= n) {
    if (sigma[static_cast<std::size_t>(i - 1)] == i) {
      ++i;
      continue;
    }
    if (next_block >= swap_starts.size() || swap_starts[next_block] != i)
      throw malformed_permutation_error("sigma: unexpected displaced token at position " + std::to_string(i));
    if (i > n - w + 1)
      throw malformed_permutation_error("sigma: block at position " + std::to_string(i) + " does not fit");
    for (int j = 0; j < w - 1; ++j)
      if (sigma[static_cast<std::size_t>(i - 1 + j)] != i + 1 + j)
        throw malformed_permutation_error("sigma: block at position " + std::to_string(i) + " is not a rotation");
    if (sigma[static_cast<std::size_t>(i - 1 + w - 1)] != i)
      throw malformed_permutation_error("sigma: block at position " + std::to_string(i) + " is not a rotation");
    ++next_block;
    i += w;
  }
  if (next_block != swap_starts.size())
    throw malformed_permutation_error("sigma: swap_starts lists blocks that sigma does not contain");
}

// Target map: tau[i-1] = i+1 wherever the input prefix {sigma_1..sigma_i}
// equals {1..i} (the position predicts the next unseen token); inside a
// rotated block every position except the last targets the block's displaced
// token k. Equivalently, positions holding tokens k+1..k+w-1 all target k.
inline std::vector<int> build_tau(const std::vector<int>& sigma, const std::vector<int>& swap_starts, int w) {
  check_sigma(sigma, swap_starts, w);
  int n = static_cast<int>(sigma.size());
  std::vector<int> tau(static_cast<std::size_t>(n));
  for (int i = 1; i <= n; ++i) tau[static_cast<std::size_t>(i - 1)] = i + 1;
  for (int k : swap_starts)
    for (int j = 0; j < w - 1; ++j) tau[static_cast<std::size_t>(k - 1 + j)] = k;
  return tau;
}

inline std::vector<int> position_deltas(const std::vector<int>& sigma, const std::vector<int>& tau) {
  if (sigma.size() != tau.size()) throw std::invalid_argument("position_deltas: length mismatch");
  std::vector<int> d(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) d[i] = tau[i] - sigma[i];
  return d;
}

inline PermutationPlan identity_plan(int n, int w) {
  PermutationPlan p;
  p.window = w;
  p.sigma.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p.sigma[static_cast<std::size_t>(i)] = i + 1;
  p.tau = build_tau(p.sigma, p.swap_starts, w);
  p.deltas = position_deltas(p.sigma, p.tau);
  return p;
}

inline PermutationPlan make_plan(int n, double q, int w, Rng& rng) {
  SigmaDraw d = build_sigma(n, q, w, rng);
  PermutationPlan p;
  p.window = w;
  p.sigma = std::move(d.sigma);
  p.swap_starts = std::move(d.swap_starts);
  p.tau = build_tau(p.sigma, p.swap_starts, w);
  p.deltas = position_deltas(p.sigma, p.tau);
  return p;
}

// Renewal estimate of the mean number of rotated blocks per sequence: each
// traversal decision consumes one position without a swap or w with one, so
// swaps arrive at rate q / (1 + q(w-1)) per position.
inline double expected_swap_count(int n, double q, int w) {
  return n * q / (1.0 + q * (w - 1));
}

// One training example: tokens rearranged by a plan, the per-position targets,
// and a mask for positions whose target is off the end of the sequence.
struct BatchSpec {
  std::vector<int> tokens;           // original sequence
  std::vector<int> permuted_tokens;  // tokens[sigma[i]-1], what the model reads
  std::vector<int> targets;          // tokens[tau[i]-1], -1 where masked
  std::vector<char> loss_mask;       // 1 = excluded from the loss (tau > n)
  PermutationPlan plan;
};

// With probability s the sequence gets a fresh random plan, otherwise the
// identity plan; the final position always has tau = n+1 and is masked.
inline BatchSpec make_training_batch(std::vector<int> tokens, double s, double q, int w, Rng& rng) {
  if (tokens.empty()) throw std::invalid_argument("make_training_batch: empty sequence");
  if (s < 0.0 || s > 1.0) throw std::invalid_argument("make_training_batch: permute probability must be in [0, 1]");
  int n = static_cast<int>(tokens.size());
  BatchSpec b;
  b.plan = rng.bernoulli(s) ? make_plan(n, q, w, rng) : identity_plan(n, w);
  b.tokens = std::move(tokens);
  b.permuted_tokens.resize(static_cast<std::size_t>(n));
  b.targets.resize(static_cast<std::size_t>(n));
  b.loss_mask.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    b.permuted_tokens[static_cast<std::size_t>(i)] = b.tokens[static_cast<std::size_t>(b.plan.sigma[static_cast<std::size_t>(i)] - 1)];
    int t = b.plan.tau[static_cast<std::size_t>(i)];
    bool masked = t > n;
    b.loss_mask[static_cast<std::size_t>(i)] = masked ? 1 : 0;
    b.targets[static_cast<std::size_t>(i)] = masked ? -1 : b.tokens[static_cast<std::size_t>(t - 1)];
  }
  return b;
}

}  // namespace rpt
