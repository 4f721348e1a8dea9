#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rpt/permutation.hpp"
#include "rpt/prob.hpp"
#include "rpt/rng.hpp"
#include "rpt/source.hpp"

namespace rpt {

struct training_diverged_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct unsupported_offset_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// What the tabular model conditions on: the last `context_width` input
// tokens in reading order (-1 pads positions before the sequence start),
// their positional offsets tau - sigma, and the offset of the predicted
// position. The offsets let one table serve both natural and rotated
// layouts without collisions.
struct ContextKey {
  std::vector<int> tokens;
  std::vector<int> deltas;
  int target_delta = 1;

  bool operator==(const ContextKey&) const = default;
};

struct ContextKeyHash {
  std::size_t operator()(const ContextKey& k) const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t x) {
      h ^= x;
      h *= 1099511628211ull;
    };
    for (int t : k.tokens) mix(static_cast<std::uint64_t>(t) + 0x100);
    for (int d : k.deltas) mix(static_cast<std::uint64_t>(d) + 0x10000);
    mix(static_cast<std::uint64_t>(k.target_delta) + 0x1000000);
    return static_cast<std::size_t>(h);
  }
};

inline bool key_less(const ContextKey& a, const ContextKey& b) {
  if (a.tokens != b.tokens) return a.tokens < b.tokens;
  if (a.deltas != b.deltas) return a.deltas < b.deltas;
  return a.target_delta < b.target_delta;
}

struct ToyHyperparams {
  int vocab = 0;
  int context_width = 0;  // tokens of context hashed into a key
  int window = 2;         // largest rotation width the model is trained for
  double learning_rate = 0.5;

  void validate() const {
    if (vocab < 2) throw std::invalid_argument("ToyHyperparams: vocab must be at least 2");
    if (context_width < 1) throw std::invalid_argument("ToyHyperparams: context_width must be at least 1");
    if (window < 2) throw std::invalid_argument("ToyHyperparams: window must be at least 2");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("ToyHyperparams: learning_rate must be positive");
  }
};

inline std::vector<double> softmax(std::span<const double> logits) {
  double mx = logits[0];
  for (double z : logits) mx = std::max(mx, z);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

// Sparse logit table keyed by ContextKey. Unseen keys read as all-zero
// logits, i.e. a uniform prediction.
class ToyModel {
 public:
  ToyModel() = default;
  explicit ToyModel(ToyHyperparams hp) : hp_(hp) { hp_.validate(); }

  const ToyHyperparams& hyperparams() const { return hp_; }
  std::size_t rows() const { return logits_.size(); }
  bool has_row(const ContextKey& k) const { return logits_.contains(k); }

  Distribution forward(const ContextKey& k) const {
    auto it = logits_.find(k);
    if (it == logits_.end()) return Distribution::uniform(hp_.vocab);
    return Distribution(softmax(it->second));
  }

  std::span<const double> row(const ContextKey& k) const {
    auto it = logits_.find(k);
    if (it == logits_.end()) throw std::invalid_argument("ToyModel::row: key has no table entry");
    return it->second;
  }

  void set_row(const ContextKey& k, std::vector<double> logits) {
    if (static_cast<int>(logits.size()) != hp_.vocab)
      throw std::invalid_argument("ToyModel::set_row: logit count must match vocab");
    for (double z : logits)
      if (!std::isfinite(z)) throw std::invalid_argument("ToyModel::set_row: non-finite logit");
    logits_[k] = std::move(logits);
  }

  void add_to_row(const ContextKey& k, std::span<const double> g, double scale) {
    auto& row = logits_[k];
    if (row.empty()) row.assign(static_cast<std::size_t>(hp_.vocab), 0.0);
    for (int i = 0; i < hp_.vocab; ++i) row[static_cast<std::size_t>(i)] += scale * g[static_cast<std::size_t>(i)];
  }

  std::vector<ContextKey> sorted_keys() const {
    std::vector<ContextKey> keys;
    keys.reserve(logits_.size());
    for (const auto& [k, _] : logits_) keys.push_back(k);
    std::sort(keys.begin(), keys.end(), key_less);
    return keys;
  }

 private:
  ToyHyperparams hp_;
  std::unordered_map<ContextKey, std::vector<double>, ContextKeyHash> logits_;
};

namespace detail {

inline int clamp_delta(int d, int window) { return std::clamp(d, -(window - 1), window); }

}  // namespace detail

// Key for the prediction made at position i of a batch (0-based slot).
inline ContextKey batch_key(const BatchSpec& b, int i, const ToyHyperparams& hp) {
  int c = hp.context_width;
  ContextKey k;
  k.tokens.resize(static_cast<std::size_t>(c));
  k.deltas.resize(static_cast<std::size_t>(c));
  for (int j = 0; j < c; ++j) {
    int pos = i - c + 1 + j;
    if (pos < 0) {
      k.tokens[static_cast<std::size_t>(j)] = -1;
      k.deltas[static_cast<std::size_t>(j)] = 1;
    } else {
      k.tokens[static_cast<std::size_t>(j)] = b.permuted_tokens[static_cast<std::size_t>(pos)];
      k.deltas[static_cast<std::size_t>(j)] = detail::clamp_delta(b.plan.deltas[static_cast<std::size_t>(pos)], hp.window);
    }
  }
  k.target_delta = detail::clamp_delta(b.plan.deltas[static_cast<std::size_t>(i)], hp.window);
  return k;
}

// Key for a plain next-token query: natural reading order, all offsets 1.
inline ContextKey ntp_key(std::span<const int> context, const ToyHyperparams& hp) {
  int c = hp.context_width;
  ContextKey k;
  k.tokens.assign(static_cast<std::size_t>(c), -1);
  k.deltas.assign(static_cast<std::size_t>(c), 1);
  k.target_delta = 1;
  int have = std::min<int>(c, static_cast<int>(context.size()));
  for (int j = 0; j < have; ++j)
    k.tokens[static_cast<std::size_t>(c - 1 - j)] = context[context.size() - 1 - static_cast<std::size_t>(j)];
  return k;
}

// Key for predicting the token `ell` places back with `ell` later tokens
// visible, laid out exactly as training produces inside a rotated block:
// natural context, then the futures carrying offsets -1..-ell.
inline ContextKey ptp_key(std::span<const int> context, std::span<const int> future, int ell,
                          const ToyHyperparams& hp) {
  int c = hp.context_width;
  if (ell >= hp.window)
    throw unsupported_offset_error("ptp_key: offset " + std::to_string(ell) + " needs a window larger than " +
                                   std::to_string(hp.window));
  if (ell >= c) throw unsupported_offset_error("ptp_key: offset exceeds the context width");
  if (static_cast<int>(future.size()) != ell) throw std::invalid_argument("ptp_key: need exactly ell future tokens");
  ContextKey k = ntp_key(context, hp);
  // shift left to make room for the futures
  for (int j = 0; j + ell < c; ++j) k.tokens[static_cast<std::size_t>(j)] = k.tokens[static_cast<std::size_t>(j + ell)];
  for (int j = 0; j < ell; ++j) {
    k.tokens[static_cast<std::size_t>(c - ell + j)] = future[static_cast<std::size_t>(j)];
    k.deltas[static_cast<std::size_t>(c - ell + j)] = -(j + 1);
  }
  k.target_delta = -ell;
  return k;
}

inline Distribution ntp_conditional(const ToyModel& m, std::span<const int> context) {
  return m.forward(ntp_key(context, m.hyperparams()));
}

// ell = 0 degrades to the plain next-token conditional.
inline Distribution ptp_conditional(const ToyModel& m, std::span<const int> context,
                                    std::span<const int> future, int ell) {
  if (ell == 0) {
    if (!future.empty()) throw std::invalid_argument("ptp_conditional: ell = 0 takes no future tokens");
    return ntp_conditional(m, context);
  }
  return m.forward(ptp_key(context, future, ell, m.hyperparams()));
}

using SparseGrad = std::unordered_map<ContextKey, std::vector<double>, ContextKeyHash>;

struct LossAndGrad {
  double loss = 0.0;   // mean cross-entropy over unmasked positions
  SparseGrad grad;     // d loss / d logits, rows summed over positions
};

// Cross-entropy of the batch targets under the model; the gradient of each
// touched row is (softmax - one_hot) / num_unmasked, accumulated in position
// order so results do not depend on hash-table iteration.
inline LossAndGrad loss_and_grad(const ToyModel& m, const BatchSpec& b) {
  const ToyHyperparams& hp = m.hyperparams();
  if (b.plan.window > hp.window)
    throw std::invalid_argument("loss_and_grad: batch window exceeds the model window");
  int n = static_cast<int>(b.tokens.size());
  int unmasked = 0;
  for (int i = 0; i < n; ++i)
    if (!b.loss_mask[static_cast<std::size_t>(i)]) ++unmasked;
  if (unmasked == 0) throw std::invalid_argument("loss_and_grad: every position is masked");

  LossAndGrad out;
  double inv = 1.0 / static_cast<double>(unmasked);
  for (int i = 0; i < n; ++i) {
    if (b.loss_mask[static_cast<std::size_t>(i)]) continue;
    int target = b.targets[static_cast<std::size_t>(i)];
    if (target < 0 || target >= hp.vocab) throw std::invalid_argument("loss_and_grad: target token out of range");
    ContextKey key = batch_key(b, i, hp);
    Distribution p = m.forward(key);
    out.loss += -std::log(p[target]) * inv;
    auto& g = out.grad[key];
    if (g.empty()) g.assign(static_cast<std::size_t>(hp.vocab), 0.0);
    for (int t = 0; t < hp.vocab; ++t) g[static_cast<std::size_t>(t)] += p[t] * inv;
    g[static_cast<std::size_t>(target)] -= inv;
  }
  return out;
}

// Plain SGD step: logits -= learning_rate * grad.
inline void apply_update(ToyModel& m, const SparseGrad& grad, double learning_rate) {
  for (const auto& [key, g] : grad) m.add_to_row(key, g, -learning_rate);
}

struct TrainParams {
  int steps = 1000;
  int seq_len = 64;
  double permute_prob = 0.5;  // s: fraction of sequences trained with a rotated layout
  double swap_prob = 0.02;    // q: per-position rotation probability within those
  int window = 2;             // w: rotation width

  void validate() const {
    if (steps < 1) throw std::invalid_argument("TrainParams: steps must be positive");
    if (seq_len < 2) throw std::invalid_argument("TrainParams: seq_len must be at least 2");
    if (permute_prob < 0.0 || permute_prob > 1.0)
      throw std::invalid_argument("TrainParams: permute_prob must be in [0, 1]");
    if (swap_prob < 0.0 || swap_prob > 1.0) throw std::invalid_argument("TrainParams: swap_prob must be in [0, 1]");
    if (window < 2) throw std::invalid_argument("TrainParams: window must be at least 2");
  }
};

struct StepLoss {
  int step = 0;
  double loss = 0.0;
};

// Per-step losses split by what the position predicts: natural next-token
// positions (offset 1 or w) versus resampled positions, one trace per
// lookback offset ell in 1..w-1. Steps without positions of a class are
// simply absent from that trace.
struct TrainReport {
  std::vector<StepLoss> ntp_trace;
  std::vector<std::vector<StepLoss>> ptp_traces;
  double final_loss = 0.0;
};

using TrainObserver = std::function<void(int steps_done, const ToyModel&)>;

inline TrainReport train(ToyModel& m, const SourceSpec& source, const TrainParams& params, Rng& rng,
                         const TrainObserver& observer = nullptr) {
  params.validate();
  source.validate();
  const ToyHyperparams& hp = m.hyperparams();
  if (source.vocab != hp.vocab) throw std::invalid_argument("train: source and model vocabularies differ");
  if (params.window > hp.window) throw std::invalid_argument("train: training window exceeds the model window");
  if (params.seq_len < source.order) throw std::invalid_argument("train: seq_len shorter than the source order");

  TrainReport report;
  report.ptp_traces.resize(static_cast<std::size_t>(params.window - 1));
  for (int step = 0; step < params.steps; ++step) {
    BatchSpec batch = make_training_batch(sample_source(source, params.seq_len, rng), params.permute_prob,
                                          params.swap_prob, params.window, rng);
    LossAndGrad lg = loss_and_grad(m, batch);
    if (!std::isfinite(lg.loss))
      throw training_diverged_error("train: non-finite loss at step " + std::to_string(step));
    apply_update(m, lg.grad, hp.learning_rate);
    report.final_loss = lg.loss;

    // class-wise means for the traces, recomputed from the batch layout
    double ntp_sum = 0.0;
    int ntp_n = 0;
    std::vector<double> ptp_sum(static_cast<std::size_t>(params.window - 1), 0.0);
    std::vector<int> ptp_n(static_cast<std::size_t>(params.window - 1), 0);
    int n = static_cast<int>(batch.tokens.size());
    for (int i = 0; i < n; ++i) {
      if (batch.loss_mask[static_cast<std::size_t>(i)]) continue;
      ContextKey key = batch_key(batch, i, hp);
      double nll = -std::log(m.forward(key)[batch.targets[static_cast<std::size_t>(i)]]);
      int d = batch.plan.deltas[static_cast<std::size_t>(i)];
      if (d < 0) {
        ptp_sum[static_cast<std::size_t>(-d - 1)] += nll;
        ptp_n[static_cast<std::size_t>(-d - 1)] += 1;
      } else {
        ntp_sum += nll;
        ntp_n += 1;
      }
    }
    if (ntp_n > 0) report.ntp_trace.push_back(StepLoss{step, ntp_sum / ntp_n});
    for (int ell = 1; ell < params.window; ++ell)
      if (ptp_n[static_cast<std::size_t>(ell - 1)] > 0)
        report.ptp_traces[static_cast<std::size_t>(ell - 1)].push_back(
            StepLoss{step, ptp_sum[static_cast<std::size_t>(ell - 1)] / ptp_n[static_cast<std::size_t>(ell - 1)]});
    if (observer) observer(step + 1, m);
  }
  return report;
}

// Model whose conditionals equal the source's exact ones, for oracle tests:
// every full-context key is enumerated, natural and rotated layouts alike.
// Zero probabilities get a large negative logit (the softmax then returns
// them as exactly representable underflow, well below any test tolerance).
inline ToyModel make_exact_model(const SourceSpec& source, int window) {
  source.validate();
  ToyHyperparams hp;
  hp.vocab = source.vocab;
  hp.window = window;
  hp.context_width = source.order + window - 1;
  ToyModel m(hp);

  constexpr double kLogFloor = -700.0;
  int c = hp.context_width;
  std::vector<int> combo(static_cast<std::size_t>(c), 0);
  auto for_each_combo = [&](auto&& body) {
    std::fill(combo.begin(), combo.end(), 0);
    while (true) {
      body(combo);
      int j = c - 1;
      while (j >= 0 && ++combo[static_cast<std::size_t>(j)] == source.vocab) {
        combo[static_cast<std::size_t>(j)] = 0;
        --j;
      }
      if (j < 0) break;
    }
  };

  auto logits_of = [&](const Distribution& d) {
    std::vector<double> z(static_cast<std::size_t>(source.vocab));
    for (int t = 0; t < source.vocab; ++t) z[static_cast<std::size_t>(t)] = d[t] > 0.0 ? std::log(d[t]) : kLogFloor;
    return z;
  };

  for_each_combo([&](const std::vector<int>& tokens) {
    m.set_row(ntp_key(tokens, hp), logits_of(exact_source_conditional(source, tokens)));
  });
  for (int ell = 1; ell < window; ++ell) {
    for_each_combo([&](const std::vector<int>& tokens) {
      std::span<const int> ctx(tokens.data(), static_cast<std::size_t>(c - ell));
      std::span<const int> fut(tokens.data() + (c - ell), static_cast<std::size_t>(ell));
      try {
        m.set_row(ptp_key(ctx, fut, ell, hp), logits_of(exact_ptp_conditional(source, ctx, fut, ell)));
      } catch (const degenerate_conditioning_error&) {
        // future impossible under the source: the key can never be queried
        // from real text, leave it at the uniform fallback
      }
    });
  }
  return m;
}

struct ValidationScores {
  double ntp_ce = 0.0;
  std::vector<double> ptp_ce;  // index ell-1
  int positions = 0;
};

// Held-out cross-entropies: every class of conditional is scored against the
// same stream positions, each PTP-ell query seeing the true later tokens.
inline ValidationScores evaluate_model(const ToyModel& m, const SourceSpec& source, int positions, Rng& rng) {
  const ToyHyperparams& hp = m.hyperparams();
  int w = hp.window;
  int lead = std::max(hp.context_width, source.order);
  std::vector<int> stream = sample_source(source, positions + lead + w, rng);
  ValidationScores v;
  v.ptp_ce.assign(static_cast<std::size_t>(w - 1), 0.0);
  int n = 0;
  for (int i = lead; i < static_cast<int>(stream.size()) - w + 1 && n < positions; ++i, ++n) {
    std::span<const int> ctx(stream.data(), static_cast<std::size_t>(i));
    v.ntp_ce += -std::log(ntp_conditional(m, ctx)[stream[static_cast<std::size_t>(i)]]);
    for (int ell = 1; ell < w; ++ell) {
      std::span<const int> fut(stream.data() + i + 1, static_cast<std::size_t>(ell));
      v.ptp_ce[static_cast<std::size_t>(ell - 1)] +=
          -std::log(ptp_conditional(m, ctx, fut, ell)[stream[static_cast<std::size_t>(i)]]);
    }
  }
  if (n == 0) throw std::invalid_argument("evaluate_model: no scorable positions");
  v.ntp_ce /= n;
  for (double& x : v.ptp_ce) x /= n;
  v.positions = n;
  return v;
}

// Mean total variation between the model's next-token conditional and the
// source's exact one, over held-out stream positions.
inline double eval_ntp_tv(const ToyModel& m, const SourceSpec& source, int positions, Rng& rng) {
  int lead = std::max(m.hyperparams().context_width, source.order);
  std::vector<int> stream = sample_source(source, positions + lead, rng);
  double sum = 0.0;
  int n = 0;
  for (int i = lead; i < static_cast<int>(stream.size()); ++i, ++n) {
    std::span<const int> ctx(stream.data(), static_cast<std::size_t>(i));
    sum += tv_distance(ntp_conditional(m, ctx), exact_source_conditional(source, ctx));
  }
  if (n == 0) throw std::invalid_argument("eval_ntp_tv: no scorable positions");
  return sum / n;
}

}  // namespace rpt
