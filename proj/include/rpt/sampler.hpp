#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rpt/model.hpp"
#include "rpt/prob.hpp"
#include "rpt/rng.hpp"
#include "rpt/source.hpp"

namespace rpt {

struct SamplerConfig {
  int window = 0;           // 0 = plain next-token sampling; 2 or 3 enable refinement
  double iterations = 0.0;  // sweeps per newly completed window; a trailing .5 runs
                            // the resample passes once more without the closing
                            // next-token redraw
  double temperature = 1.0;
  bool greedy_ptp = false;             // take resample proposals by argmax
  std::optional<double> confidence;    // accept a change only above this probability

  void validate() const {
    if (window != 0 && window != 2 && window != 3)
      throw std::invalid_argument("SamplerConfig: window must be 0, 2, or 3");
    if (iterations < 0.0) throw std::invalid_argument("SamplerConfig: iterations must be non-negative");
    double doubled = iterations * 2.0;
    if (std::abs(doubled - std::round(doubled)) > 1e-9)
      throw std::invalid_argument("SamplerConfig: iterations must be a multiple of 0.5");
    if (iterations > 0.0 && window < 2)
      throw std::invalid_argument("SamplerConfig: refinement iterations require a window of at least 2");
    if (temperature < 0.0) throw std::invalid_argument("SamplerConfig: temperature must be non-negative");
    if (confidence && (*confidence <= 0.0 || *confidence > 1.0))
      throw std::invalid_argument("SamplerConfig: confidence must be in (0, 1]");
  }
};

// Temperature 0 is argmax with lowest-index tie-breaking and consumes no
// randomness; other temperatures sample p^(1/T) renormalized.
inline int sample_with_temperature(const Distribution& d, double temperature, Rng& rng) {
  if (temperature == 0.0) {
    int best = 0;
    for (int i = 1; i < d.size(); ++i)
      if (d[i] > d[best]) best = i;
    return best;
  }
  if (temperature == 1.0) return rng.sample(d.values());
  std::vector<double> w(static_cast<std::size_t>(d.size()));
  for (int i = 0; i < d.size(); ++i) w[static_cast<std::size_t>(i)] = std::pow(d[i], 1.0 / temperature);
  return rng.sample(normalize(w).values());
}

inline int argmax_token(const Distribution& d) {
  int best = 0;
  for (int i = 1; i < d.size(); ++i)
    if (d[i] > d[best]) best = i;
  return best;
}

// One refinement draw. `accepted` is false only when a confidence threshold
// kept the incumbent; replaying the accepted events over the initial tokens
// reproduces the final sequence.
struct ReplacementEvent {
  int position = 0;   // absolute index into prompt + generated tokens
  int iteration = 0;  // sweep number within this window anchor, starting at 1
  int old_token = 0;
  int new_token = 0;  // the proposal; equals the kept token when rejected
  bool accepted = true;
};

struct GenerationTrace {
  std::vector<int> prompt;
  std::vector<int> initial_tokens;  // generated tokens as first drawn, before refinement
  std::vector<ReplacementEvent> events;
  std::vector<int> final_tokens;    // prompt followed by refined generated tokens
};

inline std::vector<int> replay_trace(const GenerationTrace& t) {
  std::vector<int> seq = t.prompt;
  seq.insert(seq.end(), t.initial_tokens.begin(), t.initial_tokens.end());
  for (const ReplacementEvent& e : t.events)
    if (e.accepted) seq[static_cast<std::size_t>(e.position)] = e.new_token;
  return seq;
}

inline GenerationTrace ntp_generate(const ToyModel& m, std::vector<int> prompt, int length,
                                    const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  if (length < 0) throw std::invalid_argument("ntp_generate: length must be non-negative");
  GenerationTrace t;
  t.prompt = std::move(prompt);
  std::vector<int> seq = t.prompt;
  for (int i = 0; i < length; ++i) {
    int x = sample_with_temperature(ntp_conditional(m, seq), cfg.temperature, rng);
    seq.push_back(x);
    t.initial_tokens.push_back(x);
  }
  t.final_tokens = std::move(seq);
  return t;
}

namespace detail {

// Resample passes of one sweep over window positions [first, last), each
// conditioned on everything before it plus the later tokens in the window.
inline void sweep_resamples(const ToyModel& m, std::vector<int>& seq, int first, int last, int iteration,
                            const SamplerConfig& cfg, Rng& rng, std::vector<ReplacementEvent>& events) {
  for (int p = first; p < last; ++p) {
    int ell = last - p;
    std::span<const int> ctx(seq.data(), static_cast<std::size_t>(p));
    std::span<const int> fut(seq.data() + p + 1, static_cast<std::size_t>(ell));
    Distribution d = ptp_conditional(m, ctx, fut, ell);
    int proposal = cfg.greedy_ptp ? argmax_token(d) : sample_with_temperature(d, cfg.temperature, rng);
    int incumbent = seq[static_cast<std::size_t>(p)];
    bool accepted = true;
    if (proposal != incumbent && cfg.confidence && !(d[proposal] > *cfg.confidence)) accepted = false;
    if (accepted) seq[static_cast<std::size_t>(p)] = proposal;
    events.push_back(ReplacementEvent{p, iteration, incumbent, proposal, accepted});
  }
}

}  // namespace detail

// Left-to-right generation where every newly completed window of the last w
// generated tokens is refined for `iterations` sweeps: each sweep resamples
// the earlier window positions given the later ones, then redraws the last
// position from its plain next-token conditional. iterations = 0 reproduces
// ntp_generate exactly, randomness included. Prompt tokens are never touched.
inline GenerationTrace rpt_generate(const ToyModel& m, std::vector<int> prompt, int length,
                                    const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  if (length < 0) throw std::invalid_argument("rpt_generate: length must be non-negative");
  int w = cfg.window;
  int full_sweeps = static_cast<int>(cfg.iterations);
  bool half_sweep = cfg.iterations - full_sweeps > 0.0;

  GenerationTrace t;
  t.prompt = std::move(prompt);
  int prompt_len = static_cast<int>(t.prompt.size());
  std::vector<int> seq = t.prompt;
  for (int i = 0; i < length; ++i) {
    int x = sample_with_temperature(ntp_conditional(m, seq), cfg.temperature, rng);
    seq.push_back(x);
    t.initial_tokens.push_back(x);
    int last = static_cast<int>(seq.size()) - 1;
    int first = last - w + 1;
    if (w < 2 || cfg.iterations == 0.0 || first < prompt_len) continue;
    for (int sweep = 1; sweep <= full_sweeps; ++sweep) {
      detail::sweep_resamples(m, seq, first, last, sweep, cfg, rng, t.events);
      std::span<const int> ctx(seq.data(), static_cast<std::size_t>(last));
      int redrawn = sample_with_temperature(ntp_conditional(m, ctx), cfg.temperature, rng);
      t.events.push_back(ReplacementEvent{last, sweep, seq[static_cast<std::size_t>(last)], redrawn, true});
      seq[static_cast<std::size_t>(last)] = redrawn;
    }
    if (half_sweep) detail::sweep_resamples(m, seq, first, last, full_sweeps + 1, cfg, rng, t.events);
  }
  t.final_tokens = std::move(seq);
  return t;
}

// One window-2 refinement step applied to the pair (prev, next) just after
// `prefix`: redraw prev from its resample conditional given next, then next
// from its next-token conditional given the fresh prev.
inline std::pair<int, int> rpt_refine_pair(const ToyModel& m, std::span<const int> prefix, int prev, int next,
                                           const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.window != 2) throw std::invalid_argument("rpt_refine_pair: window must be 2");
  int fut[1] = {next};
  Distribution dp = ptp_conditional(m, prefix, fut, 1);
  int proposal = cfg.greedy_ptp ? argmax_token(dp) : sample_with_temperature(dp, cfg.temperature, rng);
  int new_prev = prev;
  if (proposal == prev || !cfg.confidence || dp[proposal] > *cfg.confidence) new_prev = proposal;
  std::vector<int> ctx(prefix.begin(), prefix.end());
  ctx.push_back(new_prev);
  int new_next = sample_with_temperature(ntp_conditional(m, ctx), cfg.temperature, rng);
  return {new_prev, new_next};
}

// The model's pair conditionals at a fixed context, assembled by querying
// every conditioning token: prev_given_next slice b is the resample
// conditional with future token b, next_given_prev slice a the next-token
// conditional after appending a.
struct PairConditionals {
  ConditionalMatrix prev_given_next;
  ConditionalMatrix next_given_prev;
};

inline PairConditionals model_pair_conditionals(const ToyModel& m, std::span<const int> context) {
  int v = m.hyperparams().vocab;
  std::vector<Distribution> pgn, ngp;
  pgn.reserve(static_cast<std::size_t>(v));
  ngp.reserve(static_cast<std::size_t>(v));
  for (int b = 0; b < v; ++b) {
    int fut[1] = {b};
    pgn.push_back(ptp_conditional(m, context, fut, 1));
  }
  std::vector<int> ctx(context.begin(), context.end());
  for (int a = 0; a < v; ++a) {
    ctx.push_back(a);
    ngp.push_back(ntp_conditional(m, ctx));
    ctx.pop_back();
  }
  return PairConditionals{ConditionalMatrix::from_slices(pgn), ConditionalMatrix::from_slices(ngp)};
}

// Exact distribution of one refinement step from the pair state (prev,
// next), by enumerating both draws. Matches the corresponding row of the
// pair kernel built from the same conditionals.
inline std::vector<double> refine_pair_distribution(const ToyModel& m, std::span<const int> context, int prev,
                                                    int next) {
  (void)prev;  // the step forgets prev; only next conditions the redraw
  PairConditionals pc = model_pair_conditionals(m, context);
  int v = m.hyperparams().vocab;
  std::vector<double> out(static_cast<std::size_t>(v) * v);
  for (int a2 = 0; a2 < v; ++a2) {
    double pa2 = pc.prev_given_next.prob(a2, next);
    for (int b2 = 0; b2 < v; ++b2)
      out[static_cast<std::size_t>(a2) * v + b2] = pa2 * pc.next_given_prev.prob(b2, a2);
  }
  return out;
}

namespace detail {

// Pair distribution over (token at the slot, its successor) after k
// refinement steps, starting from the model's own next-token joint. The
// kernel's rows depend on the source pair only through its next component,
// so one step costs O(V^2).
inline std::vector<double> propagate_pair(const PairConditionals& pc, const Distribution& first_token, int k) {
  int v = first_token.size();
  std::vector<double> rho(static_cast<std::size_t>(v) * v);
  for (int a = 0; a < v; ++a)
    for (int b = 0; b < v; ++b)
      rho[static_cast<std::size_t>(a) * v + b] = first_token[a] * pc.next_given_prev.prob(b, a);
  std::vector<double> mnext(static_cast<std::size_t>(v)), u(static_cast<std::size_t>(v));
  for (int step = 0; step < k; ++step) {
    std::fill(mnext.begin(), mnext.end(), 0.0);
    for (int a = 0; a < v; ++a)
      for (int b = 0; b < v; ++b) mnext[static_cast<std::size_t>(b)] += rho[static_cast<std::size_t>(a) * v + b];
    std::fill(u.begin(), u.end(), 0.0);
    for (int b = 0; b < v; ++b) {
      double mb = mnext[static_cast<std::size_t>(b)];
      if (mb == 0.0) continue;
      for (int a2 = 0; a2 < v; ++a2) u[static_cast<std::size_t>(a2)] += mb * pc.prev_given_next.prob(a2, b);
    }
    for (int a2 = 0; a2 < v; ++a2)
      for (int b2 = 0; b2 < v; ++b2)
        rho[static_cast<std::size_t>(a2) * v + b2] = u[static_cast<std::size_t>(a2)] * pc.next_given_prev.prob(b2, a2);
  }
  return rho;
}

}  // namespace detail

// Probability the window-2 refinement process assigns to `token` at the slot
// after `context`, once k refinement steps have acted on the (slot,
// successor) pair. Computed exactly, no sampling noise; k = 0 is the plain
// next-token probability.
inline double refined_token_probability(const ToyModel& m, std::span<const int> context, int token, int k) {
  if (k < 0) throw std::invalid_argument("refined_token_probability: k must be non-negative");
  if (k > 0 && m.hyperparams().window < 2)
    throw std::invalid_argument("refined_token_probability: refinement needs a window-2 model");
  int v = m.hyperparams().vocab;
  Distribution first = ntp_conditional(m, context);
  if (k == 0) return first[token];
  PairConditionals pc = model_pair_conditionals(m, context);
  std::vector<double> rho = detail::propagate_pair(pc, first, k);
  double p = 0.0;
  for (int b = 0; b < v; ++b) p += rho[static_cast<std::size_t>(token) * v + b];
  return p;
}

struct TvErrorResult {
  double mean_error = 0.0;  // mean of 1 - refined probability of the true token
  int used = 0;
  int skipped = 0;  // positions with fewer than min_context prior tokens
};

// Mean error 1 - p_hat_k(true token | true context) over a held-out stream,
// teacher-forced: every query context is ground truth.
inline TvErrorResult empirical_tv_error(const ToyModel& m, const SourceSpec& source, int num_tokens, int k,
                                        int min_context, Rng& rng) {
  if (num_tokens < 1) throw std::invalid_argument("empirical_tv_error: num_tokens must be positive");
  if (min_context < source.order)
    throw std::invalid_argument("empirical_tv_error: min_context must cover the source order");
  std::vector<int> stream = sample_source(source, num_tokens + min_context, rng);
  TvErrorResult r;
  r.skipped = min_context;
  double sum = 0.0;
  for (int i = min_context; i < static_cast<int>(stream.size()); ++i) {
    std::span<const int> ctx(stream.data(), static_cast<std::size_t>(i));
    sum += 1.0 - refined_token_probability(m, ctx, stream[static_cast<std::size_t>(i)], k);
    ++r.used;
  }
  r.mean_error = sum / r.used;
  return r;
}

struct ImprovementResult {
  double fraction = 0.0;  // improved / (improved + worsened); NaN when degenerate
  long improved = 0;
  long worsened = 0;
  long ties = 0;  // |difference| <= 1e-10, excluded from the denominator
  int used = 0;
  bool degenerate = false;  // every position tied
  double lo = 0.0, hi = 0.0;
  std::vector<long> counts;  // 50 uniform bins of the differences over [lo, hi]
};

inline constexpr double kTieTol = 1e-10;

// Distribution of p_hat_1 - p_hat_0 for the true token over held-out
// positions: how often one refinement step raises the truth's probability.
inline ImprovementResult improvement_fraction(const ToyModel& m, const SourceSpec& source, int num_tokens,
                                              int min_context, Rng& rng) {
  std::vector<int> stream = sample_source(source, num_tokens + min_context, rng);
  std::vector<double> diffs;
  ImprovementResult r;
  for (int i = min_context; i < static_cast<int>(stream.size()); ++i) {
    std::span<const int> ctx(stream.data(), static_cast<std::size_t>(i));
    int truth = stream[static_cast<std::size_t>(i)];
    double p0 = refined_token_probability(m, ctx, truth, 0);
    double p1 = refined_token_probability(m, ctx, truth, 1);
    double d = p1 - p0;
    diffs.push_back(d);
    if (std::abs(d) <= kTieTol)
      ++r.ties;
    else if (d > 0.0)
      ++r.improved;
    else
      ++r.worsened;
  }
  r.used = static_cast<int>(diffs.size());
  r.degenerate = (r.improved + r.worsened) == 0;
  r.fraction = r.degenerate ? std::nan("") : static_cast<double>(r.improved) / (r.improved + r.worsened);
  r.lo = r.hi = diffs.empty() ? 0.0 : diffs[0];
  for (double d : diffs) {
    r.lo = std::min(r.lo, d);
    r.hi = std::max(r.hi, d);
  }
  r.counts.assign(50, 0);
  double span = r.hi - r.lo;
  for (double d : diffs) {
    int bin = span > 0.0 ? static_cast<int>((d - r.lo) / span * 50.0) : 0;
    r.counts[static_cast<std::size_t>(std::clamp(bin, 0, 49))] += 1;
  }
  return r;
}

}  // namespace rpt
