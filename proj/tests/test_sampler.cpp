#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <span>
#include <vector>

#include "rpt/markov.hpp"
#include "rpt/model.hpp"
#include "rpt/sampler.hpp"
#include "rpt/source.hpp"

using namespace rpt;

namespace {

// Exact model with its plain next-token rows mixed toward uniform, so the
// first draw is wrong in a way the exact lookback conditionals can repair.
ToyModel blurred_exact_model(const SourceSpec& s, int window, double blur) {
  ToyModel m = make_exact_model(s, window);
  int v = m.hyperparams().vocab;
  for (const ContextKey& k : m.sorted_keys()) {
    if (k.target_delta != 1) continue;
    std::vector<double> p = softmax(m.row(k));
    std::vector<double> z(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) z[i] = std::log((1.0 - blur) * p[i] + blur / v);
    m.set_row(k, z);
  }
  return m;
}

SamplerConfig make_cfg(int window, double iterations) {
  SamplerConfig cfg;
  cfg.window = window;
  cfg.iterations = iterations;
  return cfg;
}

}  // namespace

TEST_CASE("sampler configs validate their ranges", "[sampler]") {
  REQUIRE_NOTHROW(make_cfg(0, 0.0).validate());
  REQUIRE_NOTHROW(make_cfg(2, 1.5).validate());
  REQUIRE_NOTHROW(make_cfg(3, 0.5).validate());

  REQUIRE_THROWS_AS(make_cfg(1, 0.0).validate(), std::invalid_argument);
  REQUIRE_THROWS_AS(make_cfg(4, 0.0).validate(), std::invalid_argument);
  REQUIRE_THROWS_AS(make_cfg(2, -0.5).validate(), std::invalid_argument);
  REQUIRE_THROWS_AS(make_cfg(2, 0.3).validate(), std::invalid_argument);
  REQUIRE_THROWS_AS(make_cfg(0, 1.0).validate(), std::invalid_argument);

  SamplerConfig cfg = make_cfg(2, 1.0);
  cfg.temperature = -0.1;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.temperature = 1.0;
  cfg.confidence = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.confidence = 1.1;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.confidence = 1.0;
  REQUIRE_NOTHROW(cfg.validate());
}

TEST_CASE("temperature zero is a deterministic argmax that spends no randomness", "[sampler]") {
  Distribution d({0.4, 0.4, 0.2});
  Rng used(5), fresh(5);
  REQUIRE(sample_with_temperature(d, 0.0, used) == 0);  // lowest index wins the tie
  REQUIRE(used.next_u64() == fresh.next_u64());
  REQUIRE(argmax_token(Distribution({0.1, 0.5, 0.4})) == 1);
  REQUIRE(argmax_token(d) == 0);
}

TEST_CASE("temperature one draws exactly like the raw sampler", "[sampler]") {
  Distribution d({0.5, 0.25, 0.25});
  Rng r1(31), r2(31);
  for (int i = 0; i < 50; ++i) REQUIRE(sample_with_temperature(d, 1.0, r1) == r2.sample(d.values()));
}

TEST_CASE("low temperature sharpens the draw", "[sampler]") {
  Distribution d({0.8, 0.2});
  Rng rng(77);
  long zeros = 0;
  int n = 20000;
  for (int i = 0; i < n; ++i)
    if (sample_with_temperature(d, 0.5, rng) == 0) ++zeros;
  // p^2 renormalized: 0.64 / 0.68 = 16/17
  REQUIRE(static_cast<double>(zeros) / n == Catch::Approx(16.0 / 17.0).margin(0.01));
}

TEST_CASE("zero refinement iterations reproduce plain generation, randomness included", "[sampler]") {
  SourceSpec s = make_echo_source();
  ToyModel m = make_exact_model(s, 2);
  std::vector<int> prompt = {3, 0};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng r1(seed), r2(seed);
    GenerationTrace plain = ntp_generate(m, prompt, 12, make_cfg(0, 0.0), r1);
    GenerationTrace refined = rpt_generate(m, prompt, 12, make_cfg(2, 0.0), r2);
    REQUIRE(refined.final_tokens == plain.final_tokens);
    REQUIRE(refined.initial_tokens == plain.initial_tokens);
    REQUIRE(refined.events.empty());
  }
}

TEST_CASE("deterministic generation follows the cycle", "[sampler]") {
  SourceSpec s = make_deterministic_source(4, 1);
  ToyModel m = make_exact_model(s, 2);
  SamplerConfig cfg = make_cfg(0, 0.0);
  cfg.temperature = 0.0;
  Rng rng(1);
  GenerationTrace t = ntp_generate(m, {3, 0}, 5, cfg, rng);
  REQUIRE(t.final_tokens == std::vector<int>{3, 0, 1, 2, 3, 0, 1});

  REQUIRE_THROWS_AS(ntp_generate(m, {3, 0}, -1, cfg, rng), std::invalid_argument);
  REQUIRE_THROWS_AS(rpt_generate(m, {3, 0}, -1, cfg, rng), std::invalid_argument);
}

TEST_CASE("replaying the accepted events reproduces the final sequence", "[sampler]") {
  SourceSpec s = make_coupled_source(4, 1, 0.6);

  SECTION("window 2 with a trailing half sweep") {
    ToyModel m = blurred_exact_model(s, 2, 0.5);
    Rng rng(404);
    GenerationTrace t = rpt_generate(m, {0, 1}, 30, make_cfg(2, 1.5), rng);
    REQUIRE(replay_trace(t) == t.final_tokens);
    REQUIRE(!t.events.empty());
  }

  SECTION("window 3 with one full sweep") {
    ToyModel m = blurred_exact_model(s, 3, 0.5);
    Rng rng(405);
    GenerationTrace t = rpt_generate(m, {0, 1, 2}, 30, make_cfg(3, 1.0), rng);
    REQUIRE(replay_trace(t) == t.final_tokens);
    REQUIRE(!t.events.empty());
  }

  SECTION("with a confidence gate in play") {
    ToyModel m = blurred_exact_model(s, 2, 0.5);
    SamplerConfig cfg = make_cfg(2, 2.0);
    cfg.confidence = 0.6;
    Rng rng(406);
    GenerationTrace t = rpt_generate(m, {0, 1}, 30, cfg, rng);
    REQUIRE(replay_trace(t) == t.final_tokens);
    bool any_rejected = false;
    for (const ReplacementEvent& e : t.events) any_rejected = any_rejected || !e.accepted;
    REQUIRE(any_rejected);
  }
}

TEST_CASE("events follow the sweep pattern of the window", "[sampler]") {
  SourceSpec s = make_coupled_source(4, 1, 0.6);

  SECTION("window 2, one sweep plus a half") {
    ToyModel m = blurred_exact_model(s, 2, 0.5);
    Rng rng(42);
    int prompt_len = 2, length = 10;
    GenerationTrace t = rpt_generate(m, {0, 1}, length, make_cfg(2, 1.5), rng);
    // Anchors are the generated positions whose window avoids the prompt.
    int anchors = length - 1;
    REQUIRE(t.events.size() == static_cast<std::size_t>(3 * anchors));
    for (int a = 0; a < anchors; ++a) {
      int last = prompt_len + 1 + a;
      const ReplacementEvent& resample = t.events[static_cast<std::size_t>(3 * a)];
      const ReplacementEvent& redraw = t.events[static_cast<std::size_t>(3 * a + 1)];
      const ReplacementEvent& half = t.events[static_cast<std::size_t>(3 * a + 2)];
      REQUIRE(resample.position == last - 1);
      REQUIRE(resample.iteration == 1);
      REQUIRE(redraw.position == last);
      REQUIRE(redraw.iteration == 1);
      REQUIRE(redraw.accepted);
      REQUIRE(half.position == last - 1);
      REQUIRE(half.iteration == 2);
    }
  }

  SECTION("window 3, one sweep") {
    ToyModel m = blurred_exact_model(s, 3, 0.5);
    Rng rng(43);
    int prompt_len = 3, length = 10;
    GenerationTrace t = rpt_generate(m, {0, 1, 2}, length, make_cfg(3, 1.0), rng);
    int anchors = length - 2;
    REQUIRE(t.events.size() == static_cast<std::size_t>(3 * anchors));
    for (int a = 0; a < anchors; ++a) {
      int last = prompt_len + 2 + a;
      REQUIRE(t.events[static_cast<std::size_t>(3 * a)].position == last - 2);
      REQUIRE(t.events[static_cast<std::size_t>(3 * a + 1)].position == last - 1);
      REQUIRE(t.events[static_cast<std::size_t>(3 * a + 2)].position == last);
      for (int j = 0; j < 3; ++j) REQUIRE(t.events[static_cast<std::size_t>(3 * a + j)].iteration == 1);
    }
  }

  SECTION("a pure half sweep never redraws the anchor") {
    ToyModel m = blurred_exact_model(s, 2, 0.5);
    Rng rng(44);
    GenerationTrace t = rpt_generate(m, {0, 1}, 10, make_cfg(2, 0.5), rng);
    REQUIRE(t.events.size() == 9);
    for (const ReplacementEvent& e : t.events) REQUIRE(e.iteration == 1);
    // Every event is a resample one slot before its anchor.
    for (std::size_t a = 0; a < t.events.size(); ++a)
      REQUIRE(t.events[a].position == 2 + static_cast<int>(a));
  }
}

TEST_CASE("an impossible confidence threshold keeps every incumbent", "[sampler]") {
  SourceSpec s = make_coupled_source(4, 1, 0.6);
  ToyModel m = blurred_exact_model(s, 2, 0.5);
  SamplerConfig cfg = make_cfg(2, 0.5);  // resamples only, no closing redraws
  cfg.confidence = 1.0;
  Rng rng(7);
  GenerationTrace t = rpt_generate(m, {0, 1}, 20, cfg, rng);
  std::vector<int> untouched = t.prompt;
  untouched.insert(untouched.end(), t.initial_tokens.begin(), t.initial_tokens.end());
  REQUIRE(t.final_tokens == untouched);
  for (const ReplacementEvent& e : t.events)
    if (e.new_token != e.old_token) REQUIRE(!e.accepted);
}

TEST_CASE("a vanishing confidence threshold accepts every proposal", "[sampler]") {
  SourceSpec s = make_coupled_source(4, 1, 0.6);
  ToyModel m = blurred_exact_model(s, 2, 0.5);
  SamplerConfig cfg = make_cfg(2, 1.5);
  cfg.confidence = 1e-12;
  cfg.greedy_ptp = true;  // proposals are argmaxes, probability at least 1/V
  Rng rng(8);
  GenerationTrace t = rpt_generate(m, {0, 1}, 20, cfg, rng);
  for (const ReplacementEvent& e : t.events) REQUIRE(e.accepted);
  REQUIRE(replay_trace(t) == t.final_tokens);
}

TEST_CASE("rpt_refine_pair is the two advertised draws", "[sampler]") {
  SourceSpec s = make_coupled_source(4, 1, 0.6);
  ToyModel m = make_exact_model(s, 2);
  std::vector<int> prefix = {2, 0};
  SamplerConfig cfg = make_cfg(2, 1.0);

  Rng r1(99), r2(99);
  auto [np, nn] = rpt_refine_pair(m, prefix, 1, 3, cfg, r1);

  std::vector<int> fut = {3};
  Distribution dp = ptp_conditional(m, prefix, fut, 1);
  int expect_prev = sample_with_temperature(dp, 1.0, r2);
  std::vector<int> ctx = prefix;
  ctx.push_back(expect_prev);
  int expect_next = sample_with_temperature(ntp_conditional(m, ctx), 1.0, r2);
  REQUIRE(np == expect_prev);
  REQUIRE(nn == expect_next);

  SamplerConfig wrong = make_cfg(3, 1.0);
  Rng r3(1);
  REQUIRE_THROWS_AS(rpt_refine_pair(m, prefix, 1, 3, wrong, r3), std::invalid_argument);
}

TEST_CASE("chained pair refinement settles on the model's pair joint", "[sampler]") {
  SourceSpec s = make_coupled_source(4, 1, 0.6);
  ToyModel m = make_exact_model(s, 2);
  std::vector<int> prefix = {2};
  SamplerConfig cfg = make_cfg(2, 1.0);
  Rng rng(606);

  std::vector<long> counts(16, 0);
  int prev = 0, next = 0;
  int burn = 1000, samples = 200000;
  for (int i = 0; i < burn + samples; ++i) {
    auto [a, b] = rpt_refine_pair(m, prefix, prev, next, cfg, rng);
    prev = a;
    next = b;
    if (i >= burn) counts[static_cast<std::size_t>(prev * 4 + next)] += 1;
  }

  // Ground truth: joint of (slot, successor) after context token 2.
  std::vector<int> ctx2 = {2};
  Distribution pa = exact_source_conditional(s, ctx2);
  double tv = 0.0;
  for (int a = 0; a < 4; ++a) {
    std::vector<int> ctx_a = {2, a};
    Distribution pb = exact_source_conditional(s, ctx_a);
    for (int b = 0; b < 4; ++b) {
      double emp = static_cast<double>(counts[static_cast<std::size_t>(a * 4 + b)]) / samples;
      tv += std::abs(emp - pa[a] * pb[b]);
    }
  }
  REQUIRE(tv / 2.0 < 0.02);
}

TEST_CASE("one-step pair distributions equal the pair kernel rows", "[sampler]") {
  SourceSpec s = make_coupled_source(4, 1, 0.6);
  ToyModel m = make_exact_model(s, 2);
  std::vector<int> ctx = {1};
  PairConditionals pc = model_pair_conditionals(m, ctx);
  TransitionKernel k = build_rpt_kernel(pc.prev_given_next, pc.next_given_prev);
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      std::vector<double> step = refine_pair_distribution(m, ctx, a, b);
      auto row = k.row(TransitionKernel::state_index(a, b, 4));
      for (std::size_t i = 0; i < step.size(); ++i)
        REQUIRE(step[i] == Catch::Approx(row[i]).margin(1e-12));
    }
  }
}

TEST_CASE("pair propagation matches dense kernel powers", "[sampler]") {
  SourceSpec s = make_coupled_source(4, 1, 0.6);
  ToyModel m = make_exact_model(s, 2);
  std::vector<int> full_ctx = {3, 0};  // context_width tokens, so the marginal is exact
  PairConditionals pc = model_pair_conditionals(m, full_ctx);
  Distribution first = ntp_conditional(m, full_ctx);

  int v = 4, states = 16;
  TransitionKernel k = build_rpt_kernel(pc.prev_given_next, pc.next_given_prev);
  std::vector<double> rho(static_cast<std::size_t>(states));
  for (int a = 0; a < v; ++a)
    for (int b = 0; b < v; ++b)
      rho[static_cast<std::size_t>(a * v + b)] = first[a] * pc.next_given_prev.prob(b, a);
  for (int step = 0; step < 3; ++step) {
    std::vector<double> nxt(static_cast<std::size_t>(states), 0.0);
    for (int from = 0; from < states; ++from) {
      auto row = k.row(from);
      for (int to = 0; to < states; ++to) nxt[static_cast<std::size_t>(to)] += rho[static_cast<std::size_t>(from)] * row[static_cast<std::size_t>(to)];
    }
    rho = std::move(nxt);
  }

  std::vector<double> fast = rpt::detail::propagate_pair(pc, first, 3);
  for (int i = 0; i < states; ++i)
    REQUIRE(fast[static_cast<std::size_t>(i)] == Catch::Approx(rho[static_cast<std::size_t>(i)]).margin(1e-12));
}

TEST_CASE("refined probabilities are invariant when the model is exact", "[sampler]") {
  SourceSpec s = make_coupled_source(4, 1, 0.8);
  ToyModel m = make_exact_model(s, 2);
  int min_context = m.hyperparams().context_width;
  Rng base(42);
  std::vector<double> errors;
  for (int k = 0; k <= 2; ++k) {
    Rng stream_rng = base;  // identical stream for every k
    TvErrorResult r = empirical_tv_error(m, s, 300, k, min_context, stream_rng);
    REQUIRE(r.used == 300);
    errors.push_back(r.mean_error);
  }
  REQUIRE(std::abs(errors[1] - errors[0]) <= 1e-10);
  REQUIRE(std::abs(errors[2] - errors[0]) <= 1e-10);

  Rng rng2(43);
  ImprovementResult imp = improvement_fraction(m, s, 300, min_context, rng2);
  REQUIRE(imp.degenerate);
  REQUIRE(std::isnan(imp.fraction));
  REQUIRE(imp.ties == imp.used);
}

TEST_CASE("refinement repairs a blurred next-token table", "[sampler]") {
  SourceSpec s = make_coupled_source(4, 1, 0.8);
  ToyModel m = blurred_exact_model(s, 2, 0.5);
  int min_context = m.hyperparams().context_width;
  Rng base(77);
  std::vector<double> errors;
  for (int k = 0; k <= 2; ++k) {
    Rng stream_rng = base;
    errors.push_back(empirical_tv_error(m, s, 400, k, min_context, stream_rng).mean_error);
  }
  REQUIRE(errors[1] < errors[0] - 0.01);       // one step recovers most of the blur
  REQUIRE(errors[2] <= errors[1] + 0.005);     // further steps do not give it back

  Rng rng2(78);
  ImprovementResult imp = improvement_fraction(m, s, 400, min_context, rng2);
  REQUIRE(!imp.degenerate);
  REQUIRE(imp.fraction > 0.5);
  REQUIRE(imp.improved + imp.worsened + imp.ties == imp.used);
  long binned = 0;
  for (long c : imp.counts) binned += c;
  REQUIRE(binned == imp.used);
}

TEST_CASE("empirical error measurement is deterministic and validated", "[sampler]") {
  SourceSpec s = make_coupled_source(4, 1, 0.8);
  ToyModel m = blurred_exact_model(s, 2, 0.5);
  Rng r1(5), r2(5);
  TvErrorResult a = empirical_tv_error(m, s, 50, 1, 2, r1);
  TvErrorResult b = empirical_tv_error(m, s, 50, 1, 2, r2);
  REQUIRE(a.mean_error == b.mean_error);
  REQUIRE(a.skipped == 2);

  Rng r3(6);
  REQUIRE_THROWS_AS(empirical_tv_error(m, s, 0, 1, 2, r3), std::invalid_argument);
  REQUIRE_THROWS_AS(empirical_tv_error(m, s, 50, 1, 0, r3), std::invalid_argument);
  REQUIRE_THROWS_AS(refined_token_probability(m, std::vector<int>{0, 1}, 0, -1), std::invalid_argument);
}
