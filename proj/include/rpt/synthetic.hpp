#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rpt/markov.hpp"
#include "rpt/prob.hpp"
#include "rpt/rng.hpp"

namespace rpt {

// Static chunking; results must be written into per-index slots so the
// outcome is identical for every thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (threads < 1) threads = 1;
  threads = std::min(threads, n);
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  int chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    int lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

// One cell of the noise grid: a fixed base noise level and a
// backward-to-forward noise ratio, repeated over `trials` random joints.
struct SyntheticConfig {
  int vocab_size = 20;
  double base_noise = 1.0;      // noise level on the marginal and forward conditional
  double ratio = 0.0;           // backward noise = ratio * base_noise
  int trials = 1000;
  std::uint64_t seed = 0;
  double tol = 1e-12;           // stationary-solve residual target
  int max_iters = 100000;

  void validate() const {
    if (vocab_size < 2) throw std::invalid_argument("SyntheticConfig: vocab_size must be at least 2");
    if (!(base_noise > 0.0) || base_noise > 1.0)
      throw std::invalid_argument("SyntheticConfig: base_noise must be in (0, 1]");
    if (ratio < 0.0 || ratio > 1.0) throw std::invalid_argument("SyntheticConfig: ratio must be in [0, 1]");
    if (trials < 1) throw std::invalid_argument("SyntheticConfig: trials must be positive");
    if (!(tol > 0.0)) throw std::invalid_argument("SyntheticConfig: tol must be positive");
    if (max_iters < 1) throw std::invalid_argument("SyntheticConfig: max_iters must be positive");
  }
};

// rpt_factor is NaN exactly when the next-token bound is zero (possible only
// at zero noise); all other fields are finite.
struct TrialResult {
  int trial = 0;            // index within the cell, shared with the seed derivation
  double ntp_tv = 0.0;      // total variation of the next-token joint vs truth
  double rpt_tv = 0.0;      // total variation of the resampled stationary joint vs truth
  double ntp_max = 0.0;     // largest absolute joint-entry error
  double rpt_max = 0.0;
  double kappa = 0.0;       // condition number of the unperturbed kernel
  double ntp_bound = 0.0;
  double rpt_bound = 0.0;
  double rpt_factor = 0.0;  // rpt_bound / ntp_bound
};

// Draws a random ground-truth pair joint (normalized i.i.d. uniforms),
// perturbs its conditionals, and measures both samplers' joint errors along
// with the analytic bounds. The stationary solve starts from the next-token
// hat joint.
inline TrialResult run_synthetic_trial(const SyntheticConfig& cfg, Rng& rng) {
  int v = cfg.vocab_size;
  std::vector<double> w(static_cast<std::size_t>(v) * v);
  for (double& x : w) x = rng.unit();
  Distribution flat = normalize(w);
  JointMatrix joint(v, std::vector<double>(flat.values().begin(), flat.values().end()));

  PerturbationBundle bundle =
      make_perturbation_bundle(joint, cfg.base_noise, cfg.ratio * cfg.base_noise, rng);

  NtpJointError ntp = ntp_joint_error(bundle);
  TrialResult r;
  r.ntp_tv = 0.5 * l1_norm(ntp.exact_error);
  r.ntp_max = max_abs(ntp.exact_error);

  TransitionKernel truth_kernel = build_rpt_kernel(bundle.prev_given_next, bundle.next_given_prev);
  r.kappa = condition_number(truth_kernel);

  TransitionKernel hat_kernel = build_rpt_kernel(bundle.hat_prev_given_next, bundle.hat_next_given_prev);
  JointMatrix stationary = stationary_distribution(hat_kernel, JointMatrix(v, ntp.hat_joint), cfg.tol, cfg.max_iters);
  ErrorTable rpt_err = ErrorTable::between(stationary, bundle.ground_truth);
  r.rpt_tv = 0.5 * l1_norm(rpt_err);
  r.rpt_max = max_abs(rpt_err);

  r.ntp_bound = ntp_error_bound(bundle);
  r.rpt_bound = rpt_error_bound(bundle, r.kappa);
  r.rpt_factor = r.ntp_bound > 0.0 ? r.rpt_bound / r.ntp_bound : std::nan("");
  return r;
}

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<long> ntp_counts;  // 50 uniform bins over [lo, hi]
  std::vector<long> rpt_counts;
};

inline constexpr int kHistogramBins = 50;

// Shared-range overlay histogram of an NTP metric against its RPT partner.
inline Histogram make_histogram(const std::vector<double>& ntp, const std::vector<double>& rpt) {
  Histogram h;
  h.lo = 0.0;
  h.hi = 0.0;
  for (double x : ntp) h.hi = std::max(h.hi, x);
  for (double x : rpt) h.hi = std::max(h.hi, x);
  h.ntp_counts.assign(kHistogramBins, 0);
  h.rpt_counts.assign(kHistogramBins, 0);
  auto add = [&h](std::vector<long>& counts, double x) {
    int bin = h.hi > 0.0 ? static_cast<int>((x / h.hi) * kHistogramBins) : 0;
    counts[static_cast<std::size_t>(std::clamp(bin, 0, kHistogramBins - 1))] += 1;
  };
  for (double x : ntp) add(h.ntp_counts, x);
  for (double x : rpt) add(h.rpt_counts, x);
  return h;
}

struct MetricSummary {
  double mean = 0.0;
  double std_error = 0.0;
};

inline MetricSummary summarize(const std::vector<double>& xs) {
  MetricSummary s;
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  if (xs.size() > 1) var /= static_cast<double>(xs.size() - 1);
  s.std_error = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

struct TrialFailure {
  int trial = 0;
  std::string message;
};

struct CellResult {
  SyntheticConfig config;
  std::vector<TrialResult> trials;     // successful trials, in trial order
  std::vector<TrialFailure> failures;  // trials that threw, with their messages

  MetricSummary ntp_tv, rpt_tv, ntp_max, rpt_max, kappa, rpt_factor;
  Histogram tv_hist;   // ntp_tv vs rpt_tv
  Histogram max_hist;  // ntp_max vs rpt_max

  // Mean relative improvement of RPT over NTP in total variation.
  double improvement() const { return ntp_tv.mean > 0.0 ? 1.0 - rpt_tv.mean / ntp_tv.mean : 0.0; }
};

struct SyntheticReport {
  std::vector<CellResult> cells;
};

// Runs every trial of every cell with a seed derived from (cell seed, trial
// index); aggregation order is fixed, so reports are identical for any
// parallelism level.
inline SyntheticReport run_synthetic_experiment(const std::vector<SyntheticConfig>& configs, int parallelism = 1) {
  SyntheticReport report;
  for (const SyntheticConfig& cfg : configs) {
    cfg.validate();
    CellResult cell;
    cell.config = cfg;

    std::vector<TrialResult> slots(static_cast<std::size_t>(cfg.trials));
    std::vector<std::string> errors(static_cast<std::size_t>(cfg.trials));
    parallel_for(cfg.trials, parallelism, [&](int t) {
      Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(t)));
      try {
        slots[static_cast<std::size_t>(t)] = run_synthetic_trial(cfg, rng);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(t)] = e.what();
      }
    });

    std::vector<double> ntp_tv, rpt_tv, ntp_max, rpt_max, kappa, factor;
    for (int t = 0; t < cfg.trials; ++t) {
      if (!errors[static_cast<std::size_t>(t)].empty()) {
        cell.failures.push_back(TrialFailure{t, errors[static_cast<std::size_t>(t)]});
        continue;
      }
      TrialResult r = slots[static_cast<std::size_t>(t)];
      r.trial = t;
      cell.trials.push_back(r);
      ntp_tv.push_back(r.ntp_tv);
      rpt_tv.push_back(r.rpt_tv);
      ntp_max.push_back(r.ntp_max);
      rpt_max.push_back(r.rpt_max);
      kappa.push_back(r.kappa);
      if (!std::isnan(r.rpt_factor)) factor.push_back(r.rpt_factor);
    }
    cell.ntp_tv = summarize(ntp_tv);
    cell.rpt_tv = summarize(rpt_tv);
    cell.ntp_max = summarize(ntp_max);
    cell.rpt_max = summarize(rpt_max);
    cell.kappa = summarize(kappa);
    cell.rpt_factor = summarize(factor);
    cell.tv_hist = make_histogram(ntp_tv, rpt_tv);
    cell.max_hist = make_histogram(ntp_max, rpt_max);
    report.cells.push_back(std::move(cell));
  }
  return report;
}

}  // namespace rpt
