// rpt-lab: command-line front end for the resample-previous-tokens laboratory.
// Every run is seeded explicitly; no wall-clock randomness anywhere.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpt/rpt.hpp"

namespace {

using namespace rpt;

const char* kUsage = R"(usage: rpt-lab <subcommand> [flags] [--section.key=value ...]

subcommands:
  synthetic     perturbation grid: next-token vs resampled stationary error
  train-toy     train the tabular model with permuted batches, save a checkpoint
  tv-table      mean held-out token error vs refinement iterations per source
  improve-hist  distribution of the one-step probability change of true tokens
  bounds        error bounds and first-order behavior on one random pair joint
  sample        generate tokens with refinement and record every replacement

flags:
  --config PATH       key-value config file ([section] headers, key = value)
  --seed N            seed for the subcommand (same as --<section>.seed=N)
  --out-dir PATH      artifact directory (default $RPT_LAB_OUT_DIR, then ./out)
  --format F          csv, json, or both (default both)
  --parallelism N     worker threads where supported (default 1)
  --help              this text

config sections: [synthetic] [train] [tv_table] [improve] [bounds] [sample];
any key can be set from the command line as --section.key=value.
A seed is required: either in the config file or via --seed.)";

ConfigSchema make_schema() {
  return ConfigSchema{
      {"synthetic", {"vocab_size", "base_noises", "ratios", "trials", "seed", "tol", "max_iters"}},
      {"train",
       {"source", "vocab", "order", "window", "context_width", "learning_rate", "steps", "seq_len", "permute_prob",
        "swap_prob", "val_positions", "seed"}},
      {"tv_table",
       {"sources", "model", "checkpoint", "blur", "k_max", "num_tokens", "min_context", "vocab", "order", "seed"}},
      {"improve",
       {"source", "model", "checkpoint", "blur", "num_tokens", "min_context", "vocab", "order", "seed"}},
      {"bounds", {"vocab_size", "ratio", "deltas", "seed"}},
      {"sample",
       {"model", "checkpoint", "source", "vocab", "order", "window", "iterations", "temperature", "greedy_ptp",
        "confidence", "prompt", "length", "seed"}},
  };
}

struct CliOptions {
  std::string subcommand;
  std::string config_path;
  std::string out_dir;
  std::string format = "both";
  int parallelism = 1;
  std::optional<long long> seed;
  std::vector<std::string> overrides;
  bool help = false;
};

std::string section_for(const std::string& subcommand) {
  if (subcommand == "synthetic") return "synthetic";
  if (subcommand == "train-toy") return "train";
  if (subcommand == "tv-table") return "tv_table";
  if (subcommand == "improve-hist") return "improve";
  if (subcommand == "bounds") return "bounds";
  if (subcommand == "sample") return "sample";
  throw config_error("unknown subcommand '" + subcommand + "'");
}

CliOptions parse_args(int argc, char** argv) {
  CliOptions opt;
  if (argc < 2) throw config_error("missing subcommand; run with --help for usage");
  std::string first = argv[1];
  if (first == "--help" || first == "-h") {
    opt.help = true;
    return opt;
  }
  opt.subcommand = first;
  section_for(opt.subcommand);  // validates the name

  auto take_value = [&](int& i, const std::string& flag) -> std::string {
    std::size_t eq = std::string(argv[i]).find('=');
    if (eq != std::string::npos) return std::string(argv[i]).substr(eq + 1);
    if (i + 1 >= argc) throw config_error("flag " + flag + " needs a value");
    return argv[++i];
  };
  auto is_flag = [&](const std::string& arg, const std::string& flag) {
    return arg == flag || arg.rfind(flag + "=", 0) == 0;
  };

  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--help" || arg == "-h") {
      opt.help = true;
    } else if (is_flag(arg, "--config")) {
      opt.config_path = take_value(i, "--config");
    } else if (is_flag(arg, "--seed")) {
      std::string v = take_value(i, "--seed");
      try {
        std::size_t pos = 0;
        opt.seed = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw config_error("--seed: expected an integer, got '" + v + "'");
      }
    } else if (is_flag(arg, "--out-dir")) {
      opt.out_dir = take_value(i, "--out-dir");
    } else if (is_flag(arg, "--format")) {
      opt.format = take_value(i, "--format");
      if (opt.format != "csv" && opt.format != "json" && opt.format != "both")
        throw config_error("--format must be csv, json, or both");
    } else if (is_flag(arg, "--parallelism")) {
      std::string v = take_value(i, "--parallelism");
      try {
        opt.parallelism = std::stoi(v);
      } catch (const std::exception&) {
        throw config_error("--parallelism: expected an integer, got '" + v + "'");
      }
      if (opt.parallelism < 1) throw config_error("--parallelism must be at least 1");
    } else if (arg.rfind("--", 0) == 0 && arg.find('.') != std::string::npos && arg.find('=') != std::string::npos) {
      opt.overrides.push_back(arg.substr(2));
    } else {
      throw config_error("unrecognized argument '" + arg + "'");
    }
  }
  return opt;
}

struct RunContext {
  ConfigMap cfg;
  std::string section;
  std::filesystem::path out_dir;
  std::string format;
  int parallelism = 1;

  bool want_csv() const { return format == "csv" || format == "both"; }
  bool want_json() const { return format == "json" || format == "both"; }

  std::string key(const std::string& name) const { return section + "." + name; }

  std::uint64_t required_seed() const {
    if (!cfg.contains(key("seed")))
      throw config_error("a seed is required: pass --seed or set seed in [" + section + "]");
    return static_cast<std::uint64_t>(cfg.get_int(key("seed"), 0));
  }

  void write_artifact(const std::string& filename, const std::string& content) const {
    std::filesystem::path path = out_dir / filename;
    atomic_write_file(path, content);
    std::cout << "wrote " << path.string() << "\n";
  }
};

// Short human-facing number: enough digits to identify, not to round-trip.
std::string fmt_g(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", x);
  return std::string(buf);
}

std::string noise_slug(double x) {
  std::string s = fmt_g(x);
  for (char& c : s)
    if (c == '.') c = 'p';
  return s;
}

int parse_int_strict(const std::string& v, const std::string& what) {
  try {
    std::size_t pos = 0;
    int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw config_error(what + ": expected an integer, got '" + v + "'");
  }
}

// Source specs name a family plus an optional numeric parameter:
// "coupled:0.8", "echo", "uniform", "cycle", "random".
SourceSpec parse_source_spec(const std::string& spec, int vocab, int order, std::uint64_t seed) {
  std::string name = spec;
  std::optional<double> param;
  std::size_t colon = spec.find(':');
  if (colon != std::string::npos) {
    name = spec.substr(0, colon);
    std::string v = spec.substr(colon + 1);
    try {
      std::size_t pos = 0;
      param = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw config_error("source '" + spec + "': expected a numeric parameter after ':'");
    }
  }
  if (name == "coupled") return make_coupled_source(vocab, order, param.value_or(0.8));
  if (name == "echo") return make_echo_source();
  if (name == "uniform") return make_uniform_source(vocab, order);
  if (name == "cycle") return make_deterministic_source(vocab, order);
  if (name == "random") {
    Rng rng(derive_seed(seed, 0xffaa));
    return make_random_source(vocab, order, rng);
  }
  throw config_error("source '" + spec + "': unknown family (coupled, echo, uniform, cycle, random)");
}

// Keeps the resample conditionals exact but mixes every next-token row with
// the uniform distribution, modeling a sampler whose forward predictions are
// noticeably worse than its lookback posteriors.
ToyModel blur_ntp_rows(ToyModel m, double blur) {
  if (blur < 0.0 || blur > 1.0) throw config_error("blur must be in [0, 1]");
  int v = m.hyperparams().vocab;
  for (const ContextKey& k : m.sorted_keys()) {
    if (k.target_delta != 1) continue;
    std::vector<double> p = softmax(m.row(k));
    std::vector<double> logits(static_cast<std::size_t>(v));
    for (int i = 0; i < v; ++i)
      logits[static_cast<std::size_t>(i)] = std::log((1.0 - blur) * p[static_cast<std::size_t>(i)] + blur / v);
    m.set_row(k, logits);
  }
  return m;
}

ToyModel prepare_model(const RunContext& ctx, const SourceSpec& src) {
  std::string mode = ctx.cfg.get_string(ctx.key("model"), "blurred");
  if (mode == "exact") return make_exact_model(src, 2);
  if (mode == "blurred") return blur_ntp_rows(make_exact_model(src, 2), ctx.cfg.get_double(ctx.key("blur"), 0.35));
  if (mode == "checkpoint") {
    std::string path = ctx.cfg.get_string(ctx.key("checkpoint"), "");
    if (path.empty()) throw config_error("model = checkpoint needs a checkpoint path");
    return load_checkpoint(path);
  }
  throw config_error("model must be exact, blurred, or checkpoint, got '" + mode + "'");
}

int cmd_synthetic(RunContext& ctx) {
  std::uint64_t seed = ctx.required_seed();
  int vocab = static_cast<int>(ctx.cfg.get_int(ctx.key("vocab_size"), 20));
  std::vector<double> noises = ctx.cfg.get_double_list(ctx.key("base_noises"), {0.1, 0.5, 1.0});
  std::vector<double> ratios = ctx.cfg.get_double_list(ctx.key("ratios"), {0.0, 0.5, 1.0});
  int trials = static_cast<int>(ctx.cfg.get_int(ctx.key("trials"), 1000));
  double tol = ctx.cfg.get_double(ctx.key("tol"), 1e-12);
  int max_iters = static_cast<int>(ctx.cfg.get_int(ctx.key("max_iters"), 100000));

  std::vector<SyntheticConfig> cells;
  std::uint64_t index = 0;
  for (double noise : noises) {
    for (double ratio : ratios) {
      SyntheticConfig c;
      c.vocab_size = vocab;
      c.base_noise = noise;
      c.ratio = ratio;
      c.trials = trials;
      c.tol = tol;
      c.max_iters = max_iters;
      c.seed = derive_seed(seed, index++);
      cells.push_back(c);
    }
  }

  SyntheticReport report = run_synthetic_experiment(cells, ctx.parallelism);

  for (const CellResult& cell : report.cells) {
    std::cout << "noise " << fmt_g(cell.config.base_noise) << " ratio " << fmt_g(cell.config.ratio) << ": ntp_tv "
              << fmt_g(cell.ntp_tv.mean) << ", rpt_tv " << fmt_g(cell.rpt_tv.mean) << ", improvement "
              << fmt_g(100.0 * cell.improvement()) << "%, failures " << cell.failures.size() << "\n";
  }

  if (ctx.want_csv()) {
    ctx.write_artifact("synthetic_trials.csv", synthetic_trials_csv(report));
    ctx.write_artifact("synthetic_summary.csv", synthetic_summary_csv(report));
  }
  if (ctx.want_json()) ctx.write_artifact("synthetic_report.json", synthetic_report_json(report, ctx.cfg));
  for (double noise : distinct_base_noises(report))
    ctx.write_artifact("histograms_noise_" + noise_slug(noise) + ".svg", synthetic_histograms_svg(report, noise));
  return 0;
}

int cmd_train_toy(RunContext& ctx) {
  std::uint64_t seed = ctx.required_seed();
  int vocab = static_cast<int>(ctx.cfg.get_int(ctx.key("vocab"), 16));
  int order = static_cast<int>(ctx.cfg.get_int(ctx.key("order"), 2));
  int window = static_cast<int>(ctx.cfg.get_int(ctx.key("window"), 3));
  SourceSpec src = parse_source_spec(ctx.cfg.get_string(ctx.key("source"), "coupled:0.8"), vocab, order, seed);

  ToyHyperparams hp;
  hp.vocab = src.vocab;
  hp.window = window;
  hp.context_width = static_cast<int>(ctx.cfg.get_int(ctx.key("context_width"), src.order + window - 1));
  hp.learning_rate = ctx.cfg.get_double(ctx.key("learning_rate"), 0.5);

  TrainParams tp;
  tp.steps = static_cast<int>(ctx.cfg.get_int(ctx.key("steps"), 4000));
  tp.seq_len = static_cast<int>(ctx.cfg.get_int(ctx.key("seq_len"), 256));
  tp.permute_prob = ctx.cfg.get_double(ctx.key("permute_prob"), 0.5);
  tp.swap_prob = ctx.cfg.get_double(ctx.key("swap_prob"), 0.02);
  tp.window = window;

  ToyModel model(hp);
  Rng rng(derive_seed(seed, 1));
  TrainReport report = train(model, src, tp, rng);

  int val_positions = static_cast<int>(ctx.cfg.get_int(ctx.key("val_positions"), 2000));
  Rng val_rng(derive_seed(seed, 2));
  ValidationScores val = evaluate_model(model, src, val_positions, val_rng);

  std::cout << "final training loss " << fmt_g(report.final_loss) << "\n";
  std::cout << "validation ntp ce " << fmt_g(val.ntp_ce);
  for (std::size_t i = 0; i < val.ptp_ce.size(); ++i)
    std::cout << ", ptp-" << (i + 1) << " ce " << fmt_g(val.ptp_ce[i]);
  std::cout << " over " << val.positions << " positions\n";

  ctx.write_artifact("model.ckpt", serialize_checkpoint(model));
  if (ctx.want_csv()) ctx.write_artifact("losses.csv", loss_trace_csv(report));
  if (ctx.want_json()) ctx.write_artifact("train_report.json", train_report_json(report, val, ctx.cfg));
  return 0;
}

int cmd_tv_table(RunContext& ctx) {
  std::uint64_t seed = ctx.required_seed();
  std::vector<std::string> specs = ctx.cfg.get_string_list(ctx.key("sources"), {"coupled:0.8"});
  int vocab = static_cast<int>(ctx.cfg.get_int(ctx.key("vocab"), 8));
  int order = static_cast<int>(ctx.cfg.get_int(ctx.key("order"), 1));
  int k_max = static_cast<int>(ctx.cfg.get_int(ctx.key("k_max"), 3));
  int num_tokens = static_cast<int>(ctx.cfg.get_int(ctx.key("num_tokens"), 300));
  int min_context = static_cast<int>(ctx.cfg.get_int(ctx.key("min_context"), 20));
  if (k_max < 0) throw config_error("k_max must be non-negative");

  std::vector<std::vector<double>> rows(static_cast<std::size_t>(k_max) + 1,
                                        std::vector<double>(specs.size(), 0.0));
  for (std::size_t s = 0; s < specs.size(); ++s) {
    SourceSpec src = parse_source_spec(specs[s], vocab, order, derive_seed(seed, 1000 + s));
    ToyModel model = prepare_model(ctx, src);
    for (int k = 0; k <= k_max; ++k) {
      Rng rng(derive_seed(seed, 2000 + s));  // same stream for every k
      rows[static_cast<std::size_t>(k)][s] = empirical_tv_error(model, src, num_tokens, k, min_context, rng).mean_error;
    }
  }

  for (int k = 0; k <= k_max; ++k) {
    std::cout << "k=" << k;
    for (std::size_t s = 0; s < specs.size(); ++s)
      std::cout << "  " << specs[s] << " " << fmt_g(rows[static_cast<std::size_t>(k)][s]);
    std::cout << "\n";
  }

  if (ctx.want_csv()) ctx.write_artifact("tv_table.csv", tv_table_csv(specs, rows));
  if (ctx.want_json()) ctx.write_artifact("tv_table.json", tv_table_json(specs, rows, ctx.cfg));
  return 0;
}

int cmd_improve_hist(RunContext& ctx) {
  std::uint64_t seed = ctx.required_seed();
  int vocab = static_cast<int>(ctx.cfg.get_int(ctx.key("vocab"), 8));
  int order = static_cast<int>(ctx.cfg.get_int(ctx.key("order"), 1));
  int num_tokens = static_cast<int>(ctx.cfg.get_int(ctx.key("num_tokens"), 300));
  int min_context = static_cast<int>(ctx.cfg.get_int(ctx.key("min_context"), 20));
  SourceSpec src = parse_source_spec(ctx.cfg.get_string(ctx.key("source"), "coupled:0.8"), vocab, order, seed);
  ToyModel model = prepare_model(ctx, src);

  Rng rng(derive_seed(seed, 1));
  ImprovementResult r = improvement_fraction(model, src, num_tokens, min_context, rng);

  if (r.degenerate)
    std::cout << "degenerate: every position tied (|p1 - p0| <= " << fmt_g(kTieTol) << ")\n";
  else
    std::cout << "improved fraction " << fmt_g(r.fraction) << " (" << r.improved << " improved, " << r.worsened
              << " worsened, " << r.ties << " ties, " << r.used << " positions)\n";

  if (ctx.want_csv()) {
    CsvBuilder csv({"bin_lo", "bin_hi", "count"});
    double width = (r.hi - r.lo) / static_cast<double>(r.counts.size());
    for (std::size_t i = 0; i < r.counts.size(); ++i)
      csv.row({fmt_g17(r.lo + width * static_cast<double>(i)), fmt_g17(r.lo + width * static_cast<double>(i + 1)),
               std::to_string(r.counts[i])});
    ctx.write_artifact("improvement_hist.csv", csv.str());
  }
  if (ctx.want_json()) ctx.write_artifact("improvement.json", improvement_json(r, ctx.cfg));
  return 0;
}

int cmd_bounds(RunContext& ctx) {
  std::uint64_t seed = ctx.required_seed();
  int vocab = static_cast<int>(ctx.cfg.get_int(ctx.key("vocab_size"), 12));
  double ratio = ctx.cfg.get_double(ctx.key("ratio"), 1.0);
  std::vector<double> deltas = ctx.cfg.get_double_list(ctx.key("deltas"), {0.1, 0.01, 0.001});

  Rng rng(derive_seed(seed, 0));
  std::vector<double> w(static_cast<std::size_t>(vocab) * vocab);
  for (double& x : w) x = rng.unit();
  Distribution flat = normalize(w);
  JointMatrix joint(vocab, std::vector<double>(flat.values().begin(), flat.values().end()));
  BundleNoise noise = sample_bundle_noise(vocab, rng);

  JointFactorization truth = conditionals_from_joint(joint);
  TransitionKernel truth_kernel = build_rpt_kernel(truth.prev_given_next, truth.next_given_prev);
  double kappa = condition_number(truth_kernel);
  std::cout << "vocab " << vocab << ", kappa " << fmt_g(kappa) << "\n";

  CsvBuilder csv({"delta", "ntp_l1", "ntp_bound", "ntp_quadratic_gap", "kernel_max", "kernel_bound",
                  "kernel_quadratic_gap", "stationary_l1", "kappa", "rpt_bound", "rpt_factor"});
  nlohmann::json json_rows = nlohmann::json::array();
  for (double delta : deltas) {
    PerturbationBundle bundle = bundle_at_level(joint, noise, delta, ratio * delta);
    NtpJointError ntp = ntp_joint_error(bundle);
    double ntp_l1 = l1_norm(ntp.exact_error);
    double ntp_gap = 0.0;
    for (std::size_t i = 0; i < ntp.exact_error.values.size(); ++i)
      ntp_gap += std::abs(ntp.exact_error.values[i] - ntp.first_order.values[i]);
    KernelError kerr = kernel_error(bundle);
    TransitionKernel hat_kernel = build_rpt_kernel(bundle.hat_prev_given_next, bundle.hat_next_given_prev);
    JointMatrix stat = stationary_distribution(hat_kernel, JointMatrix(vocab, ntp.hat_joint));
    double stat_l1 = l1_norm(ErrorTable::between(stat, bundle.ground_truth));

    double ntp_bound = ntp_error_bound(bundle);
    double kernel_bound = kernel_error_bound(bundle);
    double rpt_bound = rpt_error_bound(bundle, kappa);
    double factor = ntp_bound > 0.0 ? rpt_bound / ntp_bound : std::nan("");
    std::cout << "delta " << fmt_g(delta) << ": ntp_l1 " << fmt_g(ntp_l1) << " (bound " << fmt_g(ntp_bound)
              << "), stationary_l1 " << fmt_g(stat_l1) << " (bound " << fmt_g(rpt_bound) << "), factor "
              << fmt_g(factor) << "\n";

    csv.row({fmt_g17(delta), fmt_g17(ntp_l1), fmt_g17(ntp_bound), fmt_g17(ntp_gap), fmt_g17(kerr.exact_max_norm),
             fmt_g17(kernel_bound), fmt_g17(kerr.quadratic_gap_max_norm), fmt_g17(stat_l1), fmt_g17(kappa),
             fmt_g17(rpt_bound), fmt_g17(factor)});
    json_rows.push_back(nlohmann::json{{"delta", delta},
                                       {"ntp_l1", ntp_l1},
                                       {"ntp_bound", ntp_bound},
                                       {"ntp_quadratic_gap", ntp_gap},
                                       {"kernel_max", kerr.exact_max_norm},
                                       {"kernel_bound", kernel_bound},
                                       {"kernel_quadratic_gap", kerr.quadratic_gap_max_norm},
                                       {"stationary_l1", stat_l1},
                                       {"kappa", kappa},
                                       {"rpt_bound", rpt_bound},
                                       {"rpt_factor", factor}});
  }

  if (ctx.want_csv()) ctx.write_artifact("bounds.csv", csv.str());
  if (ctx.want_json()) {
    nlohmann::json j{{"artifact_version", kArtifactVersion},
                     {"kind", "bounds-report"},
                     {"config", nlohmann::json::object()},
                     {"rows", json_rows}};
    for (const auto& [k, v] : ctx.cfg.values()) j["config"][k] = v;
    ctx.write_artifact("bounds.json", j.dump(2) + "\n");
  }
  return 0;
}

int cmd_sample(RunContext& ctx) {
  std::uint64_t seed = ctx.required_seed();
  int vocab = static_cast<int>(ctx.cfg.get_int(ctx.key("vocab"), 8));
  int order = static_cast<int>(ctx.cfg.get_int(ctx.key("order"), 1));
  SourceSpec src = parse_source_spec(ctx.cfg.get_string(ctx.key("source"), "coupled:0.8"), vocab, order, seed);

  SamplerConfig sc;
  sc.window = static_cast<int>(ctx.cfg.get_int(ctx.key("window"), 2));
  sc.iterations = ctx.cfg.get_double(ctx.key("iterations"), 1.0);
  sc.temperature = ctx.cfg.get_double(ctx.key("temperature"), 1.0);
  sc.greedy_ptp = ctx.cfg.get_bool(ctx.key("greedy_ptp"), false);
  if (ctx.cfg.contains(ctx.key("confidence"))) sc.confidence = ctx.cfg.get_double(ctx.key("confidence"), 0.5);
  sc.validate();

  std::string mode = ctx.cfg.get_string(ctx.key("model"), "exact");
  ToyModel model = [&] {
    if (mode == "exact") return make_exact_model(src, std::max(2, sc.window));
    if (mode == "checkpoint") {
      std::string path = ctx.cfg.get_string(ctx.key("checkpoint"), "");
      if (path.empty()) throw config_error("model = checkpoint needs a checkpoint path");
      return load_checkpoint(path);
    }
    throw config_error("model must be exact or checkpoint, got '" + mode + "'");
  }();

  std::vector<int> prompt;
  for (const std::string& tok : ctx.cfg.get_string_list(ctx.key("prompt"), {}))
    prompt.push_back(parse_int_strict(tok, "prompt"));
  int length = static_cast<int>(ctx.cfg.get_int(ctx.key("length"), 40));

  Rng rng(derive_seed(seed, 7));
  GenerationTrace trace = rpt_generate(model, prompt, length, sc, rng);

  long accepted_changes = 0;
  for (const ReplacementEvent& e : trace.events)
    if (e.accepted && e.old_token != e.new_token) ++accepted_changes;
  std::cout << "tokens:";
  for (int t : trace.final_tokens) std::cout << " " << t;
  std::cout << "\n" << trace.events.size() << " refinement draws, " << accepted_changes << " changed a token\n";

  if (ctx.want_csv()) ctx.write_artifact("trace.csv", trace_events_csv(trace));
  if (ctx.want_json()) ctx.write_artifact("trace.json", generation_trace_json(trace, ctx.cfg));
  return 0;
}

void emit_error(const std::string& kind, const std::string& message) {
  nlohmann::json j{{"error", nlohmann::json{{"kind", kind}, {"message", message}}}};
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CliOptions opt;
  try {
    opt = parse_args(argc, argv);
    if (opt.help) {
      std::cout << kUsage << "\n";
      return 0;
    }

    ConfigSchema schema = make_schema();
    RunContext ctx;
    ctx.section = section_for(opt.subcommand);
    if (!opt.config_path.empty()) {
      std::ifstream in(opt.config_path);
      if (!in) throw config_error("cannot open config file " + opt.config_path);
      std::stringstream buf;
      buf << in.rdbuf();
      ctx.cfg = parse_config_text(buf.str(), schema);
    }
    for (const std::string& o : opt.overrides) apply_override(ctx.cfg, o, schema);
    if (opt.seed) ctx.cfg.set(ctx.section + ".seed", std::to_string(*opt.seed));

    const char* env_dir = std::getenv("RPT_LAB_OUT_DIR");
    ctx.out_dir = !opt.out_dir.empty() ? opt.out_dir : (env_dir && *env_dir ? env_dir : "out");
    std::filesystem::create_directories(ctx.out_dir);
    ctx.format = opt.format;
    ctx.parallelism = opt.parallelism;

    int rc = 0;
    if (opt.subcommand == "synthetic") rc = cmd_synthetic(ctx);
    else if (opt.subcommand == "train-toy") rc = cmd_train_toy(ctx);
    else if (opt.subcommand == "tv-table") rc = cmd_tv_table(ctx);
    else if (opt.subcommand == "improve-hist") rc = cmd_improve_hist(ctx);
    else if (opt.subcommand == "bounds") rc = cmd_bounds(ctx);
    else if (opt.subcommand == "sample") rc = cmd_sample(ctx);

    std::vector<std::string> unused = ctx.cfg.unconsumed();
    std::vector<std::string> foreign;
    for (const std::string& k : unused)
      if (k.rfind(ctx.section + ".", 0) == 0) foreign.push_back(k);
    if (!foreign.empty()) {
      std::string msg = "config keys not used by this subcommand:";
      for (const std::string& k : foreign) msg += " " + k;
      throw config_error(msg);
    }
    return rc;
  } catch (const rpt::config_error& e) {
    emit_error("config", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    emit_error("config", e.what());
    return 2;
  } catch (const std::exception& e) {
    emit_error("runtime", e.what());
    return 1;
  }
}
