#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpt/report.hpp"
#include "rpt/synthetic.hpp"

using namespace rpt;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

SyntheticReport tiny_experiment(int trials, double base_noise, double ratio) {
  SyntheticConfig cfg;
  cfg.vocab_size = 4;
  cfg.base_noise = base_noise;
  cfg.ratio = ratio;
  cfg.trials = trials;
  cfg.seed = 2024;
  return run_synthetic_experiment({cfg});
}

}  // namespace

TEST_CASE("fmt_g17 strings round-trip the exact double", "[report]") {
  // strtod rather than std::stod: glibc flags subnormal results as ERANGE,
  // which stod turns into out_of_range even though the value parses fine.
  for (double x : {0.1, 1.0 / 3.0, 1e-300, 123456.789, 5e-324, 0.30000000000000004}) {
    REQUIRE(std::strtod(fmt_g17(x).c_str(), nullptr) == x);
  }
  REQUIRE(std::signbit(std::strtod(fmt_g17(-0.0).c_str(), nullptr)));
  REQUIRE(fmt_g17(0.5) == "0.5");
}

TEST_CASE("atomic writes land complete or not at all", "[report]") {
  namespace fs = std::filesystem;
  fs::path target = fs::temp_directory_path() / "rpt_report_atomic.txt";
  fs::remove(target);
  atomic_write_file(target, "payload line\n");
  REQUIRE(read_file(target) == "payload line\n");
  fs::path tmp = target;
  tmp += ".tmp";
  REQUIRE(!fs::exists(tmp));
  fs::remove(target);

  fs::path bad = fs::temp_directory_path() / "rpt_no_such_dir" / "out.txt";
  REQUIRE_THROWS_AS(atomic_write_file(bad, "x"), std::runtime_error);
  REQUIRE(!fs::exists(bad));
}

TEST_CASE("csv rows must match the header width", "[report]") {
  CsvBuilder csv({"a", "b"});
  csv.row({"1", "2"});
  REQUIRE(csv.str() == "a,b\n1,2\n");
  REQUIRE_THROWS_AS(csv.row({"1"}), report_error);
}

TEST_CASE("per-trial csv lists every cell's records under the fixed header", "[report]") {
  SyntheticReport report;
  CellResult cell;
  cell.config.base_noise = 0.5;
  cell.config.ratio = 0.25;
  cell.config.trials = 2;
  TrialResult t0;
  t0.trial = 0;
  t0.ntp_tv = 0.5;
  t0.rpt_tv = 0.25;
  t0.ntp_max = 0.125;
  t0.rpt_max = 0.0625;
  t0.kappa = 2.0;
  t0.ntp_bound = 1.0;
  t0.rpt_bound = 1.5;
  t0.rpt_factor = 1.5;
  TrialResult t1 = t0;
  t1.trial = 1;
  t1.rpt_factor = std::nan("");
  cell.trials = {t0, t1};
  report.cells.push_back(cell);

  std::string csv = synthetic_trials_csv(report);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  REQUIRE(line == "base_noise,ratio,trial,ntp_tv,rpt_tv,ntp_max,rpt_max,kappa,rpt_factor");
  std::getline(lines, line);
  REQUIRE(line == "0.5,0.25,0,0.5,0.25,0.125,0.0625,2,1.5");
  std::getline(lines, line);
  REQUIRE(line == "0.5,0.25,1,0.5,0.25,0.125,0.0625,2,nan");
  REQUIRE(!std::getline(lines, line));
}

TEST_CASE("summary csv carries one row per cell", "[report]") {
  SyntheticReport report = tiny_experiment(3, 0.5, 0.5);
  std::string csv = synthetic_summary_csv(report);
  std::istringstream lines(csv);
  std::string header, row, extra;
  REQUIRE(std::getline(lines, header));
  REQUIRE(header ==
          "base_noise,ratio,trials_requested,trials_completed,ntp_tv_mean,ntp_tv_se,rpt_tv_mean,rpt_tv_se,"
          "ntp_max_mean,ntp_max_se,rpt_max_mean,rpt_max_se,kappa_mean,kappa_se,rpt_factor_mean,rpt_factor_se,"
          "improvement");
  REQUIRE(std::getline(lines, row));
  REQUIRE(row.rfind("0.5,0.5,3,3,", 0) == 0);
  REQUIRE(!std::getline(lines, extra));
}

TEST_CASE("the synthetic json report parses back to the same numbers", "[report]") {
  SyntheticReport report = tiny_experiment(3, 0.5, 0.5);
  ConfigMap echo;
  echo.set("synthetic.trials", "3");
  std::string text = synthetic_report_json(report, echo);
  nlohmann::json j = nlohmann::json::parse(text);

  REQUIRE(j["artifact_version"] == kArtifactVersion);
  REQUIRE(j["kind"] == "synthetic-report");
  REQUIRE(j["config"]["synthetic.trials"] == "3");
  REQUIRE(j["cells"].size() == 1);
  const auto& cell = j["cells"][0];
  REQUIRE(cell["trials_requested"] == 3);
  REQUIRE(cell["trials"].size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    REQUIRE(cell["trials"][t]["trial"].get<int>() == report.cells[0].trials[t].trial);
    REQUIRE(cell["trials"][t]["ntp_tv"].get<double>() == report.cells[0].trials[t].ntp_tv);
    REQUIRE(cell["trials"][t]["rpt_factor"].get<double>() == report.cells[0].trials[t].rpt_factor);
  }
  REQUIRE(cell["aggregates"]["ntp_tv"]["mean"].get<double>() == report.cells[0].ntp_tv.mean);
  REQUIRE(cell["aggregates"]["improvement"].get<double>() == report.cells[0].improvement());
  REQUIRE(cell["histograms"]["tv"]["bin_edges"].size() == 51);
  REQUIRE(cell["failures"].empty());
}

TEST_CASE("the json report refuses cells with unaccounted trials", "[report]") {
  SyntheticReport report = tiny_experiment(3, 0.5, 0.5);
  report.cells[0].trials.pop_back();
  ConfigMap echo;
  REQUIRE_THROWS_AS(synthetic_report_json(report, echo), report_error);
}

TEST_CASE("cells where every trial failed report null aggregates", "[report]") {
  SyntheticConfig cfg;
  cfg.vocab_size = 4;
  cfg.base_noise = 0.5;
  cfg.ratio = 0.5;
  cfg.trials = 3;
  cfg.seed = 5;
  cfg.tol = 1e-300;
  cfg.max_iters = 1;
  SyntheticReport report = run_synthetic_experiment({cfg});
  ConfigMap echo;
  nlohmann::json j = nlohmann::json::parse(synthetic_report_json(report, echo));
  const auto& cell = j["cells"][0];
  REQUIRE(cell["aggregates"].is_null());
  REQUIRE(cell["histograms"].is_null());
  REQUIRE(cell["trials"].empty());
  REQUIRE(cell["failures"].size() == 3);
  REQUIRE(!cell["failures"][0]["message"].get<std::string>().empty());
}

TEST_CASE("loss traces leave gaps where a class had no positions", "[report]") {
  TrainReport r;
  r.ntp_trace = {{0, 1.5}, {1, 1.25}};
  r.ptp_traces.resize(1);
  r.ptp_traces[0] = {{1, 0.75}};
  REQUIRE(loss_trace_csv(r) == "step,ntp_loss,ptp_1_loss\n0,1.5,\n1,1.25,0.75\n");

  TrainReport two;
  two.ntp_trace = {{4, 0.5}};
  two.ptp_traces.resize(2);
  two.ptp_traces[1] = {{3, 0.25}};
  REQUIRE(loss_trace_csv(two) == "step,ntp_loss,ptp_1_loss,ptp_2_loss\n3,,,0.25\n4,0.5,,\n");
}

TEST_CASE("train reports serialize traces and validation scores", "[report]") {
  TrainReport r;
  r.final_loss = 0.125;
  r.ntp_trace = {{0, 2.0}};
  r.ptp_traces.resize(1);
  r.ptp_traces[0] = {{0, 1.0}};
  ValidationScores v;
  v.ntp_ce = 0.75;
  v.ptp_ce = {0.5};
  v.positions = 128;
  ConfigMap echo;
  nlohmann::json j = nlohmann::json::parse(train_report_json(r, v, echo));
  REQUIRE(j["kind"] == "train-report");
  REQUIRE(j["final_loss"] == 0.125);
  REQUIRE(j["ntp_trace"][0]["loss"] == 2.0);
  REQUIRE(j["ptp_traces"][0][0]["loss"] == 1.0);
  REQUIRE(j["validation"]["ntp_ce"] == 0.75);
  REQUIRE(j["validation"]["ptp_ce"][0] == 0.5);
  REQUIRE(j["validation"]["positions"] == 128);
}

TEST_CASE("error tables format one column per source", "[report]") {
  std::vector<std::string> names = {"echo", "coupled"};
  std::vector<std::vector<double>> rows = {{0.5, 0.25}, {0.125, 0.0625}};
  REQUIRE(tv_table_csv(names, rows) == "k,echo,coupled\n0,0.5,0.25\n1,0.125,0.0625\n");
  REQUIRE_THROWS_AS(tv_table_csv(names, {{0.5}}), report_error);

  ConfigMap echo;
  nlohmann::json j = nlohmann::json::parse(tv_table_json(names, rows, echo));
  REQUIRE(j["kind"] == "tv-table");
  REQUIRE(j["sources"] == nlohmann::json(names));
  REQUIRE(j["rows"][1]["k"] == 1);
  REQUIRE(j["rows"][1]["coupled"] == 0.0625);
}

TEST_CASE("improvement reports serialize the difference histogram", "[report]") {
  ImprovementResult r;
  r.fraction = 0.75;
  r.improved = 3;
  r.worsened = 1;
  r.ties = 1;
  r.used = 5;
  r.lo = -0.5;
  r.hi = 0.5;
  r.counts.assign(50, 0);
  r.counts[0] = 2;
  r.counts[49] = 3;
  ConfigMap echo;
  nlohmann::json j = nlohmann::json::parse(improvement_json(r, echo));
  REQUIRE(j["kind"] == "improvement-report");
  REQUIRE(j["fraction"] == 0.75);
  REQUIRE(j["improved"] == 3);
  REQUIRE(j["degenerate"] == false);
  REQUIRE(j["histogram"]["bin_edges"].size() == 51);
  REQUIRE(j["histogram"]["bin_edges"][0] == -0.5);
  REQUIRE(j["histogram"]["bin_edges"][50] == 0.5);
  REQUIRE(j["histogram"]["counts"][49] == 3);

  // NaN fractions (degenerate runs) serialize as JSON null.
  r.degenerate = true;
  r.fraction = std::nan("");
  nlohmann::json jd = nlohmann::json::parse(improvement_json(r, echo));
  REQUIRE(jd["fraction"].is_null());
  REQUIRE(jd["degenerate"] == true);
}

TEST_CASE("generation traces serialize events in both formats", "[report]") {
  GenerationTrace t;
  t.prompt = {2};
  t.initial_tokens = {0, 1};
  t.final_tokens = {2, 3, 1};
  t.events = {{1, 1, 0, 3, true}, {2, 1, 1, 2, false}};

  REQUIRE(trace_events_csv(t) ==
          "position,iteration,old_token,new_token,accepted\n"
          "1,1,0,3,1\n"
          "2,1,1,2,0\n");

  ConfigMap echo;
  nlohmann::json j = nlohmann::json::parse(generation_trace_json(t, echo));
  REQUIRE(j["kind"] == "generation-trace");
  REQUIRE(j["prompt"] == nlohmann::json(std::vector<int>{2}));
  REQUIRE(j["initial_tokens"] == nlohmann::json(std::vector<int>{0, 1}));
  REQUIRE(j["final_tokens"] == nlohmann::json(std::vector<int>{2, 3, 1}));
  REQUIRE(j["events"].size() == 2);
  REQUIRE(j["events"][0]["accepted"] == true);
  REQUIRE(j["events"][1]["accepted"] == false);
  REQUIRE(j["events"][1]["position"] == 2);
}

TEST_CASE("rendered histogram bars carry the exact report counts", "[report]") {
  SyntheticReport report = tiny_experiment(30, 0.5, 0.5);
  std::string svg = synthetic_histograms_svg(report, 0.5);

  std::regex bar_re("data-series=\"(ntp|rpt)\" data-bin=\"([0-9]+)\" data-count=\"([0-9]+)\"");
  std::vector<std::tuple<std::string, int, long>> bars;
  for (std::sregex_iterator it(svg.begin(), svg.end(), bar_re), end; it != end; ++it)
    bars.emplace_back((*it)[1], std::stoi((*it)[2]), std::stol((*it)[3]));

  std::vector<std::tuple<std::string, int, long>> expected;
  auto add_panel = [&expected](const Histogram& h) {
    for (int i = 0; i < kHistogramBins; ++i) {
      if (h.ntp_counts[static_cast<std::size_t>(i)] > 0)
        expected.emplace_back("ntp", i, h.ntp_counts[static_cast<std::size_t>(i)]);
      if (h.rpt_counts[static_cast<std::size_t>(i)] > 0)
        expected.emplace_back("rpt", i, h.rpt_counts[static_cast<std::size_t>(i)]);
    }
  };
  add_panel(report.cells[0].tv_hist);
  add_panel(report.cells[0].max_hist);
  REQUIRE(bars == expected);

  long total = 0;
  for (const auto& [series, bin, count] : bars) total += count;
  REQUIRE(total == 4 * 30);  // two series in each of two panels

  REQUIRE(svg.find("data-mean=") != std::string::npos);
  REQUIRE_THROWS_AS(synthetic_histograms_svg(report, 0.75), report_error);
  REQUIRE(distinct_base_noises(report) == std::vector<double>{0.5});
}
