#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpt/config.hpp"
#include "rpt/model.hpp"
#include "rpt/sampler.hpp"
#include "rpt/synthetic.hpp"

namespace rpt {

class report_error : public std::logic_error {
 public:
  explicit report_error(const std::string& what) : std::logic_error(what) {}
};

// Shortest decimal string that round-trips the double exactly.
inline std::string fmt_g17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

// Writes to path + ".tmp" and renames over the target, so a failure mid-write
// never leaves a truncated file at the final path.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("atomic_write_file: cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("atomic_write_file: write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw std::runtime_error("atomic_write_file: rename to " + path.string() + " failed");
  }
}

class CsvBuilder {
 public:
  explicit CsvBuilder(const std::vector<std::string>& columns) : width_(columns.size()) {
    append_row(columns);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) throw report_error("CsvBuilder: row width mismatch");
    append_row(cells);
  }

  const std::string& str() const { return out_; }

 private:
  void append_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ += ',';
      out_ += cells[i];
    }
    out_ += '\n';
  }

  std::size_t width_ = 0;
  std::string out_;
};

inline std::string synthetic_trials_csv(const SyntheticReport& report) {
  CsvBuilder csv({"base_noise", "ratio", "trial", "ntp_tv", "rpt_tv", "ntp_max", "rpt_max", "kappa", "rpt_factor"});
  for (const CellResult& cell : report.cells)
    for (const TrialResult& t : cell.trials)
      csv.row({fmt_g17(cell.config.base_noise), fmt_g17(cell.config.ratio), std::to_string(t.trial),
               fmt_g17(t.ntp_tv), fmt_g17(t.rpt_tv), fmt_g17(t.ntp_max), fmt_g17(t.rpt_max), fmt_g17(t.kappa),
               fmt_g17(t.rpt_factor)});
  return csv.str();
}

inline std::string synthetic_summary_csv(const SyntheticReport& report) {
  CsvBuilder csv({"base_noise", "ratio", "trials_requested", "trials_completed", "ntp_tv_mean", "ntp_tv_se",
                  "rpt_tv_mean", "rpt_tv_se", "ntp_max_mean", "ntp_max_se", "rpt_max_mean", "rpt_max_se",
                  "kappa_mean", "kappa_se", "rpt_factor_mean", "rpt_factor_se", "improvement"});
  for (const CellResult& cell : report.cells)
    csv.row({fmt_g17(cell.config.base_noise), fmt_g17(cell.config.ratio), std::to_string(cell.config.trials),
             std::to_string(cell.trials.size()), fmt_g17(cell.ntp_tv.mean), fmt_g17(cell.ntp_tv.std_error),
             fmt_g17(cell.rpt_tv.mean), fmt_g17(cell.rpt_tv.std_error), fmt_g17(cell.ntp_max.mean),
             fmt_g17(cell.ntp_max.std_error), fmt_g17(cell.rpt_max.mean), fmt_g17(cell.rpt_max.std_error),
             fmt_g17(cell.kappa.mean), fmt_g17(cell.kappa.std_error), fmt_g17(cell.rpt_factor.mean),
             fmt_g17(cell.rpt_factor.std_error), fmt_g17(cell.improvement())});
  return csv.str();
}

namespace detail {

inline nlohmann::json summary_json(const MetricSummary& s) {
  return nlohmann::json{{"mean", s.mean}, {"std_error", s.std_error}};
}

inline nlohmann::json histogram_json(const Histogram& h) {
  std::vector<double> edges(static_cast<std::size_t>(kHistogramBins) + 1);
  for (int i = 0; i <= kHistogramBins; ++i)
    edges[static_cast<std::size_t>(i)] = h.lo + (h.hi - h.lo) * i / kHistogramBins;
  return nlohmann::json{
      {"lo", h.lo}, {"hi", h.hi}, {"bin_edges", edges}, {"ntp_counts", h.ntp_counts}, {"rpt_counts", h.rpt_counts}};
}

inline nlohmann::json config_echo_json(const ConfigMap& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : cfg.values()) j[k] = v;
  return j;
}

}  // namespace detail

inline constexpr int kArtifactVersion = 1;

// Full machine-readable report: config echo, per-trial records, aggregates,
// failures. Aggregates are only attached to cells that have per-trial
// records to back them.
inline std::string synthetic_report_json(const SyntheticReport& report, const ConfigMap& config_echo) {
  nlohmann::json cells = nlohmann::json::array();
  for (const CellResult& cell : report.cells) {
    if (cell.trials.size() + cell.failures.size() != static_cast<std::size_t>(cell.config.trials))
      throw report_error("synthetic_report_json: trial records do not account for every requested trial");
    nlohmann::json trials = nlohmann::json::array();
    for (const TrialResult& t : cell.trials)
      trials.push_back(nlohmann::json{{"trial", t.trial},
                                      {"ntp_tv", t.ntp_tv},
                                      {"rpt_tv", t.rpt_tv},
                                      {"ntp_max", t.ntp_max},
                                      {"rpt_max", t.rpt_max},
                                      {"kappa", t.kappa},
                                      {"ntp_bound", t.ntp_bound},
                                      {"rpt_bound", t.rpt_bound},
                                      {"rpt_factor", t.rpt_factor}});
    nlohmann::json failures = nlohmann::json::array();
    for (const TrialFailure& f : cell.failures)
      failures.push_back(nlohmann::json{{"trial", f.trial}, {"message", f.message}});
    nlohmann::json c{{"base_noise", cell.config.base_noise},
                     {"ratio", cell.config.ratio},
                     {"vocab_size", cell.config.vocab_size},
                     {"seed", cell.config.seed},
                     {"trials_requested", cell.config.trials},
                     {"trials", trials},
                     {"failures", failures}};
    if (cell.trials.empty()) {
      c["aggregates"] = nullptr;
      c["histograms"] = nullptr;
    } else {
      c["aggregates"] = nlohmann::json{{"ntp_tv", detail::summary_json(cell.ntp_tv)},
                                       {"rpt_tv", detail::summary_json(cell.rpt_tv)},
                                       {"ntp_max", detail::summary_json(cell.ntp_max)},
                                       {"rpt_max", detail::summary_json(cell.rpt_max)},
                                       {"kappa", detail::summary_json(cell.kappa)},
                                       {"rpt_factor", detail::summary_json(cell.rpt_factor)},
                                       {"improvement", cell.improvement()}};
      c["histograms"] =
          nlohmann::json{{"tv", detail::histogram_json(cell.tv_hist)}, {"max", detail::histogram_json(cell.max_hist)}};
    }
    cells.push_back(std::move(c));
  }
  nlohmann::json j{{"artifact_version", kArtifactVersion},
                   {"kind", "synthetic-report"},
                   {"config", detail::config_echo_json(config_echo)},
                   {"cells", cells}};
  return j.dump(2) + "\n";
}

// One row per training step; a column is empty on steps where no position of
// that class appeared in the batch.
inline std::string loss_trace_csv(const TrainReport& report) {
  std::size_t ptp_kinds = report.ptp_traces.size();
  std::vector<std::string> cols{"step", "ntp_loss"};
  for (std::size_t i = 0; i < ptp_kinds; ++i) cols.push_back("ptp_" + std::to_string(i + 1) + "_loss");
  std::map<int, std::vector<std::optional<double>>> rows;
  auto slot = [&](int step) -> std::vector<std::optional<double>>& {
    auto it = rows.find(step);
    if (it == rows.end()) it = rows.emplace(step, std::vector<std::optional<double>>(1 + ptp_kinds)).first;
    return it->second;
  };
  for (const StepLoss& s : report.ntp_trace) slot(s.step)[0] = s.loss;
  for (std::size_t i = 0; i < ptp_kinds; ++i)
    for (const StepLoss& s : report.ptp_traces[i]) slot(s.step)[i + 1] = s.loss;
  CsvBuilder csv(cols);
  for (const auto& [step, vals] : rows) {
    std::vector<std::string> cells{std::to_string(step)};
    for (const auto& v : vals) cells.push_back(v ? fmt_g17(*v) : "");
    csv.row(cells);
  }
  return csv.str();
}

inline std::string train_report_json(const TrainReport& report, const ValidationScores& scores,
                                     const ConfigMap& config_echo) {
  auto trace_json = [](const std::vector<StepLoss>& t) {
    nlohmann::json arr = nlohmann::json::array();
    for (const StepLoss& s : t) arr.push_back(nlohmann::json{{"step", s.step}, {"loss", s.loss}});
    return arr;
  };
  nlohmann::json ptp = nlohmann::json::array();
  for (const auto& t : report.ptp_traces) ptp.push_back(trace_json(t));
  nlohmann::json j{{"artifact_version", kArtifactVersion},
                   {"kind", "train-report"},
                   {"config", detail::config_echo_json(config_echo)},
                   {"final_loss", report.final_loss},
                   {"ntp_trace", trace_json(report.ntp_trace)},
                   {"ptp_traces", ptp},
                   {"validation", nlohmann::json{{"ntp_ce", scores.ntp_ce},
                                                 {"ptp_ce", scores.ptp_ce},
                                                 {"positions", scores.positions}}}};
  return j.dump(2) + "\n";
}

// Error-vs-iterations table: one row per refinement count, one column per
// named source.
inline std::string tv_table_csv(const std::vector<std::string>& source_names,
                                const std::vector<std::vector<double>>& rows) {
  std::vector<std::string> cols{"k"};
  cols.insert(cols.end(), source_names.begin(), source_names.end());
  CsvBuilder csv(cols);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].size() != source_names.size()) throw report_error("tv_table_csv: row width mismatch");
    std::vector<std::string> cells{std::to_string(k)};
    for (double x : rows[k]) cells.push_back(fmt_g17(x));
    csv.row(cells);
  }
  return csv.str();
}

inline std::string tv_table_json(const std::vector<std::string>& source_names,
                                 const std::vector<std::vector<double>>& rows, const ConfigMap& config_echo) {
  nlohmann::json table = nlohmann::json::array();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    nlohmann::json row{{"k", k}};
    for (std::size_t s = 0; s < source_names.size(); ++s) row[source_names[s]] = rows[k][s];
    table.push_back(std::move(row));
  }
  nlohmann::json j{{"artifact_version", kArtifactVersion},
                   {"kind", "tv-table"},
                   {"config", detail::config_echo_json(config_echo)},
                   {"sources", source_names},
                   {"rows", table}};
  return j.dump(2) + "\n";
}

inline std::string improvement_json(const ImprovementResult& r, const ConfigMap& config_echo) {
  std::vector<double> edges(r.counts.size() + 1);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = r.lo + (r.hi - r.lo) * static_cast<double>(i) / static_cast<double>(r.counts.size());
  nlohmann::json j{{"artifact_version", kArtifactVersion},
                   {"kind", "improvement-report"},
                   {"config", detail::config_echo_json(config_echo)},
                   {"fraction", r.fraction},
                   {"improved", r.improved},
                   {"worsened", r.worsened},
                   {"ties", r.ties},
                   {"used", r.used},
                   {"degenerate", r.degenerate},
                   {"histogram", nlohmann::json{{"lo", r.lo}, {"hi", r.hi}, {"bin_edges", edges}, {"counts", r.counts}}}};
  return j.dump(2) + "\n";
}

inline std::string trace_events_csv(const GenerationTrace& t) {
  CsvBuilder csv({"position", "iteration", "old_token", "new_token", "accepted"});
  for (const ReplacementEvent& e : t.events)
    csv.row({std::to_string(e.position), std::to_string(e.iteration), std::to_string(e.old_token),
             std::to_string(e.new_token), e.accepted ? "1" : "0"});
  return csv.str();
}

inline std::string generation_trace_json(const GenerationTrace& t, const ConfigMap& config_echo) {
  nlohmann::json events = nlohmann::json::array();
  for (const ReplacementEvent& e : t.events)
    events.push_back(nlohmann::json{{"position", e.position},
                                    {"iteration", e.iteration},
                                    {"old_token", e.old_token},
                                    {"new_token", e.new_token},
                                    {"accepted", e.accepted}});
  nlohmann::json j{{"artifact_version", kArtifactVersion},
                   {"kind", "generation-trace"},
                   {"config", detail::config_echo_json(config_echo)},
                   {"prompt", t.prompt},
                   {"initial_tokens", t.initial_tokens},
                   {"events", events},
                   {"final_tokens", t.final_tokens}};
  return j.dump(2) + "\n";
}

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

// One overlay panel. Bars carry data-series / data-bin / data-count so the
// rendered file can be checked against the report it came from.
inline void histogram_panel(std::ostringstream& svg, const Histogram& h, double x0, double y0, double w, double h_px,
                            const std::string& title, double ntp_mean, double rpt_mean) {
  long peak = 1;
  for (long c : h.ntp_counts) peak = std::max(peak, c);
  for (long c : h.rpt_counts) peak = std::max(peak, c);
  svg << "<g>\n";
  svg << "<text x=\"" << x0 << "\" y=\"" << y0 - 8 << "\" font-size=\"12\" fill=\"#333\">" << svg_escape(title)
      << "</text>\n";
  svg << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << w << "\" height=\"" << h_px
      << "\" fill=\"none\" stroke=\"#999\"/>\n";
  int bins = static_cast<int>(h.ntp_counts.size());
  double bw = w / bins;
  for (int i = 0; i < bins; ++i) {
    double hn = h_px * static_cast<double>(h.ntp_counts[static_cast<std::size_t>(i)]) / static_cast<double>(peak);
    double hr = h_px * static_cast<double>(h.rpt_counts[static_cast<std::size_t>(i)]) / static_cast<double>(peak);
    if (hn > 0)
      svg << "<rect data-series=\"ntp\" data-bin=\"" << i << "\" data-count=\""
          << h.ntp_counts[static_cast<std::size_t>(i)] << "\" x=\"" << x0 + i * bw << "\" y=\"" << y0 + h_px - hn
          << "\" width=\"" << bw << "\" height=\"" << hn << "\" fill=\"#4878cf\" fill-opacity=\"0.55\"/>\n";
    if (hr > 0)
      svg << "<rect data-series=\"rpt\" data-bin=\"" << i << "\" data-count=\""
          << h.rpt_counts[static_cast<std::size_t>(i)] << "\" x=\"" << x0 + i * bw + 0.2 * bw << "\" y=\""
          << y0 + h_px - hr << "\" width=\"" << 0.6 * bw << "\" height=\"" << hr
          << "\" fill=\"#d65f2f\" fill-opacity=\"0.65\"/>\n";
  }
  double span = h.hi - h.lo;
  if (span > 0) {
    auto marker = [&](double mean, const char* series, const char* color) {
      double mx = x0 + (mean - h.lo) / span * w;
      svg << "<line data-series=\"" << series << "\" data-mean=\"" << fmt_g17(mean) << "\" x1=\"" << mx << "\" y1=\""
          << y0 << "\" x2=\"" << mx << "\" y2=\"" << y0 + h_px << "\" stroke=\"" << color
          << "\" stroke-dasharray=\"4 3\"/>\n";
    };
    marker(ntp_mean, "ntp", "#1f4da0");
    marker(rpt_mean, "rpt", "#a03c10");
  }
  svg << "<text x=\"" << x0 << "\" y=\"" << y0 + h_px + 14 << "\" font-size=\"10\" fill=\"#555\">" << fmt_g17(h.lo)
      << "</text>\n";
  svg << "<text x=\"" << x0 + w << "\" y=\"" << y0 + h_px + 14
      << "\" font-size=\"10\" fill=\"#555\" text-anchor=\"end\">" << fmt_g17(h.hi) << "</text>\n";
  svg << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + 10 << "\" font-size=\"10\" fill=\"#555\" text-anchor=\"end\">"
      << peak << "</text>\n";
  svg << "</g>\n";
}

}  // namespace detail

// Overlay histograms for every cell sharing one base noise level: a column
// per conditional-noise ratio, rows for total variation and max-norm errors.
inline std::string synthetic_histograms_svg(const SyntheticReport& report, double base_noise) {
  std::vector<const CellResult*> cells;
  for (const CellResult& c : report.cells)
    if (c.config.base_noise == base_noise && !c.trials.empty()) cells.push_back(&c);
  if (cells.empty()) throw report_error("synthetic_histograms_svg: no populated cells at this base noise");

  const double panel_w = 240, panel_h = 150, gap_x = 46, gap_y = 56, left = 56, top = 64;
  double width = left + cells.size() * (panel_w + gap_x);
  double height = top + 2 * (panel_h + gap_y);
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"22\" font-size=\"14\" fill=\"#111\">stationary error distributions, base noise "
      << fmt_g17(base_noise) << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"32\" width=\"12\" height=\"12\" fill=\"#4878cf\" fill-opacity=\"0.55\"/>"
      << "<text x=\"" << left + 16 << "\" y=\"42\" font-size=\"11\" fill=\"#333\">NTP</text>\n";
  svg << "<rect x=\"" << left + 60 << "\" y=\"32\" width=\"12\" height=\"12\" fill=\"#d65f2f\" fill-opacity=\"0.65\"/>"
      << "<text x=\"" << left + 76 << "\" y=\"42\" font-size=\"11\" fill=\"#333\">RPT</text>\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const CellResult& c = *cells[i];
    double x0 = left + static_cast<double>(i) * (panel_w + gap_x);
    detail::histogram_panel(svg, c.tv_hist, x0, top + 16, panel_w, panel_h,
                            "ratio " + fmt_g17(c.config.ratio) + ", total variation", c.ntp_tv.mean, c.rpt_tv.mean);
    detail::histogram_panel(svg, c.max_hist, x0, top + 16 + panel_h + gap_y, panel_w, panel_h,
                            "ratio " + fmt_g17(c.config.ratio) + ", max entry", c.ntp_max.mean, c.rpt_max.mean);
  }
  svg << "</svg>\n";
  return svg.str();
}

inline std::vector<double> distinct_base_noises(const SyntheticReport& report) {
  std::vector<double> out;
  for (const CellResult& c : report.cells)
    if (std::find(out.begin(), out.end(), c.config.base_noise) == out.end()) out.push_back(c.config.base_noise);
  return out;
}

}  // namespace rpt
