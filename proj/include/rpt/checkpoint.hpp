#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpt/model.hpp"

namespace rpt {

struct checkpoint_format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::vector<int> parse_int_list(const std::string& text, char sep) {
  std::vector<int> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    if (item.empty()) throw checkpoint_format_error("checkpoint: empty integer field");
    out.push_back(std::stoi(item));
  }
  return out;
}

}  // namespace detail

// Text checkpoint: a header of hyperparameters followed by one line per
// table row, `tokens|deltas|target_delta|logits`. Rows are written in sorted
// key order so identical models always serialize to identical bytes.
inline std::string serialize_checkpoint(const ToyModel& m) {
  const ToyHyperparams& hp = m.hyperparams();
  std::ostringstream out;
  out << "toy-model-checkpoint v1\n";
  out << "vocab " << hp.vocab << "\n";
  out << "context " << hp.context_width << "\n";
  out << "window " << hp.window << "\n";
  out << "learning_rate " << detail::format_double(hp.learning_rate) << "\n";
  std::vector<ContextKey> keys = m.sorted_keys();
  out << "rows " << keys.size() << "\n";
  for (const ContextKey& k : keys) {
    for (std::size_t i = 0; i < k.tokens.size(); ++i) out << (i ? "," : "") << k.tokens[i];
    out << "|";
    for (std::size_t i = 0; i < k.deltas.size(); ++i) out << (i ? "," : "") << k.deltas[i];
    out << "|" << k.target_delta << "|";
    auto row = m.row(k);
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? " " : "") << detail::format_double(row[i]);
    out << "\n";
  }
  return out.str();
}

inline ToyModel parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) throw checkpoint_format_error(std::string("checkpoint: missing ") + what);
    return line;
  };
  if (next_line("magic") != "toy-model-checkpoint v1")
    throw checkpoint_format_error("checkpoint: unrecognized header line");

  auto header_value = [&](const char* name) {
    next_line(name);
    std::string prefix = std::string(name) + " ";
    if (line.rfind(prefix, 0) != 0) throw checkpoint_format_error(std::string("checkpoint: expected `") + name + "`");
    return line.substr(prefix.size());
  };

  ToyHyperparams hp;
  hp.vocab = std::stoi(header_value("vocab"));
  hp.context_width = std::stoi(header_value("context"));
  hp.window = std::stoi(header_value("window"));
  hp.learning_rate = std::stod(header_value("learning_rate"));
  long rows = std::stol(header_value("rows"));
  if (rows < 0) throw checkpoint_format_error("checkpoint: negative row count");

  ToyModel m(hp);
  for (long r = 0; r < rows; ++r) {
    next_line("table row");
    std::istringstream fields(line);
    std::string tok_field, delta_field, target_field, logit_field;
    if (!std::getline(fields, tok_field, '|') || !std::getline(fields, delta_field, '|') ||
        !std::getline(fields, target_field, '|') || !std::getline(fields, logit_field))
      throw checkpoint_format_error("checkpoint: malformed row " + std::to_string(r));
    ContextKey k;
    k.tokens = detail::parse_int_list(tok_field, ',');
    k.deltas = detail::parse_int_list(delta_field, ',');
    k.target_delta = std::stoi(target_field);
    if (k.tokens.size() != static_cast<std::size_t>(hp.context_width) || k.deltas.size() != k.tokens.size())
      throw checkpoint_format_error("checkpoint: key width mismatch in row " + std::to_string(r));
    std::vector<double> logits;
    std::istringstream ls(logit_field);
    double z;
    while (ls >> z) logits.push_back(z);
    if (static_cast<int>(logits.size()) != hp.vocab)
      throw checkpoint_format_error("checkpoint: logit count mismatch in row " + std::to_string(r));
    m.set_row(k, std::move(logits));
  }
  if (std::getline(in, line) && !line.empty())
    throw checkpoint_format_error("checkpoint: trailing content after the declared rows");
  return m;
}

inline void save_checkpoint(const ToyModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << serialize_checkpoint(m);
  if (!out.good()) throw std::runtime_error("save_checkpoint: write to " + path + " failed");
}

inline ToyModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace rpt
