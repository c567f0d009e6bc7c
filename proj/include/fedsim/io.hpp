// File formats and serialization: deterministic number formatting, atomic
// writes, partition files, transition-matrix files, and metrics logs.
#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "fedsim/fedengine.hpp"
#include "fedsim/noise.hpp"
#include "fedsim/partition.hpp"

namespace fedsim {

// Shortest round-trip decimal representation; the same double always
// produces the same bytes.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double_strict(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error(what + ": cannot parse '" + s + "' as a number");
  return v;
}

inline std::uint64_t parse_u64_strict(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error(what + ": cannot parse '" + s + "' as an integer");
  return v;
}

// Writes via a temp file and a rename so readers never observe a partial
// file.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- partition file ---------------------------------------------------------
//
//   scheme=labels
//   alpha=0.5
//   seed=42
//   num_clients=3
//   dataset_size=10
//   0: 0 3 7
//   1: 1 4 5 9
//   2: 2 6 8

struct PartitionFile {
  std::string scheme;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  PartitionMap map;
};

inline std::string serialize_partition(const PartitionFile& pf) {
  std::ostringstream out;
  out << "scheme=" << pf.scheme << "\n";
  out << "alpha=" << format_double(pf.alpha) << "\n";
  out << "seed=" << pf.seed << "\n";
  out << "num_clients=" << pf.map.num_clients() << "\n";
  out << "dataset_size=" << pf.map.dataset_size << "\n";
  for (std::size_t i = 0; i < pf.map.num_clients(); ++i) {
    out << i << ":";
    for (std::size_t s : pf.map.assignments[i]) out << ' ' << s;
    out << "\n";
  }
  return out.str();
}

inline PartitionFile parse_partition(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  PartitionFile pf;
  std::size_t num_clients = 0;
  for (int i = 0; i < 5; ++i) {
    if (!std::getline(in, line))
      throw std::runtime_error("partition file: truncated header");
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("partition file: bad header line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "scheme") pf.scheme = value;
    else if (key == "alpha") pf.alpha = parse_double_strict(value, "partition alpha");
    else if (key == "seed") pf.seed = parse_u64_strict(value, "partition seed");
    else if (key == "num_clients") num_clients = parse_u64_strict(value, "num_clients");
    else if (key == "dataset_size")
      pf.map.dataset_size = parse_u64_strict(value, "dataset_size");
    else throw std::runtime_error("partition file: unknown header key: " + key);
  }
  pf.map.assignments.resize(num_clients);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos || row >= num_clients)
      throw std::runtime_error("partition file: bad client line: " + line);
    if (parse_u64_strict(line.substr(0, colon), "client id") != row)
      throw std::runtime_error("partition file: client lines out of order");
    std::istringstream ls(line.substr(colon + 1));
    std::string tok;
    while (ls >> tok)
      pf.map.assignments[row].push_back(parse_u64_strict(tok, "sample index"));
    ++row;
  }
  if (row != num_clients)
    throw std::runtime_error("partition file: missing client lines");
  detail::validate_partition(pf.map);
  return pf;
}

// --- transition matrix file --------------------------------------------------
// C rows of C whitespace-separated probabilities; validated row-stochastic.

inline std::string serialize_transition_matrix(const TransitionMatrix& t) {
  std::ostringstream out;
  for (std::size_t i = 0; i < t.q.rows; ++i) {
    for (std::size_t j = 0; j < t.q.cols; ++j)
      out << (j ? " " : "") << format_double(t.q(i, j));
    out << "\n";
  }
  return out.str();
}

inline TransitionMatrix parse_transition_matrix(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) row.push_back(parse_double_strict(tok, "transition matrix"));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("transition matrix file: empty");
  Matrix q(rows.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size())
      throw std::runtime_error("transition matrix file: not square");
    for (std::size_t j = 0; j < rows[i].size(); ++j) q(i, j) = rows[i][j];
  }
  return make_transition_matrix(std::move(q));  // validates row-stochastic
}

// --- metrics log -------------------------------------------------------------
//
// Line-delimited: `config k=v` and `info k=v` header records, `note ...`
// event lines, then one `record ...` line per round with the fixed fields
// round, clients, train_loss, metric, checkpoint_tag. Wall time lives in a
// trailing comment so byte comparison of non-comment lines is meaningful.

inline std::string serialize_metrics(const MetricsLog& log) {
  std::ostringstream out;
  out << "#fedsim-metrics-v1\n";
  for (const auto& [k, v] : log.config_echo) out << "config " << k << "=" << v << "\n";
  for (const auto& [k, v] : log.info) out << "info " << k << "=" << v << "\n";
  for (const auto& note : log.notes) out << "note " << note << "\n";
  for (const RoundRecord& r : log.records) {
    out << "record round=" << r.round << " clients=";
    for (std::size_t i = 0; i < r.clients.size(); ++i)
      out << (i ? "," : "") << r.clients[i];
    out << " train_loss=" << format_double(r.train_loss);
    out << " metric=" << (r.metric ? format_double(*r.metric) : std::string("-"));
    out << " checkpoint_tag=" << r.checkpoint_tag << "\n";
  }
  out << "# wall_ms=" << format_double(log.total_wall_ms) << "\n";
  return out.str();
}

inline MetricsLog parse_metrics(const std::string& text) {
  MetricsLog log;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto sp = line.find(' ');
    const std::string kind = line.substr(0, sp == std::string::npos ? line.size() : sp);
    const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (kind == "config" || kind == "info") {
      const auto eq = rest.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("metrics: bad header line: " + line);
      auto& dst = kind == "config" ? log.config_echo : log.info;
      dst.emplace_back(rest.substr(0, eq), rest.substr(eq + 1));
    } else if (kind == "note") {
      log.notes.push_back(rest);
    } else if (kind == "record") {
      RoundRecord rec;
      std::istringstream ls(rest);
      std::string field;
      while (ls >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos)
          throw std::runtime_error("metrics: bad record field: " + field);
        const std::string key = field.substr(0, eq);
        const std::string value = field.substr(eq + 1);
        if (key == "round") {
          rec.round = parse_u64_strict(value, "metrics round");
        } else if (key == "clients") {
          std::istringstream cs(value);
          std::string tok;
          while (std::getline(cs, tok, ','))
            if (!tok.empty()) rec.clients.push_back(parse_u64_strict(tok, "client id"));
        } else if (key == "train_loss") {
          rec.train_loss = parse_double_strict(value, "train_loss");
        } else if (key == "metric") {
          if (value != "-") rec.metric = parse_double_strict(value, "metric");
        } else if (key == "checkpoint_tag") {
          rec.checkpoint_tag = value;
        } else {
          throw std::runtime_error("metrics: unknown record field: " + key);
        }
      }
      log.records.push_back(std::move(rec));
    } else {
      throw std::runtime_error("metrics: unknown line kind: " + kind);
    }
  }
  return log;
}

// Comparison view of a metrics file: every non-comment line, byte for byte.
inline std::string metrics_body(const std::string& text) {
  std::istringstream in(text);
  std::string line, body;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    body += line;
    body += '\n';
  }
  return body;
}

}  // namespace fedsim
