// Tabular datasets: CSV ingestion, seeded synthetic generators, and
// train-statistics standardization.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedsim/matrix.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class TargetKind { categorical, continuous };
enum class Split { train, test };

struct Targets {
  TargetKind kind = TargetKind::categorical;
  int num_classes = 0;             // categorical only, always >= 2
  std::vector<int> labels;         // categorical values in [0, num_classes)
  std::vector<double> values;      // continuous targets

  std::size_t size() const {
    return kind == TargetKind::categorical ? labels.size() : values.size();
  }

  static Targets categorical(std::vector<int> labels, int num_classes) {
    if (num_classes < 2)
      throw std::invalid_argument("Targets: fewer than 2 classes");
    for (int y : labels)
      if (y < 0 || y >= num_classes)
        throw std::invalid_argument("Targets: label outside [0, num_classes)");
    Targets t;
    t.kind = TargetKind::categorical;
    t.num_classes = num_classes;
    t.labels = std::move(labels);
    return t;
  }

  static Targets continuous(std::vector<double> values) {
    for (double v : values)
      if (!std::isfinite(v))
        throw std::invalid_argument("Targets: non-finite continuous target");
    Targets t;
    t.kind = TargetKind::continuous;
    t.values = std::move(values);
    return t;
  }
};

struct TabularDataset {
  Matrix features;  // N x D
  Targets targets;
  std::vector<std::string> feature_names;
  Split split_tag = Split::train;

  std::size_t num_samples() const { return features.rows; }
  std::size_t num_features() const { return features.cols; }
};

struct StandardizeStats {
  std::vector<double> means;
  std::vector<double> stddevs;  // strictly positive
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline bool parse_double(const std::string& s, double& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stod(t, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == t.size() && std::isfinite(out);
}

}  // namespace detail

// Reads a comma-separated UTF-8 file with a header row. Every non-target
// cell must parse as a finite real. Categorical target values (integers or
// arbitrary strings) are mapped to 0..C-1 in order of first appearance.
inline TabularDataset load_csv(const std::string& path,
                               const std::string& target_column,
                               TargetKind kind) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open file: " + path);

  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_csv: " + path + ": empty file");
  std::vector<std::string> header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);

  std::size_t target_idx = header.size();
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == target_column) target_idx = j;
  if (target_idx == header.size())
    throw std::runtime_error("load_csv: " + path + ": no column named '" +
                             target_column + "'");
  if (header.size() < 2)
    throw std::runtime_error("load_csv: " + path +
                             ": need at least one feature column");

  const std::size_t d = header.size() - 1;
  std::vector<double> flat;
  std::vector<std::string> raw_targets;
  std::vector<std::size_t> target_rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("load_csv: " + path + ": row " +
                               std::to_string(row) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(header.size()));
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (j == target_idx) {
        raw_targets.push_back(detail::trim(cells[j]));
        target_rows.push_back(row);
        continue;
      }
      double v;
      if (!detail::parse_double(cells[j], v))
        throw std::runtime_error("load_csv: " + path + ": row " +
                                 std::to_string(row) + ", column '" + header[j] +
                                 "': cannot parse '" + detail::trim(cells[j]) +
                                 "' as a finite number");
      flat.push_back(v);
    }
  }
  if (raw_targets.empty())
    throw std::runtime_error("load_csv: " + path + ": no data rows");

  TabularDataset ds;
  ds.features.rows = raw_targets.size();
  ds.features.cols = d;
  ds.features.data = std::move(flat);
  for (std::size_t j = 0; j < header.size(); ++j)
    if (j != target_idx) ds.feature_names.push_back(header[j]);

  if (kind == TargetKind::categorical) {
    std::unordered_map<std::string, int> ids;
    std::vector<int> labels;
    labels.reserve(raw_targets.size());
    for (const auto& s : raw_targets) {
      auto [it, inserted] = ids.emplace(s, static_cast<int>(ids.size()));
      labels.push_back(it->second);
    }
    if (ids.size() < 2)
      throw std::runtime_error("load_csv: " + path +
                               ": target column '" + target_column +
                               "' has fewer than 2 classes");
    ds.targets = Targets::categorical(std::move(labels), static_cast<int>(ids.size()));
  } else {
    std::vector<double> values;
    values.reserve(raw_targets.size());
    for (std::size_t i = 0; i < raw_targets.size(); ++i) {
      double v;
      if (!detail::parse_double(raw_targets[i], v))
        throw std::runtime_error("load_csv: " + path + ": row " +
                                 std::to_string(target_rows[i]) + ", column '" +
                                 target_column + "': cannot parse '" +
                                 raw_targets[i] + "' as a finite number");
      values.push_back(v);
    }
    ds.targets = Targets::continuous(std::move(values));
  }
  return ds;
}

// Gaussian blobs with unit within-class variance. Class centers sit on a
// circle in the first two dimensions (a line for d == 1) so that adjacent
// centers are exactly `separation` apart. Row i belongs to class i mod c,
// which keeps every prefix of the dataset near-balanced.
inline TabularDataset make_synthetic_classification(std::size_t n, std::size_t d,
                                                    int c, double separation,
                                                    std::uint64_t seed) {
  if (c < 2 || n < static_cast<std::size_t>(c) || d < 1)
    throw std::invalid_argument(
        "make_synthetic_classification: need n >= c >= 2 and d >= 1");
  if (!(separation >= 0.0) || !std::isfinite(separation))
    throw std::invalid_argument(
        "make_synthetic_classification: separation must be finite and >= 0");

  std::vector<std::vector<double>> centers(static_cast<std::size_t>(c),
                                           std::vector<double>(d, 0.0));
  const double pi = 3.14159265358979323846;
  if (d == 1) {
    for (int k = 0; k < c; ++k) centers[k][0] = separation * k;
  } else {
    const double radius = separation / (2.0 * std::sin(pi / c));
    for (int k = 0; k < c; ++k) {
      const double angle = 2.0 * pi * k / c;
      centers[k][0] = radius * std::cos(angle);
      centers[k][1] = radius * std::sin(angle);
    }
  }

  Rng rng(derive_seed(seed, StreamTag::dataset, 1));
  TabularDataset ds;
  ds.features = Matrix(n, d);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(i % static_cast<std::size_t>(c));
    labels[i] = k;
    for (std::size_t j = 0; j < d; ++j)
      ds.features(i, j) = centers[k][j] + rng.normal();
  }
  ds.targets = Targets::categorical(std::move(labels), c);
  for (std::size_t j = 0; j < d; ++j)
    ds.feature_names.push_back("f" + std::to_string(j));
  return ds;
}

// Linear model y = w.x + b + noise with seeded w, b, x.
inline TabularDataset make_synthetic_regression(std::size_t n, std::size_t d,
                                                double noise_sd,
                                                std::uint64_t seed) {
  if (n < 2 || d < 1)
    throw std::invalid_argument("make_synthetic_regression: need n >= 2 and d >= 1");
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd))
    throw std::invalid_argument(
        "make_synthetic_regression: noise_sd must be finite and >= 0");

  Rng rng(derive_seed(seed, StreamTag::dataset, 2));
  std::vector<double> w(d);
  for (auto& wj : w) wj = rng.normal();
  const double b = rng.normal();

  TabularDataset ds;
  ds.features = Matrix(n, d);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = b;
    for (std::size_t j = 0; j < d; ++j) {
      const double x = rng.normal();
      ds.features(i, j) = x;
      dot += w[j] * x;
    }
    y[i] = noise_sd > 0.0 ? dot + noise_sd * rng.normal() : dot;
  }
  ds.targets = Targets::continuous(std::move(y));
  for (std::size_t j = 0; j < d; ++j)
    ds.feature_names.push_back("f" + std::to_string(j));
  return ds;
}

// Rows [begin, end) of a dataset, preserving order.
inline TabularDataset slice_rows(const TabularDataset& ds, std::size_t begin,
                                 std::size_t end, Split tag) {
  if (begin > end || end > ds.num_samples())
    throw std::invalid_argument("slice_rows: invalid range");
  TabularDataset out;
  out.features = Matrix(end - begin, ds.num_features());
  std::copy(ds.features.row(begin), ds.features.row(begin) + (end - begin) * ds.num_features(),
            out.features.data.begin());
  out.targets.kind = ds.targets.kind;
  out.targets.num_classes = ds.targets.num_classes;
  if (ds.targets.kind == TargetKind::categorical)
    out.targets.labels.assign(ds.targets.labels.begin() + begin,
                              ds.targets.labels.begin() + end);
  else
    out.targets.values.assign(ds.targets.values.begin() + begin,
                              ds.targets.values.begin() + end);
  out.feature_names = ds.feature_names;
  out.split_tag = tag;
  return out;
}

struct StandardizeResult {
  TabularDataset train;
  std::vector<TabularDataset> others;
  StandardizeStats stats;
};

namespace detail {

inline void apply_standardize(TabularDataset& ds, const StandardizeStats& st) {
  for (std::size_t i = 0; i < ds.features.rows; ++i)
    for (std::size_t j = 0; j < ds.features.cols; ++j)
      ds.features(i, j) = (ds.features(i, j) - st.means[j]) / st.stddevs[j];
}

}  // namespace detail

// Column statistics come from `train` only and are applied to every dataset.
// A constant column keeps its value as the mean and falls back to stddev 1,
// so it transforms to exact zeros. Stddev is the population form (divide by N).
inline StandardizeResult standardize(const TabularDataset& train,
                                     const std::vector<TabularDataset>& others = {}) {
  const std::size_t n = train.num_samples();
  const std::size_t d = train.num_features();
  for (const auto& o : others)
    if (o.num_features() != d)
      throw std::invalid_argument("standardize: feature dimension mismatch");

  StandardizeStats st;
  st.means.resize(d);
  st.stddevs.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    double lo = train.features(0, j), hi = lo;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = train.features(i, j);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    if (lo == hi) {
      st.means[j] = lo;
      st.stddevs[j] = 1.0;
      continue;
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dv = train.features(i, j) - mean;
      ss += dv * dv;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    st.means[j] = mean;
    st.stddevs[j] = sd > 0.0 ? sd : 1.0;
  }

  StandardizeResult out;
  out.train = train;
  detail::apply_standardize(out.train, st);
  out.others = others;
  for (auto& o : out.others) detail::apply_standardize(o, st);
  out.stats = std::move(st);
  return out;
}

}  // namespace fedsim
