// Label corruption through row-stochastic transition matrices.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fedsim/matrix.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct TransitionMatrix {
  Matrix q;            // C x C, row-stochastic
  int num_classes = 0;
};

enum class NoiseMode { matrix, uniform };

struct NoiseConfig {
  double ratio = 0.0;  // probability a label flips
  NoiseMode mode = NoiseMode::matrix;
  std::uint64_t seed = 0;
};

struct NoiseResult {
  std::vector<int> labels;
  std::vector<bool> flip_mask;
};

struct NoiseAudit {
  double rate = 0.0;
  Matrix conditional;              // P(noisy=j | original=i, flipped)
  std::vector<bool> zero_support;  // rows with no observed flips
};

namespace detail {

inline void validate_row_stochastic(const Matrix& q) {
  if (q.rows != q.cols || q.rows < 2)
    throw std::invalid_argument("TransitionMatrix: must be square with C >= 2");
  for (std::size_t i = 0; i < q.rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < q.cols; ++j) {
      const double v = q(i, j);
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument("TransitionMatrix: entry outside [0, 1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("TransitionMatrix: row does not sum to 1");
  }
}

}  // namespace detail

inline TransitionMatrix make_transition_matrix(Matrix q) {
  detail::validate_row_stochastic(q);
  TransitionMatrix t;
  t.num_classes = static_cast<int>(q.rows);
  t.q = std::move(q);
  return t;
}

// Q_ij = confusion[i][j] / row_sum(i); an all-zero row becomes uniform.
inline TransitionMatrix build_transition_matrix(
    const std::vector<std::vector<std::int64_t>>& confusion) {
  const std::size_t c = confusion.size();
  if (c < 2) throw std::invalid_argument("build_transition_matrix: need C >= 2");
  Matrix q(c, c);
  for (std::size_t i = 0; i < c; ++i) {
    if (confusion[i].size() != c)
      throw std::invalid_argument("build_transition_matrix: matrix not square");
    std::int64_t row_sum = 0;
    for (std::int64_t v : confusion[i]) {
      if (v < 0)
        throw std::invalid_argument("build_transition_matrix: negative entry");
      row_sum += v;
    }
    for (std::size_t j = 0; j < c; ++j)
      q(i, j) = row_sum == 0 ? 1.0 / static_cast<double>(c)
                             : static_cast<double>(confusion[i][j]) /
                                   static_cast<double>(row_sum);
  }
  return make_transition_matrix(std::move(q));
}

// Zero diagonal, 1/(C-1) elsewhere. Matrix-mode injection with this matrix
// is identical to uniform mode.
inline TransitionMatrix uniform_offdiagonal_transition(int num_classes) {
  if (num_classes < 2)
    throw std::invalid_argument("uniform_offdiagonal_transition: need C >= 2");
  const std::size_t c = static_cast<std::size_t>(num_classes);
  Matrix q(c, c, 1.0 / static_cast<double>(num_classes - 1));
  for (std::size_t i = 0; i < c; ++i) q(i, i) = 0.0;
  return make_transition_matrix(std::move(q));
}

// Flips each label with probability config.ratio. Matrix mode draws the
// replacement from row y of Q restricted to j != y and renormalized (uniform
// over the other classes if that row has no off-diagonal mass); uniform mode
// draws uniformly over the other classes. A flipped label always differs
// from the original.
inline NoiseResult inject_noise(const std::vector<int>& labels,
                                const TransitionMatrix& q,
                                const NoiseConfig& config) {
  const int c = q.num_classes;
  if (!(config.ratio >= 0.0 && config.ratio <= 1.0))
    throw std::invalid_argument("inject_noise: ratio must be in [0, 1]");
  for (int y : labels)
    if (y < 0 || y >= c)
      throw std::invalid_argument("inject_noise: label outside transition matrix");

  Rng rng(derive_seed(config.seed, StreamTag::noise));
  NoiseResult out;
  out.labels = labels;
  out.flip_mask.assign(labels.size(), false);

  std::vector<double> weights(static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!(rng.uniform() < config.ratio)) continue;
    const int y = labels[i];
    double mass = 0.0;
    for (int j = 0; j < c; ++j) {
      double w;
      if (j == y) {
        w = 0.0;
      } else if (config.mode == NoiseMode::uniform) {
        w = 1.0;
      } else {
        w = q.q(static_cast<std::size_t>(y), static_cast<std::size_t>(j));
      }
      weights[static_cast<std::size_t>(j)] = w;
      mass += w;
    }
    if (!(mass > 0.0)) {
      for (int j = 0; j < c; ++j)
        weights[static_cast<std::size_t>(j)] = j == y ? 0.0 : 1.0;
      mass = static_cast<double>(c - 1);
    }
    const double r = rng.uniform() * mass;
    double cum = 0.0;
    int picked = -1;
    for (int j = 0; j < c; ++j) {
      const double w = weights[static_cast<std::size_t>(j)];
      if (w <= 0.0) continue;
      cum += w;
      if (r < cum) { picked = j; break; }
      picked = j;  // rounding guard: keep the last feasible class
    }
    out.labels[i] = picked;
    out.flip_mask[i] = true;
  }
  return out;
}

// Empirical flip rate and conditional flip distribution. Rows with no
// observed flips are reported uniform and flagged.
inline NoiseAudit measure_noise(const std::vector<int>& original,
                                const std::vector<int>& noisy, int num_classes) {
  if (original.size() != noisy.size())
    throw std::invalid_argument("measure_noise: length mismatch");
  const std::size_t c = static_cast<std::size_t>(num_classes);

  NoiseAudit audit;
  audit.conditional = Matrix(c, c);
  audit.zero_support.assign(c, false);

  std::vector<std::vector<std::size_t>> counts(c, std::vector<std::size_t>(c, 0));
  std::size_t flips = 0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (original[i] == noisy[i]) continue;
    ++flips;
    ++counts[static_cast<std::size_t>(original[i])][static_cast<std::size_t>(noisy[i])];
  }
  audit.rate = original.empty()
                   ? 0.0
                   : static_cast<double>(flips) / static_cast<double>(original.size());

  for (std::size_t i = 0; i < c; ++i) {
    std::size_t row_sum = 0;
    for (std::size_t j = 0; j < c; ++j) row_sum += counts[i][j];
    if (row_sum == 0) {
      audit.zero_support[i] = true;
      for (std::size_t j = 0; j < c; ++j)
        audit.conditional(i, j) = 1.0 / static_cast<double>(c);
    } else {
      for (std::size_t j = 0; j < c; ++j)
        audit.conditional(i, j) =
            static_cast<double>(counts[i][j]) / static_cast<double>(row_sum);
    }
  }
  return audit;
}

}  // namespace fedsim
