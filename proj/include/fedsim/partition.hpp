// Non-IID client partitioning: Dirichlet sampling, label / feature-cluster /
// quantile-bin schemes, and heterogeneity statistics.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/matrix.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct DirichletParams {
  double alpha = 1.0;        // symmetric concentration, > 0
  std::size_t dimension = 1; // K >= 1
};

struct ProbVector {
  std::vector<double> probs;  // nonnegative, sums to 1
};

struct PartitionMap {
  // client id -> sorted sample indices; disjoint exact cover of 0..N-1
  std::vector<std::vector<std::size_t>> assignments;
  std::size_t dataset_size = 0;

  std::size_t num_clients() const { return assignments.size(); }
};

struct HeterogeneityReport {
  std::vector<std::size_t> per_client_counts;
  std::vector<std::vector<std::size_t>> per_client_label_hist;  // M x C, categorical only
  double mean_kl_to_global = 0.0;
  double max_client_share = 0.0;
};

namespace detail {

// One draw from a symmetric Dirichlet via normalized Gamma(alpha, 1) draws.
// An all-underflow draw (possible at extreme small alpha) falls back to the
// uniform vector.
inline std::vector<double> dirichlet_draw(double alpha, std::size_t k, Rng& rng) {
  std::vector<double> g(k);
  double sum = 0.0;
  for (auto& v : g) {
    v = rng.gamma(alpha);
    sum += v;
  }
  if (!(sum > 0.0)) {
    std::fill(g.begin(), g.end(), 1.0 / static_cast<double>(k));
    return g;
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Integerizes real quotas (summing to ~total) so they sum to exactly total.
// Leftover units go to the largest fractional remainders, ties to the lower
// index.
inline std::vector<std::size_t> largest_remainder(const std::vector<double>& quotas,
                                                  std::size_t total) {
  const std::size_t k = quotas.size();
  std::vector<std::size_t> base(k);
  std::vector<double> rem(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double q = std::max(0.0, quotas[i]);
    const double f = std::floor(q);
    base[i] = static_cast<std::size_t>(f);
    rem[i] = q - f;
    assigned += base[i];
  }
  if (assigned > total) {
    // floating drift pushed the floors past the total; trim from the largest
    std::size_t excess = assigned - total;
    while (excess > 0) {
      std::size_t arg = 0;
      for (std::size_t i = 1; i < k; ++i)
        if (base[i] > base[arg]) arg = i;
      --base[arg];
      --excess;
    }
    return base;
  }
  std::size_t leftover = total - assigned;
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; i < leftover; ++i) ++base[order[i % k]];
  return base;
}

inline void validate_partition(const PartitionMap& map) {
  std::vector<bool> seen(map.dataset_size, false);
  std::size_t covered = 0;
  for (const auto& idx : map.assignments) {
    for (std::size_t s : idx) {
      if (s >= map.dataset_size || seen[s])
        throw std::logic_error("partition: index set is not a disjoint cover");
      seen[s] = true;
      ++covered;
    }
    if (!std::is_sorted(idx.begin(), idx.end()))
      throw std::logic_error("partition: client indices not sorted");
  }
  if (covered != map.dataset_size)
    throw std::logic_error("partition: index sets do not cover the dataset");
}

// Core allocator shared by all schemes. Labels may be pseudo-classes, so a
// single class (C == 1) is acceptable here.
//
// Mechanics: one Dirichlet(alpha) draw per client gives its class mixture;
// an independent Dirichlet(alpha) draw over clients, integerized by largest
// remainder, gives per-client sample-count targets. Each class's samples are
// then split across clients by largest remainder proportionally to
// mixture * count-target and handed out in client-id order. Clients left
// below min_samples take one sample at a time from the largest client.
inline PartitionMap partition_core(const std::vector<int>& labels, int num_classes,
                                   std::size_t num_clients, double alpha,
                                   std::uint64_t seed, std::size_t min_samples) {
  const std::size_t n = labels.size();
  const std::size_t m = num_clients;
  if (m < 1) throw std::invalid_argument("partition: num_clients must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("partition: num_classes must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("partition: alpha must be positive and finite");
  if (n < m * min_samples)
    throw std::invalid_argument("partition: dataset too small for min samples per client");

  const std::size_t c = static_cast<std::size_t>(num_classes);
  Rng rng(derive_seed(seed, StreamTag::partition));

  std::vector<std::vector<double>> mixtures(m);
  for (std::size_t i = 0; i < m; ++i) mixtures[i] = detail::dirichlet_draw(alpha, c, rng);
  const std::vector<double> shares = detail::dirichlet_draw(alpha, m, rng);

  std::vector<double> share_quota(m);
  for (std::size_t i = 0; i < m; ++i)
    share_quota[i] = shares[i] * static_cast<double>(n);
  const std::vector<std::size_t> targets = detail::largest_remainder(share_quota, n);

  std::vector<std::vector<std::size_t>> supply(c);
  for (std::size_t s = 0; s < n; ++s)
    supply[static_cast<std::size_t>(labels[s])].push_back(s);

  PartitionMap map;
  map.dataset_size = n;
  map.assignments.resize(m);

  std::vector<double> weights(m);
  for (std::size_t cls = 0; cls < c; ++cls) {
    const std::size_t stock = supply[cls].size();
    if (stock == 0) continue;
    double wsum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      weights[i] = mixtures[i][cls] * static_cast<double>(targets[i]);
      wsum += weights[i];
    }
    if (!(wsum > 0.0)) {
      // class attracted no mass; split it by the count targets instead
      for (std::size_t i = 0; i < m; ++i) {
        weights[i] = static_cast<double>(targets[i]);
        wsum += weights[i];
      }
    }
    for (std::size_t i = 0; i < m; ++i)
      weights[i] = weights[i] / wsum * static_cast<double>(stock);
    const std::vector<std::size_t> take = detail::largest_remainder(weights, stock);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t t = 0; t < take[i]; ++t)
        map.assignments[i].push_back(supply[cls][pos++]);
    }
  }
  for (auto& idx : map.assignments) std::sort(idx.begin(), idx.end());

  // deficit repair: move single samples from the largest client until every
  // client meets the minimum
  for (;;) {
    std::size_t poor = m;
    for (std::size_t i = 0; i < m; ++i)
      if (map.assignments[i].size() < min_samples) { poor = i; break; }
    if (poor == m) break;
    std::size_t rich = 0;
    for (std::size_t i = 1; i < m; ++i)
      if (map.assignments[i].size() > map.assignments[rich].size()) rich = i;
    if (map.assignments[rich].size() <= min_samples)
      throw std::invalid_argument("partition: min samples per client infeasible");
    const std::size_t moved = map.assignments[rich].back();
    map.assignments[rich].pop_back();
    auto& dst = map.assignments[poor];
    dst.insert(std::lower_bound(dst.begin(), dst.end(), moved), moved);
  }

  detail::validate_partition(map);
  return map;
}

}  // namespace detail

inline ProbVector sample_dirichlet(const DirichletParams& params, std::uint64_t seed) {
  if (params.dimension < 1)
    throw std::invalid_argument("sample_dirichlet: dimension must be >= 1");
  if (!(params.alpha > 0.0) || !std::isfinite(params.alpha))
    throw std::invalid_argument("sample_dirichlet: alpha must be positive and finite");
  Rng rng(derive_seed(seed, StreamTag::partition, 1));
  return ProbVector{detail::dirichlet_draw(params.alpha, params.dimension, rng)};
}

// Scheme over output labels.
inline PartitionMap partition_by_labels(const Targets& targets, std::size_t num_clients,
                                        double alpha, std::uint64_t seed,
                                        std::size_t min_samples = 1) {
  if (targets.kind != TargetKind::categorical)
    throw std::invalid_argument("partition_by_labels: requires categorical targets");
  return detail::partition_core(targets.labels, targets.num_classes, num_clients,
                                alpha, seed, min_samples);
}

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

// Seeded k-means with k-means++ initialization. Ties resolve to the lowest
// center index; empty clusters are re-seeded from the point farthest from
// its assigned center; stops when assignments stabilize or after max_iters.
inline std::vector<int> kmeans_labels(const Matrix& points, std::size_t k,
                                      std::uint64_t seed, std::size_t max_iters = 100) {
  const std::size_t n = points.rows;
  const std::size_t d = points.cols;
  if (k < 1 || n < k) throw std::invalid_argument("kmeans: need n >= k >= 1");
  Rng rng(seed);

  Matrix centers(k, d);
  std::vector<double> best_d2(n, std::numeric_limits<double>::infinity());
  {
    const std::size_t first = static_cast<std::size_t>(rng.below(n));
    std::copy(points.row(first), points.row(first) + d, centers.row(0));
    for (std::size_t ci = 1; ci < k; ++ci) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        best_d2[i] = std::min(best_d2[i], sq_dist(points.row(i), centers.row(ci - 1), d));
        total += best_d2[i];
      }
      std::size_t pick;
      if (total > 0.0) {
        const double r = rng.uniform() * total;
        double cum = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          cum += best_d2[i];
          if (r < cum) { pick = i; break; }
        }
      } else {
        pick = static_cast<std::size_t>(rng.below(n));
      }
      std::copy(points.row(pick), points.row(pick) + d, centers.row(ci));
    }
  }

  std::vector<int> assign(n, -1);
  std::vector<int> prev(n, -2);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      int argmin = 0;
      double dmin = sq_dist(points.row(i), centers.row(0), d);
      for (std::size_t ci = 1; ci < k; ++ci) {
        const double dist = sq_dist(points.row(i), centers.row(ci), d);
        if (dist < dmin) { dmin = dist; argmin = static_cast<int>(ci); }
      }
      assign[i] = argmin;
    }

    std::vector<std::size_t> sizes(k, 0);
    for (int a : assign) ++sizes[static_cast<std::size_t>(a)];
    for (std::size_t ci = 0; ci < k; ++ci) {
      if (sizes[ci] > 0) continue;
      std::size_t far = 0;
      double dmax = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double dist =
            sq_dist(points.row(i), centers.row(static_cast<std::size_t>(assign[i])), d);
        if (dist > dmax) { dmax = dist; far = i; }
      }
      --sizes[static_cast<std::size_t>(assign[far])];
      assign[far] = static_cast<int>(ci);
      sizes[ci] = 1;
      std::copy(points.row(far), points.row(far) + d, centers.row(ci));
    }

    if (assign == prev) break;
    prev = assign;

    centers.data.assign(centers.data.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* cr = centers.row(static_cast<std::size_t>(assign[i]));
      for (std::size_t j = 0; j < d; ++j) cr[j] += points(i, j);
    }
    for (std::size_t ci = 0; ci < k; ++ci) {
      double* cr = centers.row(ci);
      for (std::size_t j = 0; j < d; ++j) cr[j] /= static_cast<double>(sizes[ci]);
    }
  }
  return assign;
}

}  // namespace detail

// Scheme over input features: k-means turns feature vectors into pseudo-class
// labels, then the label scheme runs on those.
inline PartitionMap partition_by_features(const Matrix& features,
                                          std::size_t num_pseudo_classes,
                                          std::size_t num_clients, double alpha,
                                          std::uint64_t seed,
                                          std::size_t min_samples = 1) {
  const std::size_t n = features.rows;
  if (num_pseudo_classes < 1 || num_clients < 1 ||
      n < std::max(num_pseudo_classes, num_clients))
    throw std::invalid_argument("partition_by_features: invalid sizes");
  const std::vector<int> pseudo = detail::kmeans_labels(
      features, num_pseudo_classes, derive_seed(seed, StreamTag::kmeans));
  return detail::partition_core(pseudo, static_cast<int>(num_pseudo_classes),
                                num_clients, alpha,
                                derive_seed(seed, StreamTag::partition, 2),
                                min_samples);
}

namespace detail {

// Equal-count bins over sorted target values; ties break on original index.
// The first (n mod b) bins take the extra sample.
inline std::vector<int> quantile_bins(const std::vector<double>& values, std::size_t b) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return values[a] < values[c]; });
  std::vector<int> bins(n);
  const std::size_t base = n / b;
  const std::size_t extra = n % b;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t size = base + (k < extra ? 1 : 0);
    for (std::size_t t = 0; t < size; ++t) bins[order[pos++]] = static_cast<int>(k);
  }
  return bins;
}

}  // namespace detail

// Scheme over a continuous output: equal-count quantile bins become
// pseudo-classes for the label scheme.
inline PartitionMap partition_by_quantiles(const Targets& targets, std::size_t num_bins,
                                           std::size_t num_clients, double alpha,
                                           std::uint64_t seed,
                                           std::size_t min_samples = 1) {
  if (targets.kind != TargetKind::continuous)
    throw std::invalid_argument("partition_by_quantiles: requires continuous targets");
  const std::size_t n = targets.values.size();
  if (num_bins < 1 || num_clients < 1 || n < num_bins)
    throw std::invalid_argument("partition_by_quantiles: invalid sizes");
  const std::vector<int> pseudo = detail::quantile_bins(targets.values, num_bins);
  return detail::partition_core(pseudo, static_cast<int>(num_bins), num_clients, alpha,
                                derive_seed(seed, StreamTag::partition, 3),
                                min_samples);
}

namespace detail {

// Mean over clients of KL(client ‖ global) on add-one smoothed label
// histograms.
inline double mean_smoothed_kl(const std::vector<std::vector<std::size_t>>& hists,
                               const std::vector<std::size_t>& global_hist) {
  const std::size_t c = global_hist.size();
  std::size_t n = 0;
  for (std::size_t cnt : global_hist) n += cnt;
  std::vector<double> q(c);
  const double qden = static_cast<double>(n + c);
  for (std::size_t j = 0; j < c; ++j)
    q[j] = static_cast<double>(global_hist[j] + 1) / qden;

  double total = 0.0;
  for (const auto& h : hists) {
    std::size_t hn = 0;
    for (std::size_t cnt : h) hn += cnt;
    const double pden = static_cast<double>(hn + c);
    double kl = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = static_cast<double>(h[j] + 1) / pden;
      kl += p * std::log(p / q[j]);
    }
    total += kl;
  }
  return hists.empty() ? 0.0 : total / static_cast<double>(hists.size());
}

}  // namespace detail

// Counts, per-client label histograms (categorical targets only), smoothed
// mean KL to the global label distribution, and the largest client share.
inline HeterogeneityReport heterogeneity_report(const PartitionMap& map,
                                                const Targets& targets) {
  if (map.dataset_size != targets.size())
    throw std::invalid_argument("heterogeneity_report: partition/targets size mismatch");

  HeterogeneityReport rep;
  rep.per_client_counts.reserve(map.num_clients());
  std::size_t max_count = 0;
  for (const auto& idx : map.assignments) {
    for (std::size_t s : idx)
      if (s >= targets.size())
        throw std::invalid_argument("heterogeneity_report: index out of range");
    rep.per_client_counts.push_back(idx.size());
    max_count = std::max(max_count, idx.size());
  }
  rep.max_client_share = map.dataset_size == 0
                             ? 0.0
                             : static_cast<double>(max_count) /
                                   static_cast<double>(map.dataset_size);

  if (targets.kind == TargetKind::categorical) {
    const std::size_t c = static_cast<std::size_t>(targets.num_classes);
    std::vector<std::size_t> global(c, 0);
    for (int y : targets.labels) ++global[static_cast<std::size_t>(y)];
    rep.per_client_label_hist.assign(map.num_clients(), std::vector<std::size_t>(c, 0));
    for (std::size_t i = 0; i < map.num_clients(); ++i)
      for (std::size_t s : map.assignments[i])
        ++rep.per_client_label_hist[i][static_cast<std::size_t>(targets.labels[s])];
    rep.mean_kl_to_global = detail::mean_smoothed_kl(rep.per_client_label_hist, global);
  }
  return rep;
}

// All training data on a single client; the degenerate baseline partition.
inline PartitionMap partition_centralized(std::size_t dataset_size) {
  PartitionMap map;
  map.dataset_size = dataset_size;
  map.assignments.resize(1);
  map.assignments[0].resize(dataset_size);
  std::iota(map.assignments[0].begin(), map.assignments[0].end(), 0);
  return map;
}

}  // namespace fedsim
