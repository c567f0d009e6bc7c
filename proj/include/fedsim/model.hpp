// Small MLPs with analytic gradients, losses, metrics, and a central
// finite-difference gradient check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/matrix.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class Task { classification, regression };
enum class Activation { relu };

struct ModelSpec {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., output
  Activation activation = Activation::relu;
  double dropout_rate = 0.0;  // in [0, 1)
  Task task = Task::classification;
};

inline void validate_model_spec(const ModelSpec& spec) {
  if (spec.layer_sizes.size() < 2)
    throw std::invalid_argument("ModelSpec: need at least input and output sizes");
  for (std::size_t s : spec.layer_sizes)
    if (s < 1) throw std::invalid_argument("ModelSpec: layer sizes must be positive");
  if (!(spec.dropout_rate >= 0.0 && spec.dropout_rate < 1.0))
    throw std::invalid_argument("ModelSpec: dropout must be in [0, 1)");
  if (spec.task == Task::regression && spec.layer_sizes.back() != 1)
    throw std::invalid_argument("ModelSpec: regression output size must be 1");
  if (spec.task == Task::classification && spec.layer_sizes.back() < 2)
    throw std::invalid_argument("ModelSpec: classification needs >= 2 outputs");
}

// The reference regression MLP: 18 -> 210 -> 420 -> 840 -> 420 -> 210 -> 1,
// ReLU with dropout 0.3.
inline ModelSpec aep_mlp_spec() {
  return ModelSpec{{18, 210, 420, 840, 420, 210, 1}, Activation::relu, 0.3,
                   Task::regression};
}

// Desk-scale default: two 64-unit hidden layers, no dropout.
inline ModelSpec toy_mlp_spec(std::size_t input, std::size_t output, Task task) {
  return ModelSpec{{input, 64, 64, output}, Activation::relu, 0.0, task};
}

struct LayerShape {
  std::size_t rows = 0;  // fan-out
  std::size_t cols = 0;  // fan-in
};

// Flat parameter storage; per layer the weight block (row-major) is followed
// by the bias block.
struct ParamVector {
  std::vector<double> values;
  std::vector<LayerShape> layout;

  bool operator==(const ParamVector&) const = default;
};

using GradVector = ParamVector;

inline std::vector<LayerShape> layout_for(const ModelSpec& spec) {
  std::vector<LayerShape> layout;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l)
    layout.push_back({spec.layer_sizes[l + 1], spec.layer_sizes[l]});
  return layout;
}

inline std::size_t param_count(const ModelSpec& spec) {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l)
    total += spec.layer_sizes[l + 1] * (spec.layer_sizes[l] + 1);
  return total;
}

namespace detail {

struct LayerView {
  const double* w;  // rows x cols, row-major
  const double* b;  // rows
};

inline LayerView layer_view(const ParamVector& p, std::size_t layer) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l)
    off += p.layout[l].rows * (p.layout[l].cols + 1);
  return {p.values.data() + off,
          p.values.data() + off + p.layout[layer].rows * p.layout[layer].cols};
}

inline double* mutable_layer_w(ParamVector& p, std::size_t layer) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l)
    off += p.layout[l].rows * (p.layout[l].cols + 1);
  return p.values.data() + off;
}

}  // namespace detail

// Uniform fan-based weights, zero biases.
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  validate_model_spec(spec);
  ParamVector p;
  p.layout = layout_for(spec);
  p.values.resize(param_count(spec));
  Rng rng(derive_seed(seed, StreamTag::init));
  std::size_t off = 0;
  for (const LayerShape& shape : p.layout) {
    const double bound = std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols));
    for (std::size_t i = 0; i < shape.rows * shape.cols; ++i)
      p.values[off + i] = (2.0 * rng.uniform() - 1.0) * bound;
    off += shape.rows * shape.cols;
    for (std::size_t i = 0; i < shape.rows; ++i) p.values[off + i] = 0.0;
    off += shape.rows;
  }
  return p;
}

namespace detail {

// Inverted-scaling dropout mask: kept units carry 1/(1-p). Deterministic in
// (seed, layer index, batch shape).
inline Matrix dropout_mask(std::uint64_t dropout_seed, std::size_t layer,
                           std::size_t rows, std::size_t cols, double p) {
  Matrix mask(rows, cols, 1.0);
  if (p <= 0.0) return mask;
  Rng rng(derive_seed(dropout_seed, StreamTag::dropout, layer,
                      (static_cast<std::uint64_t>(rows) << 32) ^ cols));
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& v : mask.data) v = rng.uniform() < p ? 0.0 : keep_scale;
  return mask;
}

struct ForwardCache {
  std::vector<Matrix> acts;     // acts[0] = inputs; acts[l+1] after layer l
  std::vector<Matrix> preacts;  // z of every layer
  std::vector<Matrix> masks;    // dropout masks for hidden layers
};

inline Matrix affine(const Matrix& a, const LayerView& lv, std::size_t out_dim) {
  Matrix z(a.rows, out_dim);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* zr = z.row(i);
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = lv.w + o * a.cols;
      double acc = lv.b[o];
      for (std::size_t k = 0; k < a.cols; ++k) acc += wr[k] * ar[k];
      zr[o] = acc;
    }
  }
  return z;
}

inline ForwardCache forward_cached(const ModelSpec& spec, const ParamVector& params,
                                   const Matrix& inputs, bool train_mode,
                                   std::uint64_t dropout_seed) {
  if (inputs.cols != spec.layer_sizes.front())
    throw std::invalid_argument("forward: input width does not match the model");
  for (double v : inputs.data)
    if (!std::isfinite(v)) throw std::invalid_argument("forward: non-finite input");

  const std::size_t num_layers = spec.layer_sizes.size() - 1;
  ForwardCache cache;
  cache.acts.reserve(num_layers + 1);
  cache.acts.push_back(inputs);
  for (std::size_t l = 0; l < num_layers; ++l) {
    const LayerView lv = layer_view(params, l);
    Matrix z = affine(cache.acts.back(), lv, spec.layer_sizes[l + 1]);
    cache.preacts.push_back(z);
    if (l + 1 == num_layers) {
      cache.acts.push_back(std::move(z));
      break;
    }
    Matrix h = std::move(z);
    for (double& v : h.data) v = v > 0.0 ? v : 0.0;
    if (train_mode && spec.dropout_rate > 0.0) {
      Matrix mask = dropout_mask(dropout_seed, l, h.rows, h.cols, spec.dropout_rate);
      for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] *= mask.data[i];
      cache.masks.push_back(std::move(mask));
    } else {
      cache.masks.emplace_back();
    }
    cache.acts.push_back(std::move(h));
  }
  return cache;
}

// Row-wise log-sum-exp with the max subtracted.
inline double logsumexp(const double* z, std::size_t n) {
  double zmax = z[0];
  for (std::size_t j = 1; j < n; ++j) zmax = std::max(zmax, z[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(z[j] - zmax);
  return zmax + std::log(s);
}

}  // namespace detail

inline Matrix forward(const ModelSpec& spec, const ParamVector& params,
                      const Matrix& inputs, bool train_mode = false,
                      std::uint64_t dropout_seed = 0) {
  validate_model_spec(spec);
  return detail::forward_cached(spec, params, inputs, train_mode, dropout_seed)
      .acts.back();
}

// Row-stochastic softmax of a logit matrix.
inline Matrix softmax(const Matrix& logits) {
  Matrix p = logits;
  for (std::size_t i = 0; i < p.rows; ++i) {
    double* r = p.row(i);
    double zmax = r[0];
    for (std::size_t j = 1; j < p.cols; ++j) zmax = std::max(zmax, r[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < p.cols; ++j) {
      r[j] = std::exp(r[j] - zmax);
      s += r[j];
    }
    for (std::size_t j = 0; j < p.cols; ++j) r[j] /= s;
  }
  return p;
}

struct LossGrad {
  double loss = 0.0;
  GradVector grad;
};

// Mean cross-entropy (classification) or mean squared error (regression)
// with the exact analytic gradient. Training mode shares its dropout masks
// with the forward pass.
inline LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& params,
                              const Matrix& inputs, const Targets& targets,
                              bool train_mode = false,
                              std::uint64_t dropout_seed = 0) {
  validate_model_spec(spec);
  const std::size_t batch = inputs.rows;
  if (batch == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  if (targets.size() != batch)
    throw std::invalid_argument("loss_and_grad: target length mismatch");
  const bool classifying = spec.task == Task::classification;
  if (classifying != (targets.kind == TargetKind::categorical))
    throw std::invalid_argument("loss_and_grad: task/target kind mismatch");

  detail::ForwardCache cache =
      detail::forward_cached(spec, params, inputs, train_mode, dropout_seed);
  const Matrix& out = cache.acts.back();
  const std::size_t out_dim = out.cols;
  const double inv_b = 1.0 / static_cast<double>(batch);

  double loss = 0.0;
  Matrix dz(batch, out_dim);
  if (classifying) {
    if (static_cast<std::size_t>(targets.num_classes) != out_dim)
      throw std::invalid_argument("loss_and_grad: class count mismatch");
    for (std::size_t i = 0; i < batch; ++i) {
      const double* zr = out.row(i);
      const double lse = detail::logsumexp(zr, out_dim);
      const int y = targets.labels[i];
      loss += lse - zr[y];
      double* dr = dz.row(i);
      for (std::size_t j = 0; j < out_dim; ++j)
        dr[j] = (std::exp(zr[j] - lse) - (static_cast<int>(j) == y ? 1.0 : 0.0)) * inv_b;
    }
    loss *= inv_b;
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      const double r = out(i, 0) - targets.values[i];
      loss += r * r;
      dz(i, 0) = 2.0 * r * inv_b;
    }
    loss *= inv_b;
  }

  GradVector grad;
  grad.layout = params.layout;
  grad.values.assign(params.values.size(), 0.0);

  const std::size_t num_layers = params.layout.size();
  Matrix delta = std::move(dz);
  for (std::size_t li = num_layers; li-- > 0;) {
    const Matrix& a = cache.acts[li];
    double* gw = detail::mutable_layer_w(grad, li);
    const std::size_t rows = params.layout[li].rows;
    const std::size_t cols = params.layout[li].cols;
    double* gb = gw + rows * cols;
    for (std::size_t i = 0; i < batch; ++i) {
      const double* dr = delta.row(i);
      const double* ar = a.row(i);
      for (std::size_t o = 0; o < rows; ++o) {
        const double d = dr[o];
        if (d == 0.0) continue;
        double* gwr = gw + o * cols;
        for (std::size_t k = 0; k < cols; ++k) gwr[k] += d * ar[k];
        gb[o] += d;
      }
    }
    if (li == 0) break;

    const detail::LayerView lv = detail::layer_view(params, li);
    Matrix prev(batch, cols);
    for (std::size_t i = 0; i < batch; ++i) {
      const double* dr = delta.row(i);
      double* pr = prev.row(i);
      for (std::size_t k = 0; k < cols; ++k) pr[k] = 0.0;
      for (std::size_t o = 0; o < rows; ++o) {
        const double d = dr[o];
        if (d == 0.0) continue;
        const double* wr = lv.w + o * cols;
        for (std::size_t k = 0; k < cols; ++k) pr[k] += d * wr[k];
      }
    }
    // back through dropout and ReLU of hidden layer li-1
    const Matrix& z = cache.preacts[li - 1];
    const Matrix& mask = cache.masks[li - 1];
    const bool masked = mask.rows > 0;
    for (std::size_t i = 0; i < prev.data.size(); ++i) {
      double g = z.data[i] > 0.0 ? prev.data[i] : 0.0;
      if (masked) g *= mask.data[i];
      prev.data[i] = g;
    }
    delta = std::move(prev);
  }

  return {loss, std::move(grad)};
}

inline ParamVector sgd_step(const ParamVector& params, const GradVector& grad,
                            double lr) {
  if (params.values.size() != grad.values.size())
    throw std::invalid_argument("sgd_step: shape mismatch");
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw std::invalid_argument("sgd_step: lr must be nonnegative and finite");
  for (double g : grad.values)
    if (!std::isfinite(g)) throw std::invalid_argument("sgd_step: non-finite gradient");
  ParamVector next = params;
  for (std::size_t i = 0; i < next.values.size(); ++i)
    next.values[i] -= lr * grad.values[i];
  return next;
}

struct EvalResult {
  double metric = 0.0;
  bool degenerate = false;  // regression with zero target variance
};

// Classification: argmax accuracy (ties go to the lowest class index).
// Regression: R^2 = 1 - SS_res / SS_tot; zero SS_tot reports 0, flagged.
inline EvalResult evaluate(const ModelSpec& spec, const ParamVector& params,
                           const TabularDataset& data) {
  validate_model_spec(spec);
  const std::size_t n = data.num_samples();
  if (n == 0) throw std::invalid_argument("evaluate: empty dataset");

  constexpr std::size_t kChunk = 1024;
  if (spec.task == Task::classification) {
    if (data.targets.kind != TargetKind::categorical ||
        static_cast<std::size_t>(data.targets.num_classes) != spec.layer_sizes.back())
      throw std::invalid_argument("evaluate: dataset classes do not match the model");
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += kChunk) {
      const std::size_t stop = std::min(n, start + kChunk);
      Matrix chunk(stop - start, data.num_features());
      std::copy(data.features.row(start), data.features.row(start) + chunk.data.size(),
                chunk.data.begin());
      const Matrix logits = forward(spec, params, chunk);
      for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* r = logits.row(i);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < logits.cols; ++j)
          if (r[j] > r[arg]) arg = j;
        if (static_cast<int>(arg) == data.targets.labels[start + i]) ++correct;
      }
    }
    return {static_cast<double>(correct) / static_cast<double>(n), false};
  }

  if (data.targets.kind != TargetKind::continuous)
    throw std::invalid_argument("evaluate: regression needs continuous targets");
  double mean = 0.0;
  for (double y : data.targets.values) mean += y;
  mean /= static_cast<double>(n);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t stop = std::min(n, start + kChunk);
    Matrix chunk(stop - start, data.num_features());
    std::copy(data.features.row(start), data.features.row(start) + chunk.data.size(),
              chunk.data.begin());
    const Matrix pred = forward(spec, params, chunk);
    for (std::size_t i = 0; i < pred.rows; ++i) {
      const double y = data.targets.values[start + i];
      const double r = pred(i, 0) - y;
      ss_res += r * r;
      const double t = y - mean;
      ss_tot += t * t;
    }
  }
  if (ss_tot == 0.0) return {0.0, true};
  return {1.0 - ss_res / ss_tot, false};
}

// Max relative error between analytic and central-difference gradients over
// a seeded sample of coordinates. Dropout is disabled; the denominator is
// max(|analytic|, |numeric|, 1e-8).
inline double finite_diff_check(const ModelSpec& spec, const ParamVector& params,
                                const Matrix& inputs, const Targets& targets,
                                double step, std::size_t num_coords = 100,
                                std::uint64_t seed = 0) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be > 0");
  const LossGrad lg = loss_and_grad(spec, params, inputs, targets, false, 0);
  Rng rng(derive_seed(seed, StreamTag::fdcheck));
  ParamVector probe = params;
  double worst = 0.0;
  const std::size_t total = params.values.size();
  for (std::size_t t = 0; t < num_coords; ++t) {
    const std::size_t i = static_cast<std::size_t>(rng.below(total));
    const double saved = probe.values[i];
    probe.values[i] = saved + step;
    const double up = loss_and_grad(spec, probe, inputs, targets, false, 0).loss;
    probe.values[i] = saved - step;
    const double down = loss_and_grad(spec, probe, inputs, targets, false, 0).loss;
    probe.values[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = lg.grad.values[i];
    const double denom =
        std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace fedsim
