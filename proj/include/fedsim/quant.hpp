// Reduced-precision emulation: binary16 round-trip rounding, payload byte
// accounting, and quantized SGD steps and update transport.
#pragma once

#include <cfloat>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/model.hpp"

namespace fedsim {

enum class Precision { full64, full32, half16 };

inline std::size_t bytes_per_value(Precision p) {
  switch (p) {
    case Precision::full64: return 8;
    case Precision::full32: return 4;
    case Precision::half16: return 2;
  }
  throw std::logic_error("bytes_per_value: bad precision");
}

inline std::size_t payload_bytes(std::size_t param_count, Precision p) {
  return param_count * bytes_per_value(p);
}

namespace detail {

// Round-to-nearest-even of a nonnegative value that is exactly representable
// in double, used on scaled binary16 significands.
inline double round_ties_even(double y) {
  const double f = std::floor(y);
  const double r = y - f;
  if (r > 0.5) return f + 1.0;
  if (r < 0.5) return f;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

constexpr double kHalfMax = 65504.0;

// Encode a finite double into a binary16 code. Round-to-nearest-even;
// magnitudes that would overflow clamp to +-65504; subnormals are kept.
inline std::uint16_t encode_half(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("encode_half: non-finite input");
  const std::uint16_t sign = x < 0.0 || (x == 0.0 && std::signbit(x)) ? 0x8000 : 0;
  double a = std::abs(x);
  if (a == 0.0) return sign;

  int e2;
  const double frac = std::frexp(a, &e2);  // a = frac * 2^e2, frac in [0.5, 1)
  int e = e2 - 1;                          // a = (2*frac) * 2^e, 2*frac in [1, 2)

  if (e < -14) {
    // subnormal range: quantum 2^-24, significand in [0, 1024]
    const double q = round_ties_even(std::ldexp(a, 24));
    if (q <= 0.0) return sign;
    // q == 1024 lands on the exponent-1 boundary and encodes the min normal
    return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(q));
  }
  double m = round_ties_even(std::ldexp(2.0 * frac, 10));  // in [1024, 2048]
  if (m >= 2048.0) {
    m = 1024.0;
    ++e;
  }
  if (e > 15)
    return static_cast<std::uint16_t>(sign | 0x7bff);  // clamp to max finite
  return static_cast<std::uint16_t>(
      sign | static_cast<std::uint16_t>((e + 15) << 10) |
      static_cast<std::uint16_t>(static_cast<std::uint16_t>(m) & 0x3ff));
}

inline double decode_half(std::uint16_t code) {
  const double sign = (code & 0x8000) ? -1.0 : 1.0;
  const int e = (code >> 10) & 0x1f;
  const int m = code & 0x3ff;
  if (e == 0x1f)
    throw std::invalid_argument("decode_half: non-finite code");
  if (e == 0) return sign * std::ldexp(static_cast<double>(m), -24);
  return sign * std::ldexp(static_cast<double>(1024 + m), e - 25);
}

inline double roundtrip_value(double x, Precision p) {
  switch (p) {
    case Precision::full64:
      return x;
    case Precision::full32: {
      if (!std::isfinite(x))
        throw std::invalid_argument("quantize_roundtrip: non-finite input");
      if (x > FLT_MAX) return FLT_MAX;
      if (x < -FLT_MAX) return -FLT_MAX;
      return static_cast<double>(static_cast<float>(x));
    }
    case Precision::half16:
      return decode_half(encode_half(x));
  }
  throw std::logic_error("roundtrip_value: bad precision");
}

}  // namespace detail

inline std::vector<double> quantize_roundtrip(const std::vector<double>& values,
                                              Precision p) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = detail::roundtrip_value(values[i], p);
  return out;
}

inline ParamVector quantize_roundtrip(const ParamVector& params, Precision p) {
  if (p == Precision::full64) return params;
  ParamVector out = params;
  for (double& v : out.values) v = detail::roundtrip_value(v, p);
  return out;
}

// p - lr * g on the precision grid: gradients are round-tripped before use
// and the updated parameters are round-tripped after the step. full64 is
// exactly sgd_step.
inline ParamVector quantized_sgd_step(const ParamVector& params,
                                      const GradVector& grad, double lr,
                                      Precision p) {
  if (p == Precision::full64) return sgd_step(params, grad, lr);
  if (params.values.size() != grad.values.size())
    throw std::invalid_argument("quantized_sgd_step: shape mismatch");
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw std::invalid_argument("quantized_sgd_step: lr must be nonnegative and finite");
  ParamVector next = params;
  for (std::size_t i = 0; i < next.values.size(); ++i) {
    const double g = detail::roundtrip_value(grad.values[i], p);
    next.values[i] = detail::roundtrip_value(next.values[i] - lr * g, p);
  }
  return next;
}

// Transport encoding of a value sequence. decode(encode(x)) is bitwise equal
// to quantize_roundtrip(x, precision).
struct QuantizedVector {
  Precision precision = Precision::full64;
  std::size_t length = 0;
  std::vector<std::uint16_t> half_codes;  // half16
  std::vector<float> single;              // full32
  std::vector<double> full;               // full64
};

inline QuantizedVector quantize_values(const std::vector<double>& values,
                                       Precision p) {
  QuantizedVector qv;
  qv.precision = p;
  qv.length = values.size();
  switch (p) {
    case Precision::full64:
      qv.full = values;
      break;
    case Precision::full32:
      qv.single.reserve(values.size());
      for (double v : values)
        qv.single.push_back(static_cast<float>(detail::roundtrip_value(v, p)));
      break;
    case Precision::half16:
      qv.half_codes.reserve(values.size());
      for (double v : values) qv.half_codes.push_back(detail::encode_half(v));
      break;
  }
  return qv;
}

inline std::vector<double> dequantize_values(const QuantizedVector& qv) {
  std::vector<double> out;
  out.reserve(qv.length);
  switch (qv.precision) {
    case Precision::full64:
      out = qv.full;
      break;
    case Precision::full32:
      for (float v : qv.single) out.push_back(static_cast<double>(v));
      break;
    case Precision::half16:
      for (std::uint16_t c : qv.half_codes) out.push_back(detail::decode_half(c));
      break;
  }
  return out;
}

inline Precision parse_precision(const std::string& s) {
  if (s == "full64") return Precision::full64;
  if (s == "full32") return Precision::full32;
  if (s == "half16") return Precision::half16;
  throw std::invalid_argument("precision must be full64, full32 or half16");
}

inline std::string precision_name(Precision p) {
  switch (p) {
    case Precision::full64: return "full64";
    case Precision::full32: return "full32";
    case Precision::half16: return "half16";
  }
  throw std::logic_error("precision_name: bad precision");
}

}  // namespace fedsim
