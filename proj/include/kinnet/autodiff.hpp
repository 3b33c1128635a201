#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "kinnet/errors.hpp"
#include "kinnet/linalg.hpp"

// Differentiation engine. A forward tangent channel (directional derivative
// with respect to the single time input) rides along every computation, and a
// record-and-replay tape differentiates scalars in reverse over the flattened
// parameter vector. Because the tangent is recorded on the tape, a scalar
// built from tangents (a collocation residual uses dy/dt) can itself be
// differentiated, giving the mixed second-order derivative in one backward
// sweep.

namespace kinnet {

namespace detail {

// Value and first two derivatives of the tanh-form Gaussian error linear
// unit from a single tanh evaluation. Every route builds its outputs from
// these exact expressions, so the scalar, dual, and taped kernels agree to
// the last bit.
struct GeluEval {
  double value;
  double d1;
  double d2;
};

inline GeluEval gelu_eval(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  const double u = c * (x + 0.044715 * x * x * x);
  const double du = c * (1.0 + 0.134145 * x * x);
  const double d2u = c * 0.26829 * x;
  const double th = std::tanh(u);
  const double sech2 = 1.0 - th * th;
  return {0.5 * x * (1.0 + th), 0.5 * (1.0 + th) + 0.5 * x * sech2 * du,
          sech2 * du + 0.5 * x * sech2 * (d2u - 2.0 * th * du * du)};
}

}  // namespace detail

// Scalar kernels for the activation and its first two derivatives. The
// second derivative feeds the backward sweep whenever a tangent passes
// through the activation.
inline double gelu(double x) { return detail::gelu_eval(x).value; }
inline double dgelu(double x) { return detail::gelu_eval(x).d1; }
inline double d2gelu(double x) { return detail::gelu_eval(x).d2; }

// Value/tangent pair obeying dual-number arithmetic. The implicit double
// constructor makes plain constants (tangent zero) usable wherever a dual is
// expected, which is what lets the templated mass-action kernels run on
// duals unchanged.
struct DualScalar {
  double value = 0.0;
  double tangent = 0.0;

  DualScalar() = default;
  DualScalar(double v) : value(v) {}
  DualScalar(double v, double t) : value(v), tangent(t) {}
};

inline DualScalar operator+(DualScalar a, DualScalar b) {
  return {a.value + b.value, a.tangent + b.tangent};
}
inline DualScalar operator-(DualScalar a, DualScalar b) {
  return {a.value - b.value, a.tangent - b.tangent};
}
inline DualScalar operator-(DualScalar a) { return {-a.value, -a.tangent}; }
inline DualScalar operator*(DualScalar a, DualScalar b) {
  return {a.value * b.value, a.tangent * b.value + a.value * b.tangent};
}
inline DualScalar operator/(DualScalar a, DualScalar b) {
  if (b.value == 0.0) throw derivative_domain_error("dual division by zero");
  const double inv = 1.0 / b.value;
  const double v = a.value * inv;
  return {v, (a.tangent - v * b.tangent) * inv};
}
inline DualScalar& operator+=(DualScalar& a, DualScalar b) { return a = a + b; }
inline DualScalar& operator-=(DualScalar& a, DualScalar b) { return a = a - b; }
inline DualScalar& operator*=(DualScalar& a, DualScalar b) { return a = a * b; }

inline DualScalar exp(DualScalar a) {
  const double e = std::exp(a.value);
  return {e, e * a.tangent};
}
inline DualScalar log(DualScalar a) {
  if (a.value <= 0.0) throw derivative_domain_error("dual log of a non-positive value");
  return {std::log(a.value), a.tangent / a.value};
}
inline DualScalar sqrt(DualScalar a) {
  if (a.value <= 0.0) throw derivative_domain_error("dual sqrt of a non-positive value");
  const double s = std::sqrt(a.value);
  return {s, 0.5 * a.tangent / s};
}
inline DualScalar tanh(DualScalar a) {
  const double th = std::tanh(a.value);
  return {th, (1.0 - th * th) * a.tangent};
}
inline DualScalar gelu(DualScalar a) {
  const detail::GeluEval g = detail::gelu_eval(a.value);
  return {g.value, g.d1 * a.tangent};
}

// Gradient of one recorded scalar over the tape's parameter vector.
struct GradientResult {
  double loss_value = 0.0;
  std::vector<double> gradient;
};

class Tape;

// Handle to one recorded scalar. A default or double-constructed TapeVar is a
// detached literal: arithmetic folds literals without recording, so constants
// flowing through templated kernels cost no nodes and carry no gradient.
struct TapeVar {
  Tape* tape = nullptr;
  std::int32_t index = -1;
  double lit = 0.0;

  TapeVar() = default;
  TapeVar(double v) : lit(v) {}
  TapeVar(Tape* t, std::int32_t i) : tape(t), index(i) {}
};

namespace detail {

enum class OpKind : std::uint8_t {
  input,
  constant,
  parameter,
  add,
  sub,
  mul,
  div,
  scale,
  shift,
  unary,
  affine,
  linear_map,
  tangent_of,
};

struct MapDesc {
  std::int32_t args_start = 0;
  std::int32_t args_count = 0;
  std::int32_t c0 = 0;  // affine: weight row offset into params; linear_map: coefficient offset
  std::int32_t c1 = 0;  // affine: bias index
  std::int32_t contig = -1;  // first argument node when the args are consecutive
};

// One row of an affine layer: acc + sum_i w[i] * x[i] in the canonical
// association, four independent partial sums over a stride-4 split combined
// pairwise at the end. Every forward route (plain double, dual, taped) must
// go through this association so their results stay bit-identical; the
// fixed lanes also let the compiler vectorize the double instantiation
// without reassociating anything.
template <class T>
inline T affine_row(const double* w, const T* x, std::size_t n, T acc) {
  if (n < 8) {
    for (std::size_t i = 0; i < n; ++i) acc = acc + w[i] * x[i];
    return acc;
  }
  T s[4] = {T(0.0), T(0.0), T(0.0), T(0.0)};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    for (std::size_t k = 0; k < 4; ++k) s[k] = s[k] + w[i + k] * x[i + k];
  for (; i < n; ++i) s[0] = s[0] + w[i] * x[i];
  return acc + ((s[0] + s[1]) + (s[2] + s[3]));
}

// Both channels of one row in a single pass over the weights. Channel by
// channel this is exactly affine_row (value seeded with the bias, tangent
// with zero); fusing them only avoids streaming the weight row twice. The
// packed variant keeps the same per-lane arithmetic, so every build agrees
// bit for bit.
inline void affine_row2(const double* __restrict w, const double* __restrict xv,
                        const double* __restrict xt, std::size_t n, double acc_v,
                        double& v_out, double& t_out) {
  if (n < 8) {
    double acc_t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc_v = acc_v + w[i] * xv[i];
      acc_t = acc_t + w[i] * xt[i];
    }
    v_out = acc_v;
    t_out = acc_t;
    return;
  }
  double s0, s1, s2, s3, t0, t1, t2, t3;
  std::size_t i = 0;
#if defined(__GNUC__)
  typedef double vec4 __attribute__((vector_size(32)));
  vec4 sv = {0.0, 0.0, 0.0, 0.0}, st = {0.0, 0.0, 0.0, 0.0};
  for (; i + 4 <= n; i += 4) {
    vec4 wv, av, at;
    std::memcpy(&wv, w + i, sizeof wv);
    std::memcpy(&av, xv + i, sizeof av);
    std::memcpy(&at, xt + i, sizeof at);
    sv += wv * av;
    st += wv * at;
  }
  s0 = sv[0], s1 = sv[1], s2 = sv[2], s3 = sv[3];
  t0 = st[0], t1 = st[1], t2 = st[2], t3 = st[3];
#else
  s0 = s1 = s2 = s3 = t0 = t1 = t2 = t3 = 0.0;
  for (; i + 4 <= n; i += 4) {
    s0 = s0 + w[i] * xv[i];
    s1 = s1 + w[i + 1] * xv[i + 1];
    s2 = s2 + w[i + 2] * xv[i + 2];
    s3 = s3 + w[i + 3] * xv[i + 3];
    t0 = t0 + w[i] * xt[i];
    t1 = t1 + w[i + 1] * xt[i + 1];
    t2 = t2 + w[i + 2] * xt[i + 2];
    t3 = t3 + w[i + 3] * xt[i + 3];
  }
#endif
  for (; i < n; ++i) {
    s0 = s0 + w[i] * xv[i];
    t0 = t0 + w[i] * xt[i];
  }
  v_out = acc_v + ((s0 + s1) + (s2 + s3));
  t_out = 0.0 + ((t0 + t1) + (t2 + t3));
}

}  // namespace detail

// Append-only computation record. Arguments always precede results, so one
// reverse sweep visits each node exactly once; adjoints are propagated as
// (value, tangent) pairs so the sweep also differentiates scalars that were
// built from the tangent channel. Single-writer: record and backward must not
// run concurrently on one tape, but independent tapes are independent.
class Tape {
 public:
  explicit Tape(std::span<const double> parameters = {}) : params_(parameters) {}

  std::size_t size() const { return kind_.size(); }
  std::size_t parameter_count() const { return params_.size(); }

  // Drops every node but keeps allocations for the next recording.
  void clear() {
    kind_.clear();
    a_.clear();
    b_.clear();
    value_.clear();
    tangent_.clear();
    p1_.clear();
    p2_.clear();
    desc_.clear();
    args_.clear();
    coeff_.clear();
  }

  TapeVar input(double value, double tangent = 0.0) {
    return {this, push(detail::OpKind::input, -1, -1, value, tangent)};
  }

  TapeVar constant(double value) {
    return {this, push(detail::OpKind::constant, -1, -1, value, 0.0)};
  }

  TapeVar parameter(std::size_t i) {
    if (i >= params_.size()) throw dimension_error("parameter index out of range");
    return {this, push(detail::OpKind::parameter, static_cast<std::int32_t>(i), -1, params_[i], 0.0)};
  }

  double value(TapeVar v) const { return v.tape ? value_[check(v)] : v.lit; }
  double tangent(TapeVar v) const { return v.tape ? tangent_[check(v)] : 0.0; }

  // The tangent channel read out as a value, e.g. dy/dt entering a residual.
  // Its own tangent is not tracked (second time derivatives are out of scope).
  TapeVar tangent_of(TapeVar v) {
    if (!v.tape) return TapeVar(0.0);
    return {this, push(detail::OpKind::tangent_of, check(v), -1, tangent_[check(v)], 0.0)};
  }

  // out[j] = params[bias_offset + j] + sum_i params[weight_offset + j*n + i] * in[i],
  // with the weight block row-major over (out, in). Differentiates through
  // both the inputs and the referenced parameters.
  std::vector<TapeVar> affine(std::span<const TapeVar> in, std::size_t weight_offset,
                              std::size_t bias_offset, std::size_t out_count) {
    const std::size_t n = in.size();
    if (weight_offset + out_count * n > params_.size() || bias_offset + out_count > params_.size())
      throw dimension_error("affine parameter block exceeds the parameter vector");
    const std::int32_t args_start = adopt_args(in);
    // A layer's inputs are usually nodes recorded back to back; when they
    // are, the row kernel runs straight over the value and tangent arrays.
    // Otherwise the arguments are gathered once so the same kernel (and the
    // same summation order) applies either way.
    std::int32_t contig = n > 0 ? args_[static_cast<std::size_t>(args_start)] : -1;
    for (std::size_t i = 1; i < n && contig >= 0; ++i)
      if (args_[static_cast<std::size_t>(args_start) + i] != contig + static_cast<std::int32_t>(i))
        contig = -1;
    if (contig < 0 && n > 0) {
      scratch_v_.resize(n);
      scratch_t_.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(args_[static_cast<std::size_t>(args_start) + i]);
        scratch_v_[i] = value_[idx];
        scratch_t_[i] = tangent_[idx];
      }
    }
    std::vector<TapeVar> out;
    out.reserve(out_count);
    for (std::size_t j = 0; j < out_count; ++j) {
      const std::size_t row = weight_offset + j * n;
      // push below grows value_/tangent_, so contiguous spans are re-derived
      // every row.
      const double* xv = contig >= 0 ? value_.data() + contig : scratch_v_.data();
      const double* xt = contig >= 0 ? tangent_.data() + contig : scratch_t_.data();
      double v = 0.0, t = 0.0;
      detail::affine_row2(params_.data() + row, xv, xt, n, params_[bias_offset + j], v, t);
      const auto d = static_cast<std::int32_t>(desc_.size());
      desc_.push_back({args_start, static_cast<std::int32_t>(n), static_cast<std::int32_t>(row),
                       static_cast<std::int32_t>(bias_offset + j), contig});
      out.push_back({this, push(detail::OpKind::affine, d, -1, v, t)});
    }
    return out;
  }

  // Outputs of an externally solved map with caller-supplied values and
  // Jacobian, e.g. a Newton closure linearized by the implicit function
  // theorem. First-order exact in both channels; the curvature of the map is
  // not recorded, so a scalar built from these outputs' tangents would miss
  // that term.
  std::vector<TapeVar> linearized(std::span<const double> values, const Matrix& jacobian,
                                  std::span<const TapeVar> args) {
    if (jacobian.rows() != values.size() || jacobian.cols() != args.size())
      throw dimension_error("linearized map shape does not match values/arguments");
    const std::int32_t args_start = adopt_args(args);
    const auto n = static_cast<std::int32_t>(args.size());
    std::vector<TapeVar> out;
    out.reserve(values.size());
    for (std::size_t r = 0; r < values.size(); ++r) {
      const auto row = static_cast<std::int32_t>(coeff_.size());
      double t = 0.0;
      for (std::size_t j = 0; j < args.size(); ++j) {
        coeff_.push_back(jacobian(r, j));
        t += jacobian(r, j) *
             tangent_[static_cast<std::size_t>(args_[static_cast<std::size_t>(args_start) + j])];
      }
      const auto d = static_cast<std::int32_t>(desc_.size());
      desc_.push_back({args_start, n, row, 0});
      out.push_back({this, push(detail::OpKind::linear_map, d, -1, values[r], t)});
    }
    return out;
  }

  // Building blocks for the operator overloads below; value and local
  // partials are computed by the caller.
  TapeVar record_binary(detail::OpKind k, TapeVar a, TapeVar b, double v, double t) {
    return {this, push(k, check(a), check(b), v, t)};
  }
  TapeVar record_scale(TapeVar a, double k) {
    if (k == 0.0) return TapeVar(0.0);
    if (k == 1.0) return a;
    const auto i = check(a);
    return {this, push(detail::OpKind::scale, i, -1, k * value_[i], k * tangent_[i], k)};
  }
  TapeVar record_shift(TapeVar a, double k) {
    if (k == 0.0) return a;
    const auto i = check(a);
    return {this, push(detail::OpKind::shift, i, -1, value_[i] + k, tangent_[i], k)};
  }
  TapeVar record_unary(TapeVar a, double v, double d1, double d2) {
    const auto i = check(a);
    return {this, push(detail::OpKind::unary, i, -1, v, d1 * tangent_[i], d1, d2)};
  }

  // Gradient of one recorded scalar over the parameter vector. Adjoints are
  // accumulated in fixed reverse node order with serial sums, so the result
  // is bit-identical across runs of the same recording.
  GradientResult backward(TapeVar seed) const {
    GradientResult out;
    out.gradient.assign(params_.size(), 0.0);
    if (!seed.tape) {
      out.loss_value = seed.lit;
      return out;
    }
    const std::size_t n = kind_.size();
    const std::size_t s = check(seed);
    out.loss_value = value_[s];
    std::vector<double> vbar(n, 0.0), tbar(n, 0.0);
    vbar[s] = 1.0;
    for (std::size_t pos = n; pos-- > 0;) {
      const double cv = vbar[pos];
      const double ct = tbar[pos];
      if (cv == 0.0 && ct == 0.0) continue;
      const auto a = static_cast<std::size_t>(a_[pos]);
      const auto b = static_cast<std::size_t>(b_[pos]);
      switch (kind_[pos]) {
        case detail::OpKind::input:
        case detail::OpKind::constant:
          break;
        case detail::OpKind::parameter:
          out.gradient[a] += cv;
          break;
        case detail::OpKind::add:
          vbar[a] += cv;
          tbar[a] += ct;
          vbar[b] += cv;
          tbar[b] += ct;
          break;
        case detail::OpKind::sub:
          vbar[a] += cv;
          tbar[a] += ct;
          vbar[b] -= cv;
          tbar[b] -= ct;
          break;
        case detail::OpKind::mul:
          vbar[a] += cv * value_[b] + ct * tangent_[b];
          tbar[a] += ct * value_[b];
          vbar[b] += cv * value_[a] + ct * tangent_[a];
          tbar[b] += ct * value_[a];
          break;
        case detail::OpKind::div: {
          const double inv = 1.0 / value_[b];
          const double va = value_[a], ta = tangent_[a], tb = tangent_[b];
          vbar[a] += cv * inv - ct * tb * inv * inv;
          tbar[a] += ct * inv;
          vbar[b] += -cv * va * inv * inv + ct * (2.0 * va * tb * inv - ta) * inv * inv;
          tbar[b] += -ct * va * inv * inv;
          break;
        }
        case detail::OpKind::scale:
          vbar[a] += cv * p1_[pos];
          tbar[a] += ct * p1_[pos];
          break;
        case detail::OpKind::shift:
          vbar[a] += cv;
          tbar[a] += ct;
          break;
        case detail::OpKind::unary:
          vbar[a] += cv * p1_[pos] + ct * p2_[pos] * tangent_[a];
          tbar[a] += ct * p1_[pos];
          break;
        case detail::OpKind::affine: {
          const detail::MapDesc& d = desc_[a];
          const auto cnt = static_cast<std::size_t>(d.args_count);
          const double* w = params_.data() + static_cast<std::size_t>(d.c0);
          double* g = out.gradient.data() + static_cast<std::size_t>(d.c0);
          if (d.contig >= 0) {
            // Each argument slot is touched exactly once per node, so the
            // packed form below computes the same per-slot update as the
            // scalar loop; the contiguous layout removes the indirection.
            const std::size_t f = static_cast<std::size_t>(d.contig);
            const double* __restrict xv = value_.data() + f;
            const double* __restrict xt = tangent_.data() + f;
            double* __restrict vb = vbar.data() + f;
            double* __restrict tb = tbar.data() + f;
            std::size_t i = 0;
#if defined(__GNUC__)
            typedef double vec4 __attribute__((vector_size(32)));
            const vec4 cvv = {cv, cv, cv, cv};
            const vec4 ctv = {ct, ct, ct, ct};
            for (; i + 4 <= cnt; i += 4) {
              vec4 wv, bv, xvv, xtv;
              std::memcpy(&wv, w + i, sizeof wv);
              std::memcpy(&bv, vb + i, sizeof bv);
              bv += cvv * wv;
              std::memcpy(vb + i, &bv, sizeof bv);
              std::memcpy(&bv, tb + i, sizeof bv);
              bv += ctv * wv;
              std::memcpy(tb + i, &bv, sizeof bv);
              std::memcpy(&xvv, xv + i, sizeof xvv);
              std::memcpy(&xtv, xt + i, sizeof xtv);
              std::memcpy(&bv, g + i, sizeof bv);
              bv += cvv * xvv + ctv * xtv;
              std::memcpy(g + i, &bv, sizeof bv);
            }
#endif
            for (; i < cnt; ++i) {
              vb[i] += cv * w[i];
              tb[i] += ct * w[i];
              g[i] += cv * xv[i] + ct * xt[i];
            }
          } else {
            for (std::size_t i = 0; i < cnt; ++i) {
              const auto idx = static_cast<std::size_t>(
                  args_[static_cast<std::size_t>(d.args_start) + i]);
              vbar[idx] += cv * w[i];
              tbar[idx] += ct * w[i];
              g[i] += cv * value_[idx] + ct * tangent_[idx];
            }
          }
          out.gradient[static_cast<std::size_t>(d.c1)] += cv;
          break;
        }
        case detail::OpKind::linear_map: {
          const detail::MapDesc& d = desc_[a];
          for (std::int32_t i = 0; i < d.args_count; ++i) {
            const auto idx = static_cast<std::size_t>(args_[static_cast<std::size_t>(d.args_start + i)]);
            const double w = coeff_[static_cast<std::size_t>(d.c0 + i)];
            vbar[idx] += cv * w;
            tbar[idx] += ct * w;
          }
          break;
        }
        case detail::OpKind::tangent_of:
          tbar[a] += cv;
          break;
      }
    }
    return out;
  }

 private:
  std::int32_t push(detail::OpKind k, std::int32_t a, std::int32_t b, double v, double t,
                    double d1 = 0.0, double d2 = 0.0) {
    kind_.push_back(k);
    a_.push_back(a);
    b_.push_back(b);
    value_.push_back(v);
    tangent_.push_back(t);
    p1_.push_back(d1);
    p2_.push_back(d2);
    return static_cast<std::int32_t>(kind_.size() - 1);
  }

  std::size_t check(TapeVar v) const {
    if (v.tape != this) throw numeric_error("tape variable does not belong to this tape");
    return static_cast<std::size_t>(v.index);
  }

  // Literal arguments are materialized as constant nodes so every recorded
  // argument has a node index.
  std::int32_t adopt_args(std::span<const TapeVar> vars) {
    const auto start = static_cast<std::int32_t>(args_.size());
    for (TapeVar v : vars) {
      if (!v.tape) v = constant(v.lit);
      args_.push_back(static_cast<std::int32_t>(check(v)));
    }
    return start;
  }

  std::span<const double> params_;
  std::vector<detail::OpKind> kind_;
  std::vector<std::int32_t> a_, b_;
  std::vector<double> value_, tangent_, p1_, p2_;
  std::vector<detail::MapDesc> desc_;
  std::vector<std::int32_t> args_;
  std::vector<double> coeff_;
  std::vector<double> scratch_v_, scratch_t_;
};

namespace detail {

inline Tape* common_tape(TapeVar a, TapeVar b) {
  if (a.tape && b.tape && a.tape != b.tape)
    throw numeric_error("tape variables from different tapes");
  return a.tape ? a.tape : b.tape;
}

}  // namespace detail

inline TapeVar operator+(TapeVar a, TapeVar b) {
  Tape* t = detail::common_tape(a, b);
  if (!t) return TapeVar(a.lit + b.lit);
  if (!a.tape) return t->record_shift(b, a.lit);
  if (!b.tape) return t->record_shift(a, b.lit);
  return t->record_binary(detail::OpKind::add, a, b, t->value(a) + t->value(b),
                          t->tangent(a) + t->tangent(b));
}

inline TapeVar operator-(TapeVar a, TapeVar b) {
  Tape* t = detail::common_tape(a, b);
  if (!t) return TapeVar(a.lit - b.lit);
  if (!b.tape) return t->record_shift(a, -b.lit);
  if (!a.tape) return t->record_shift(t->record_scale(b, -1.0), a.lit);
  return t->record_binary(detail::OpKind::sub, a, b, t->value(a) - t->value(b),
                          t->tangent(a) - t->tangent(b));
}

inline TapeVar operator-(TapeVar a) {
  if (!a.tape) return TapeVar(-a.lit);
  return a.tape->record_scale(a, -1.0);
}

inline TapeVar operator*(TapeVar a, TapeVar b) {
  Tape* t = detail::common_tape(a, b);
  if (!t) return TapeVar(a.lit * b.lit);
  if (!a.tape) return t->record_scale(b, a.lit);
  if (!b.tape) return t->record_scale(a, b.lit);
  return t->record_binary(detail::OpKind::mul, a, b, t->value(a) * t->value(b),
                          t->tangent(a) * t->value(b) + t->value(a) * t->tangent(b));
}

inline TapeVar operator/(TapeVar a, TapeVar b) {
  Tape* t = detail::common_tape(a, b);
  if (!t) {
    if (b.lit == 0.0) throw derivative_domain_error("division by a zero literal");
    return TapeVar(a.lit / b.lit);
  }
  if (!b.tape) {
    if (b.lit == 0.0) throw derivative_domain_error("division by a zero literal");
    return t->record_scale(a, 1.0 / b.lit);
  }
  const double vb = t->value(b);
  if (vb == 0.0) throw derivative_domain_error("division by a zero tape value");
  if (!a.tape) {
    // k / b as k * (1/b) through the reciprocal kernel
    const double inv = 1.0 / vb;
    TapeVar r = t->record_unary(b, inv, -inv * inv, 2.0 * inv * inv * inv);
    return t->record_scale(r, a.lit);
  }
  const double v = t->value(a) / vb;
  return t->record_binary(detail::OpKind::div, a, b, v,
                          (t->tangent(a) - v * t->tangent(b)) / vb);
}

inline TapeVar& operator+=(TapeVar& a, TapeVar b) { return a = a + b; }
inline TapeVar& operator-=(TapeVar& a, TapeVar b) { return a = a - b; }
inline TapeVar& operator*=(TapeVar& a, TapeVar b) { return a = a * b; }

inline TapeVar exp(TapeVar a) {
  if (!a.tape) return TapeVar(std::exp(a.lit));
  const double e = std::exp(a.tape->value(a));
  return a.tape->record_unary(a, e, e, e);
}

inline TapeVar log(TapeVar a) {
  const double v = a.tape ? a.tape->value(a) : a.lit;
  if (v <= 0.0) throw derivative_domain_error("log of a non-positive value");
  if (!a.tape) return TapeVar(std::log(v));
  return a.tape->record_unary(a, std::log(v), 1.0 / v, -1.0 / (v * v));
}

inline TapeVar sqrt(TapeVar a) {
  const double v = a.tape ? a.tape->value(a) : a.lit;
  if (v <= 0.0) throw derivative_domain_error("sqrt of a non-positive value");
  if (!a.tape) return TapeVar(std::sqrt(v));
  const double s = std::sqrt(v);
  return a.tape->record_unary(a, s, 0.5 / s, -0.25 / (s * v));
}

inline TapeVar tanh(TapeVar a) {
  if (!a.tape) return TapeVar(std::tanh(a.lit));
  const double th = std::tanh(a.tape->value(a));
  const double sech2 = 1.0 - th * th;
  return a.tape->record_unary(a, th, sech2, -2.0 * th * sech2);
}

inline TapeVar gelu(TapeVar a) {
  if (!a.tape) return TapeVar(gelu(a.lit));
  const detail::GeluEval g = detail::gelu_eval(a.tape->value(a));
  return a.tape->record_unary(a, g.value, g.d1, g.d2);
}

}  // namespace kinnet
