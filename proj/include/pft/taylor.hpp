#pragma once

// Degree-2 Taylor-mode propagation on top of the tape.
//
// A Taylor2 carries the primal value and the first and second derivative
// coefficients d/ds, d^2/ds^2 of f(x + s v) at s = 0 for one or more input
// directions v. Several directions can share one primal: `blocks` copies of
// the coefficient tensors are stacked along axis 0, block b covering rows
// [b*n, (b+1)*n) for a primal with n rows. An empty coefficient is exactly
// zero and costs nothing. All three components are ordinary tape values, so
// derivative coefficients stay differentiable with respect to parameters.
// With order 1 the second coefficient is never formed.

#include <functional>
#include <optional>
#include <vector>

#include "pft/autodiff.hpp"

namespace pft::ad {

struct Taylor2 {
  Value primal;
  std::optional<Value> first;
  std::optional<Value> second;
  std::int64_t blocks = 1;
  int order = 2;

  static Taylor2 constant(Value v) { return Taylor2{std::move(v), std::nullopt, std::nullopt, 1}; }
  bool is_constant() const { return !first && !second; }
};

Taylor2 add(const Taylor2& a, const Taylor2& b);
Taylor2 sub(const Taylor2& a, const Taylor2& b);
Taylor2 mul(const Taylor2& a, const Taylor2& b);
Taylor2 scale(const Taylor2& a, double s);
Taylor2 add_scalar(const Taylor2& a, double s);
// a * op(w) with w direction-independent (a weight matrix).
Taylor2 matmul(const Taylor2& a, const Value& w, bool transpose_w = false);
// a + bias, bias broadcast over rows.
Taylor2 add_bias(const Taylor2& a, const Value& bias);

Taylor2 tanh(const Taylor2& a);
Taylor2 sin(const Taylor2& a);
Taylor2 cos(const Taylor2& a);
Taylor2 exp(const Taylor2& a);
Taylor2 log(const Taylor2& a);
Taylor2 square(const Taylor2& a);
Taylor2 sigmoid(const Taylor2& a);
// Piecewise linear; coefficients are masked by the active set, which is exact
// away from the kink.
Taylor2 relu(const Taylor2& a);

// Shape ops along axes >= 1 (axis 0 carries the stacked blocks).
Taylor2 concat(const std::vector<Taylor2>& parts, int axis);
Taylor2 slice(const Taylor2& a, int axis, std::int64_t start, std::int64_t length);
Taylor2 reshape_rows(const Taylor2& a, const Shape& row_shape);  // keeps axis 0
Taylor2 sum_rows(const Taylor2& a);                              // [n, ...] -> [n, 1]

inline Taylor2 operator+(const Taylor2& a, const Taylor2& b) { return add(a, b); }
inline Taylor2 operator-(const Taylor2& a, const Taylor2& b) { return sub(a, b); }
inline Taylor2 operator*(const Taylor2& a, const Taylor2& b) { return mul(a, b); }

// Coefficient block b of a stacked component with n rows per block.
Value block(const Value& stacked, std::int64_t n, std::int64_t b);

using ScalarField = std::function<Taylor2(const Taylor2& x)>;
using SpaceTimeField = std::function<Taylor2(const Taylor2& z, const Taylor2& t)>;

struct Directional {
  Value value;
  Value first;
  Value second;
};

// Value, first and second directional derivative of f at `point` along
// `direction`, by one Taylor pass. Zero-norm directions are rejected.
Directional directional_second(const ScalarField& f, const Value& point, const Tensor& direction);

// Sum of unmixed second partials of f(z, t) over the latent axes of z
// ([n, d] rows), one block per axis in a single pass. Returns [n].
Value laplacian(const SpaceTimeField& f, const Value& z, const Value& t);

}  // namespace pft::ad
