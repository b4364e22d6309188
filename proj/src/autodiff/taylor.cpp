#include "pft/taylor.hpp"

#include <algorithm>
#include <cmath>

namespace pft::ad {

namespace {

struct Meta {
  std::int64_t blocks;
  int order;
};

Meta common(const Taylor2& a, const Taylor2& b, const char* op) {
  if (a.is_constant()) return {b.blocks, b.order};
  if (b.is_constant()) return {a.blocks, a.order};
  if (a.blocks != b.blocks)
    fail(ErrorKind::shape, std::string(op) + ": Taylor operands stack " + std::to_string(a.blocks) + " and " +
                               std::to_string(b.blocks) + " directions");
  return {a.blocks, std::min(a.order, b.order)};
}

// Rank-0 and single-row primals broadcast against the stacked blocks as is.
Value tiled(const Value& v, std::int64_t blocks) {
  if (blocks == 1 || v.rank() == 0 || v.dim(0) == 1) return v;
  return repeat(v, blocks);
}

std::optional<Value> opt_sum(const std::optional<Value>& a, const std::optional<Value>& b) {
  if (a && b) return add(*a, *b);
  return a ? a : b;
}

Value one_minus(const Value& v) { return add_scalar(neg(v), 1.0); }

// Chain rule to second order for y = phi(x): y' = phi' x', y'' = phi' x'' + phi'' x'^2.
template <class D1, class D2>
Taylor2 chain(const Taylor2& a, Value y, D1 d1_fn, D2 d2_fn) {
  Taylor2 out{std::move(y), std::nullopt, std::nullopt, a.blocks, a.order};
  if (a.is_constant()) return out;
  Value d1 = tiled(d1_fn(), a.blocks);
  if (a.first) out.first = mul(d1, *a.first);
  if (a.order < 2) return out;
  std::optional<Value> s;
  if (a.second) s = mul(d1, *a.second);
  if (a.first) s = opt_sum(s, mul(tiled(d2_fn(), a.blocks), square(*a.first)));
  out.second = s;
  return out;
}

Value zeros_for(const Taylor2& like_primal, std::int64_t blocks) {
  Shape s = like_primal.primal.shape();
  if (s.empty()) fail(ErrorKind::shape, "Taylor2: stacked directions need rank >= 1");
  s[0] *= blocks;
  return like_primal.primal.tape()->constant(Tensor::zeros(std::move(s)));
}

}  // namespace

Taylor2 add(const Taylor2& a, const Taylor2& b) {
  auto m = common(a, b, "add");
  return Taylor2{add(a.primal, b.primal), opt_sum(a.first, b.first), opt_sum(a.second, b.second), m.blocks, m.order};
}

Taylor2 sub(const Taylor2& a, const Taylor2& b) {
  auto m = common(a, b, "sub");
  auto negate = [](const std::optional<Value>& v) -> std::optional<Value> {
    if (v) return neg(*v);
    return std::nullopt;
  };
  return Taylor2{sub(a.primal, b.primal), opt_sum(a.first, negate(b.first)), opt_sum(a.second, negate(b.second)), m.blocks,
                 m.order};
}

Taylor2 mul(const Taylor2& a, const Taylor2& b) {
  auto m = common(a, b, "mul");
  const auto blocks = m.blocks;
  Taylor2 out{mul(a.primal, b.primal), std::nullopt, std::nullopt, blocks, m.order};
  auto a0 = [&] { return tiled(a.primal, blocks); };
  auto b0 = [&] { return tiled(b.primal, blocks); };
  std::optional<Value> f, s;
  if (a.first) f = mul(*a.first, b0());
  if (b.first) f = opt_sum(f, mul(a0(), *b.first));
  out.first = f;
  if (m.order < 2) return out;
  if (a.second) s = mul(*a.second, b0());
  if (a.first && b.first) s = opt_sum(s, scale(mul(*a.first, *b.first), 2.0));
  if (b.second) s = opt_sum(s, mul(a0(), *b.second));
  out.second = s;
  return out;
}

Taylor2 scale(const Taylor2& a, double s) {
  Taylor2 out{scale(a.primal, s), std::nullopt, std::nullopt, a.blocks, a.order};
  if (a.first) out.first = scale(*a.first, s);
  if (a.second) out.second = scale(*a.second, s);
  return out;
}

Taylor2 add_scalar(const Taylor2& a, double s) {
  return Taylor2{add_scalar(a.primal, s), a.first, a.second, a.blocks, a.order};
}

Taylor2 matmul(const Taylor2& a, const Value& w, bool transpose_w) {
  Taylor2 out{matmul(a.primal, w, false, transpose_w), std::nullopt, std::nullopt, a.blocks, a.order};
  if (a.first) out.first = matmul(*a.first, w, false, transpose_w);
  if (a.second) out.second = matmul(*a.second, w, false, transpose_w);
  return out;
}

Taylor2 add_bias(const Taylor2& a, const Value& bias) {
  return Taylor2{add(a.primal, bias), a.first, a.second, a.blocks, a.order};
}

Taylor2 tanh(const Taylor2& a) {
  Value y = tanh(a.primal);
  Value d1;
  auto first = [&] { return d1 = one_minus(square(y)); };
  auto second = [&] { return scale(mul(y, d1), -2.0); };
  return chain(a, y, first, second);
}

Taylor2 sin(const Taylor2& a) {
  Value y = sin(a.primal);
  return chain(a, y, [&] { return cos(a.primal); }, [&] { return neg(y); });
}

Taylor2 cos(const Taylor2& a) {
  Value y = cos(a.primal);
  return chain(a, y, [&] { return neg(sin(a.primal)); }, [&] { return neg(y); });
}

Taylor2 exp(const Taylor2& a) {
  Value y = exp(a.primal);
  return chain(a, y, [&] { return y; }, [&] { return y; });
}

Taylor2 log(const Taylor2& a) {
  Value y = log(a.primal);
  Value d1;
  auto first = [&] {
    Tape& t = *a.primal.tape();
    return d1 = div(t.scalar(1.0), a.primal);
  };
  return chain(a, y, first, [&] { return neg(square(d1)); });
}

Taylor2 square(const Taylor2& a) {
  Value y = square(a.primal);
  return chain(a, y, [&] { return scale(a.primal, 2.0); },
               [&] { return a.primal.tape()->constant(Tensor::filled(a.primal.shape(), 2.0)); });
}

Taylor2 sigmoid(const Taylor2& a) {
  Value y = sigmoid(a.primal);
  Value d1;
  auto first = [&] { return d1 = mul(y, one_minus(y)); };
  auto second = [&] { return mul(d1, one_minus(scale(y, 2.0))); };
  return chain(a, y, first, second);
}

Taylor2 relu(const Taylor2& a) {
  Value y = relu(a.primal);
  Taylor2 out{y, std::nullopt, std::nullopt, a.blocks, a.order};
  if (a.is_constant()) return out;
  Tensor mask(a.primal.shape(), std::vector<double>(a.primal.data().begin(), a.primal.data().end()));
  for (auto& v : mask.data) v = v > 0.0 ? 1.0 : 0.0;
  Value m = tiled(a.primal.tape()->constant(std::move(mask)), a.blocks);
  if (a.first) out.first = mul(m, *a.first);
  if (a.second && a.order == 2) out.second = mul(m, *a.second);
  return out;
}

Taylor2 concat(const std::vector<Taylor2>& parts, int axis) {
  if (parts.empty()) fail(ErrorKind::usage, "Taylor2 concat: no operands");
  if (axis == 0) fail(ErrorKind::usage, "Taylor2 concat: axis 0 carries stacked directions");
  std::int64_t blocks = 1;
  int order = 2;
  bool any_first = false, any_second = false;
  for (const auto& p : parts) {
    if (!p.is_constant()) {
      if (blocks != 1 && p.blocks != blocks) fail(ErrorKind::shape, "Taylor2 concat: mixed direction counts");
      blocks = p.blocks;
      order = std::min(order, p.order);
    }
    any_first = any_first || p.first.has_value();
    any_second = any_second || p.second.has_value();
  }
  any_second = any_second && order == 2;
  std::vector<Value> p0, p1, p2;
  for (const auto& p : parts) {
    p0.push_back(p.primal);
    if (any_first) p1.push_back(p.first ? *p.first : zeros_for(p, blocks));
    if (any_second) p2.push_back(p.second ? *p.second : zeros_for(p, blocks));
  }
  Taylor2 out{concat(p0, axis), std::nullopt, std::nullopt, blocks, order};
  if (any_first) out.first = concat(p1, axis);
  if (any_second) out.second = concat(p2, axis);
  return out;
}

Taylor2 slice(const Taylor2& a, int axis, std::int64_t start, std::int64_t length) {
  if (axis == 0) fail(ErrorKind::usage, "Taylor2 slice: axis 0 carries stacked directions");
  Taylor2 out{slice(a.primal, axis, start, length), std::nullopt, std::nullopt, a.blocks, a.order};
  if (a.first) out.first = slice(*a.first, axis, start, length);
  if (a.second) out.second = slice(*a.second, axis, start, length);
  return out;
}

Taylor2 reshape_rows(const Taylor2& a, const Shape& row_shape) {
  auto with_rows = [&](const Value& v) {
    Shape s{v.dim(0)};
    s.insert(s.end(), row_shape.begin(), row_shape.end());
    return reshape(v, s);
  };
  Taylor2 out{with_rows(a.primal), std::nullopt, std::nullopt, a.blocks, a.order};
  if (a.first) out.first = with_rows(*a.first);
  if (a.second) out.second = with_rows(*a.second);
  return out;
}

Taylor2 sum_rows(const Taylor2& a) {
  auto rows = [](const Value& v) { return sum_to(v, {v.dim(0), 1}); };
  Taylor2 out{rows(a.primal), std::nullopt, std::nullopt, a.blocks, a.order};
  if (a.first) out.first = rows(*a.first);
  if (a.second) out.second = rows(*a.second);
  return out;
}

Value block(const Value& stacked, std::int64_t n, std::int64_t b) { return slice(stacked, 0, b * n, n); }

Directional directional_second(const ScalarField& f, const Value& point, const Tensor& direction) {
  if (direction.shape != point.shape())
    fail(ErrorKind::shape, "directional_second: direction " + to_string(direction.shape) + " vs point " +
                               to_string(point.shape()));
  double norm2 = 0.0;
  for (double v : direction.data) norm2 += v * v;
  if (!(norm2 > 0.0)) fail(ErrorKind::usage, "directional_second: direction has zero norm");
  Tape& tape = *point.tape();
  Taylor2 x{point, tape.constant(direction), std::nullopt, 1};
  Taylor2 y = f(x);
  if (y.primal.numel() != 1)
    fail(ErrorKind::shape, "directional_second: field must be scalar, got " + to_string(y.primal.shape()));
  auto zero = [&] { return tape.constant(Tensor::zeros(y.primal.shape())); };
  return Directional{y.primal, y.first ? *y.first : zero(), y.second ? *y.second : zero()};
}

Value laplacian(const SpaceTimeField& f, const Value& z, const Value& t) {
  if (z.rank() != 2) fail(ErrorKind::shape, "laplacian: z must be [n, d], got " + to_string(z.shape()));
  const auto n = z.dim(0), d = z.dim(1);
  Tape& tape = *z.tape();
  Tensor axes = Tensor::zeros({d * n, d});
  for (std::int64_t i = 0; i < d; ++i)
    for (std::int64_t r = 0; r < n; ++r) axes.data[static_cast<std::size_t>((i * n + r) * d + i)] = 1.0;
  Taylor2 zt{z, tape.constant(std::move(axes)), std::nullopt, d};
  Taylor2 u = f(zt, Taylor2::constant(t));
  if (u.primal.numel() != n)
    fail(ErrorKind::shape, "laplacian: field must give one value per row, got " + to_string(u.primal.shape()));
  if (!u.second) return tape.constant(Tensor::zeros({n}));
  return reshape(fold(*u.second, d), {n});
}

}  // namespace pft::ad
