#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "pft/autodiff.hpp"

namespace pft::ad {

namespace {

using Grads = std::vector<std::optional<Value>>;

const Node& node_of(const Value& v) { return v.tape()->node(v.id()); }

Tape& owner(std::initializer_list<const Value*> vs, const char* op) {
  Tape* t = nullptr;
  for (const Value* v : vs) {
    if (!v->valid()) fail(ErrorKind::usage, std::string(op) + ": operand is an empty value");
    if (t && v->tape() != t) fail(ErrorKind::usage, std::string(op) + ": operands live on different tapes");
    t = v->tape();
  }
  return *t;
}

Value input(Tape& tape, std::int32_t self, std::size_t i) {
  return tape.value_of(tape.node(self).inputs[i]);
}

const Node& input_node(const Tape& tape, const Node& self, std::size_t i) {
  return tape.node(self.inputs[i]);
}

// sum_to that is a no-op when shapes already agree
Value reduce_like(const Value& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  return sum_to(g, shape);
}

// ---- binary elementwise --------------------------------------------------

enum class BinKind { add, sub, mul, div };

class BinaryOp final : public Op {
 public:
  explicit BinaryOp(BinKind k) : kind_(k) {}
  const char* name() const override {
    switch (kind_) {
      case BinKind::add: return "add";
      case BinKind::sub: return "sub";
      case BinKind::mul: return "mul";
      case BinKind::div: return "div";
    }
    return "binary";
  }

  void vjp(const Tape& tape, const Node& self, std::span<const double> g,
           std::span<double* const> gin) const override {
    const Node& a = input_node(tape, self, 0);
    const Node& b = input_node(tape, self, 1);
    const Shape& out = self.shape;
    std::vector<double> tmp;
    auto reduce_into = [&](const std::vector<double>& src, const Node& target, double* dst) {
      kernel::accumulate_sum_to(src.data(), out, target.shape, dst);
    };
    switch (kind_) {
      case BinKind::add:
      case BinKind::sub: {
        if (gin[0]) kernel::accumulate_sum_to(g.data(), out, a.shape, gin[0]);
        if (gin[1]) {
          if (kind_ == BinKind::add) {
            kernel::accumulate_sum_to(g.data(), out, b.shape, gin[1]);
          } else {
            tmp.assign(g.begin(), g.end());
            for (auto& v : tmp) v = -v;
            reduce_into(tmp, b, gin[1]);
          }
        }
        break;
      }
      case BinKind::mul: {
        tmp.resize(g.size());
        if (gin[0]) {
          kernel::map2(g.data(), out, b.value.data(), b.shape, out, tmp.data(), [](double x, double y) { return x * y; });
          reduce_into(tmp, a, gin[0]);
        }
        if (gin[1]) {
          kernel::map2(g.data(), out, a.value.data(), a.shape, out, tmp.data(), [](double x, double y) { return x * y; });
          reduce_into(tmp, b, gin[1]);
        }
        break;
      }
      case BinKind::div: {
        tmp.resize(g.size());
        if (gin[0]) {
          kernel::map2(g.data(), out, b.value.data(), b.shape, out, tmp.data(), [](double x, double y) { return x / y; });
          reduce_into(tmp, a, gin[0]);
        }
        if (gin[1]) {
          // d(a/b)/db = -y / b
          kernel::map2(self.value.data(), out, b.value.data(), b.shape, out, tmp.data(),
                       [](double y, double bv) { return -y / bv; });
          for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] *= g[i];
          reduce_into(tmp, b, gin[1]);
        }
        break;
      }
    }
  }

  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    Value a = input(tape, self, 0), b = input(tape, self, 1);
    Grads out(2);
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    switch (kind_) {
      case BinKind::add:
        if (ga) out[0] = reduce_like(g, a.shape());
        if (gb) out[1] = reduce_like(g, b.shape());
        break;
      case BinKind::sub:
        if (ga) out[0] = reduce_like(g, a.shape());
        if (gb) out[1] = reduce_like(neg(g), b.shape());
        break;
      case BinKind::mul:
        if (ga) out[0] = reduce_like(mul(g, b), a.shape());
        if (gb) out[1] = reduce_like(mul(g, a), b.shape());
        break;
      case BinKind::div: {
        if (ga) out[0] = reduce_like(div(g, b), a.shape());
        if (gb) {
          Value y = tape.value_of(self);
          out[1] = reduce_like(neg(div(mul(g, y), b)), b.shape());
        }
        break;
      }
    }
    return out;
  }

 private:
  BinKind kind_;
};

Value binary(BinKind kind, const Value& a, const Value& b, const char* name) {
  Tape& tape = owner({&a, &b}, name);
  const Node& na = node_of(a);
  const Node& nb = node_of(b);
  Shape out = kernel::broadcast_shape(na.shape, nb.shape, name);
  std::vector<double> y(static_cast<std::size_t>(numel(out)));
  switch (kind) {
    case BinKind::add:
      kernel::map2(na.value.data(), na.shape, nb.value.data(), nb.shape, out, y.data(), [](double x, double z) { return x + z; });
      break;
    case BinKind::sub:
      kernel::map2(na.value.data(), na.shape, nb.value.data(), nb.shape, out, y.data(), [](double x, double z) { return x - z; });
      break;
    case BinKind::mul:
      kernel::map2(na.value.data(), na.shape, nb.value.data(), nb.shape, out, y.data(), [](double x, double z) { return x * z; });
      break;
    case BinKind::div:
      kernel::map2(na.value.data(), na.shape, nb.value.data(), nb.shape, out, y.data(), [](double x, double z) { return x / z; });
      break;
  }
  static const auto ops = std::array<std::shared_ptr<const Op>, 4>{
      std::make_shared<BinaryOp>(BinKind::add), std::make_shared<BinaryOp>(BinKind::sub),
      std::make_shared<BinaryOp>(BinKind::mul), std::make_shared<BinaryOp>(BinKind::div)};
  return tape.record(std::move(out), std::move(y), ops[static_cast<std::size_t>(kind)], {a, b});
}

// ---- unary elementwise ---------------------------------------------------

enum class UnKind { neg, scale, shift, tanh, sin, cos, exp, log, sqrt, square, sigmoid, softplus, relu, clamp };

double sigmoid_of(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_of(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

class UnaryOp final : public Op {
 public:
  UnaryOp(UnKind k, double p0 = 0.0, double p1 = 0.0) : kind_(k), p0_(p0), p1_(p1) {}
  const char* name() const override {
    switch (kind_) {
      case UnKind::neg: return "neg";
      case UnKind::scale: return "scale";
      case UnKind::shift: return "add_scalar";
      case UnKind::tanh: return "tanh";
      case UnKind::sin: return "sin";
      case UnKind::cos: return "cos";
      case UnKind::exp: return "exp";
      case UnKind::log: return "log";
      case UnKind::sqrt: return "sqrt";
      case UnKind::square: return "square";
      case UnKind::sigmoid: return "sigmoid";
      case UnKind::softplus: return "softplus";
      case UnKind::relu: return "relu";
      case UnKind::clamp: return "clamp";
    }
    return "unary";
  }

  double apply(double x) const {
    switch (kind_) {
      case UnKind::neg: return -x;
      case UnKind::scale: return p0_ * x;
      case UnKind::shift: return x + p0_;
      case UnKind::tanh: return std::tanh(x);
      case UnKind::sin: return std::sin(x);
      case UnKind::cos: return std::cos(x);
      case UnKind::exp: return std::exp(x);
      case UnKind::log: return std::log(x);
      case UnKind::sqrt: return std::sqrt(x);
      case UnKind::square: return x * x;
      case UnKind::sigmoid: return sigmoid_of(x);
      case UnKind::softplus: return softplus_of(x);
      case UnKind::relu: return x > 0 ? x : 0.0;
      case UnKind::clamp: return std::clamp(x, p0_, p1_);
    }
    return x;
  }

  double derivative(double x, double y) const {
    switch (kind_) {
      case UnKind::neg: return -1.0;
      case UnKind::scale: return p0_;
      case UnKind::shift: return 1.0;
      case UnKind::tanh: return 1.0 - y * y;
      case UnKind::sin: return std::cos(x);
      case UnKind::cos: return -std::sin(x);
      case UnKind::exp: return y;
      case UnKind::log: return 1.0 / x;
      case UnKind::sqrt: return 0.5 / y;
      case UnKind::square: return 2.0 * x;
      case UnKind::sigmoid: return y * (1.0 - y);
      case UnKind::softplus: return sigmoid_of(x);
      case UnKind::relu: return x > 0 ? 1.0 : 0.0;
      case UnKind::clamp: return (x >= p0_ && x <= p1_) ? 1.0 : 0.0;
    }
    return 0.0;
  }

  void vjp(const Tape& tape, const Node& self, std::span<const double> g,
           std::span<double* const> gin) const override {
    if (!gin[0]) return;
    const Node& a = input_node(tape, self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * derivative(a.value[i], self.value[i]);
  }

  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    Value x = input(tape, self, 0);
    Grads out(1);
    if (!x.requires_grad()) return out;
    Value y = tape.value_of(self);
    switch (kind_) {
      case UnKind::neg: out[0] = neg(g); break;
      case UnKind::scale: out[0] = scale(g, p0_); break;
      case UnKind::shift: out[0] = g; break;
      case UnKind::tanh: out[0] = mul(g, add_scalar(neg(square(y)), 1.0)); break;
      case UnKind::sin: out[0] = mul(g, ad::cos(x)); break;
      case UnKind::cos: out[0] = neg(mul(g, ad::sin(x))); break;
      case UnKind::exp: out[0] = mul(g, y); break;
      case UnKind::log: out[0] = div(g, x); break;
      case UnKind::sqrt: out[0] = div(g, scale(y, 2.0)); break;
      case UnKind::square: out[0] = mul(g, scale(x, 2.0)); break;
      case UnKind::sigmoid: out[0] = mul(g, mul(y, add_scalar(neg(y), 1.0))); break;
      case UnKind::softplus: out[0] = mul(g, ad::sigmoid(x)); break;
      case UnKind::relu:
      case UnKind::clamp: {
        // piecewise-constant mask: its own derivative is zero
        const Node& nx = node_of(x);
        std::vector<double> mask(nx.value.size());
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = derivative(nx.value[i], 0.0);
        out[0] = mul(g, tape.constant(Tensor(nx.shape, std::move(mask))));
        break;
      }
    }
    return out;
  }

 private:
  UnKind kind_;
  double p0_, p1_;
};

Value unary(const Value& a, std::shared_ptr<const UnaryOp> op) {
  Tape& tape = owner({&a}, op->name());
  const Node& na = node_of(a);
  std::vector<double> y(na.value.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = op->apply(na.value[i]);
  Shape s = na.shape;
  return tape.record(std::move(s), std::move(y), std::move(op), {a});
}

template <UnKind K>
Value unary_fixed(const Value& a) {
  static const auto op = std::make_shared<const UnaryOp>(K);
  return unary(a, op);
}

// ---- matmul ----------------------------------------------------------------

class MatmulOp final : public Op {
 public:
  MatmulOp(bool ta, bool tb) : ta_(ta), tb_(tb) {}
  const char* name() const override { return "matmul"; }

  void vjp(const Tape& tape, const Node& self, std::span<const double> g,
           std::span<double* const> gin) const override {
    const Node& a = input_node(tape, self, 0);
    const Node& b = input_node(tape, self, 1);
    const auto m = self.shape[0], n = self.shape[1];
    if (gin[0]) {
      if (!ta_)
        kernel::gemm(g.data(), m, n, false, b.value.data(), b.shape[0], b.shape[1], !tb_, gin[0], true);
      else
        kernel::gemm(b.value.data(), b.shape[0], b.shape[1], tb_, g.data(), m, n, true, gin[0], true);
    }
    if (gin[1]) {
      if (!tb_)
        kernel::gemm(a.value.data(), a.shape[0], a.shape[1], !ta_, g.data(), m, n, false, gin[1], true);
      else
        kernel::gemm(g.data(), m, n, true, a.value.data(), a.shape[0], a.shape[1], ta_, gin[1], true);
    }
  }

  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    Value a = input(tape, self, 0), b = input(tape, self, 1);
    Grads out(2);
    if (a.requires_grad()) out[0] = !ta_ ? matmul(g, b, false, !tb_) : matmul(b, g, tb_, true);
    if (b.requires_grad()) out[1] = !tb_ ? matmul(a, g, !ta_, false) : matmul(g, a, true, ta_);
    return out;
  }

 private:
  bool ta_, tb_;
};

// ---- reductions and shape ops -------------------------------------------

class SumToOp final : public Op {
 public:
  const char* name() const override { return "sum_to"; }
  void vjp(const Tape& tape, const Node& self, std::span<const double> g,
           std::span<double* const> gin) const override {
    if (!gin[0]) return;
    const Node& a = input_node(tape, self, 0);
    std::vector<double> tmp(a.value.size());
    kernel::broadcast_into(g.data(), self.shape, a.shape, tmp.data());
    for (std::size_t i = 0; i < tmp.size(); ++i) gin[0][i] += tmp[i];
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    Value a = input(tape, self, 0);
    Grads out(1);
    if (a.requires_grad()) out[0] = broadcast_to(g, a.shape());
    return out;
  }
};

class BroadcastOp final : public Op {
 public:
  const char* name() const override { return "broadcast_to"; }
  void vjp(const Tape& tape, const Node& self, std::span<const double> g,
           std::span<double* const> gin) const override {
    if (!gin[0]) return;
    const Node& a = input_node(tape, self, 0);
    kernel::accumulate_sum_to(g.data(), self.shape, a.shape, gin[0]);
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    Value a = input(tape, self, 0);
    Grads out(1);
    if (a.requires_grad()) out[0] = sum_to(g, a.shape());
    return out;
  }
};

class ReshapeOp final : public Op {
 public:
  const char* name() const override { return "reshape"; }
  void vjp(const Tape&, const Node&, std::span<const double> g, std::span<double* const> gin) const override {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    Value a = input(tape, self, 0);
    Grads out(1);
    if (a.requires_grad()) out[0] = reshape(g, a.shape());
    return out;
  }
};

class TransposeOp final : public Op {
 public:
  const char* name() const override { return "transpose"; }
  void vjp(const Tape&, const Node& self, std::span<const double> g, std::span<double* const> gin) const override {
    if (!gin[0]) return;
    const auto r = self.shape[0], c = self.shape[1];  // output r x c, input c x r
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) gin[0][j * r + i] += g[static_cast<std::size_t>(i * c + j)];
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    Value a = input(tape, self, 0);
    Grads out(1);
    if (a.requires_grad()) out[0] = transpose(g);
    return out;
  }
};

// outer = product of dims before axis, inner = product of dims after axis
struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.len = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

class PadSliceOp;

class SliceOp final : public Op {
 public:
  SliceOp(int axis, std::int64_t start) : axis_(axis), start_(start) {}
  const char* name() const override { return "slice"; }
  void vjp(const Tape& tape, const Node& self, std::span<const double> g,
           std::span<double* const> gin) const override {
    if (!gin[0]) return;
    const Node& a = input_node(tape, self, 0);
    auto sa = split_at(a.shape, axis_);
    auto len = self.shape[static_cast<std::size_t>(axis_)];
    for (std::int64_t o = 0; o < sa.outer; ++o)
      for (std::int64_t l = 0; l < len; ++l) {
        double* dst = gin[0] + (o * sa.len + start_ + l) * sa.inner;
        const double* src = g.data() + (o * len + l) * sa.inner;
        for (std::int64_t i = 0; i < sa.inner; ++i) dst[i] += src[i];
      }
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override;

 private:
  int axis_;
  std::int64_t start_;
};

// Places its input into a zero tensor of a larger shape; adjoint of slice.
class PadSliceOp final : public Op {
 public:
  PadSliceOp(int axis, std::int64_t start) : axis_(axis), start_(start) {}
  const char* name() const override { return "pad_slice"; }
  void vjp(const Tape& tape, const Node& self, std::span<const double> g,
           std::span<double* const> gin) const override {
    if (!gin[0]) return;
    const Node& a = input_node(tape, self, 0);
    auto so = split_at(self.shape, axis_);
    auto len = a.shape[static_cast<std::size_t>(axis_)];
    for (std::int64_t o = 0; o < so.outer; ++o)
      for (std::int64_t l = 0; l < len; ++l) {
        const double* src = g.data() + (o * so.len + start_ + l) * so.inner;
        double* dst = gin[0] + (o * len + l) * so.inner;
        for (std::int64_t i = 0; i < so.inner; ++i) dst[i] += src[i];
      }
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    Value a = input(tape, self, 0);
    Grads out(1);
    if (a.requires_grad()) out[0] = slice(g, axis_, start_, a.shape()[static_cast<std::size_t>(axis_)]);
    return out;
  }

  static Value apply(const Value& a, const Shape& full, int axis, std::int64_t start) {
    Tape& tape = *a.tape();
    const Node& na = node_of(a);
    auto so = split_at(full, axis);
    auto len = na.shape[static_cast<std::size_t>(axis)];
    std::vector<double> y(static_cast<std::size_t>(numel(full)), 0.0);
    for (std::int64_t o = 0; o < so.outer; ++o)
      for (std::int64_t l = 0; l < len; ++l)
        std::copy_n(na.value.data() + (o * len + l) * so.inner, so.inner,
                    y.data() + (o * so.len + start + l) * so.inner);
    return tape.record(full, std::move(y), std::make_shared<PadSliceOp>(axis, start), {a});
  }

 private:
  int axis_;
  std::int64_t start_;
};

Grads SliceOp::vjp_graph(Tape& tape, std::int32_t self, const Value& g) const {
  Value a = input(tape, self, 0);
  Grads out(1);
  if (a.requires_grad()) out[0] = PadSliceOp::apply(g, a.shape(), axis_, start_);
  return out;
}

class ConcatOp final : public Op {
 public:
  explicit ConcatOp(int axis) : axis_(axis) {}
  const char* name() const override { return "concat"; }
  void vjp(const Tape& tape, const Node& self, std::span<const double> g,
           std::span<double* const> gin) const override {
    auto so = split_at(self.shape, axis_);
    std::int64_t offset = 0;
    for (std::size_t p = 0; p < self.inputs.size(); ++p) {
      const Node& part = input_node(tape, self, p);
      auto len = part.shape[static_cast<std::size_t>(axis_)];
      if (gin[p]) {
        for (std::int64_t o = 0; o < so.outer; ++o) {
          const double* src = g.data() + (o * so.len + offset) * so.inner;
          double* dst = gin[p] + o * len * so.inner;
          for (std::int64_t i = 0; i < len * so.inner; ++i) dst[i] += src[i];
        }
      }
      offset += len;
    }
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    const auto inputs = tape.node(self).inputs;
    Grads out(inputs.size());
    std::int64_t offset = 0;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
      Value part = tape.value_of(inputs[p]);
      auto len = part.shape()[static_cast<std::size_t>(axis_)];
      if (part.requires_grad()) out[p] = slice(g, axis_, offset, len);
      offset += len;
    }
    return out;
  }

 private:
  int axis_;
};

class RepeatOp final : public Op {
 public:
  explicit RepeatOp(std::int64_t times) : times_(times) {}
  const char* name() const override { return "repeat"; }
  void vjp(const Tape&, const Node& self, std::span<const double> g, std::span<double* const> gin) const override {
    if (!gin[0]) return;
    const auto block = numel(self.shape) / times_;
    for (std::int64_t t = 0; t < times_; ++t)
      for (std::int64_t i = 0; i < block; ++i) gin[0][i] += g[static_cast<std::size_t>(t * block + i)];
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    Value a = input(tape, self, 0);
    Grads out(1);
    if (a.requires_grad()) out[0] = fold(g, times_);
    return out;
  }

 private:
  std::int64_t times_;
};

class FoldOp final : public Op {
 public:
  explicit FoldOp(std::int64_t times) : times_(times) {}
  const char* name() const override { return "fold"; }
  void vjp(const Tape&, const Node& self, std::span<const double> g, std::span<double* const> gin) const override {
    if (!gin[0]) return;
    const auto block = numel(self.shape);
    for (std::int64_t t = 0; t < times_; ++t)
      for (std::int64_t i = 0; i < block; ++i) gin[0][t * block + i] += g[static_cast<std::size_t>(i)];
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    Value a = input(tape, self, 0);
    Grads out(1);
    if (a.requires_grad()) out[0] = repeat(g, times_);
    return out;
  }

 private:
  std::int64_t times_;
};

class LogSumExpOp final : public Op {
 public:
  const char* name() const override { return "logsumexp"; }
  void vjp(const Tape& tape, const Node& self, std::span<const double> g,
           std::span<double* const> gin) const override {
    if (!gin[0]) return;
    const Node& a = input_node(tape, self, 0);
    const auto k = a.shape.back();
    const auto rows = numel(self.shape);
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < k; ++j)
        gin[0][r * k + j] += g[static_cast<std::size_t>(r)] * std::exp(a.value[static_cast<std::size_t>(r * k + j)] - self.value[static_cast<std::size_t>(r)]);
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    Value a = input(tape, self, 0);
    Grads out(1);
    if (!a.requires_grad()) return out;
    Value y = tape.value_of(self);
    Shape kept = y.shape();
    kept.push_back(1);
    Value softmax = exp(sub(a, reshape(y, kept)));
    out[0] = mul(softmax, reshape(g, kept));
    return out;
  }
};

// ---- convolution -----------------------------------------------------------

kernel::ConvDims conv_dims(const Shape& x, const Shape& w, std::int64_t ho, std::int64_t wo, ConvGeometry g) {
  return {x[0], x[1], x[2], x[3], w[0], w[2], w[3], ho, wo, g.stride, g.pad};
}

std::int64_t conv_out(std::int64_t in, std::int64_t k, ConvGeometry g) { return (in + 2 * g.pad - k) / g.stride + 1; }

class Conv2dOp final : public Op {
 public:
  explicit Conv2dOp(ConvGeometry g) : g_(g) {}
  const char* name() const override { return "conv2d"; }
  void vjp(const Tape& tape, const Node& self, std::span<const double> g,
           std::span<double* const> gin) const override {
    const Node& x = input_node(tape, self, 0);
    const Node& w = input_node(tape, self, 1);
    auto d = conv_dims(x.shape, w.shape, self.shape[2], self.shape[3], g_);
    if (gin[0]) kernel::conv2d_backward_input(d, g.data(), w.value.data(), gin[0]);
    if (gin[1]) kernel::conv2d_backward_weight(d, x.value.data(), g.data(), gin[1]);
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& g) const override {
    Value x = input(tape, self, 0), w = input(tape, self, 1);
    Grads out(2);
    if (x.requires_grad()) out[0] = conv2d_input_grad(g, w, x.dim(2), x.dim(3), g_);
    if (w.requires_grad()) out[1] = conv2d_weight_grad(x, g, w.dim(2), w.dim(3), g_);
    return out;
  }

 private:
  ConvGeometry g_;
};

class ConvInputGradOp final : public Op {
 public:
  explicit ConvInputGradOp(ConvGeometry g) : g_(g) {}
  const char* name() const override { return "conv2d_input_grad"; }
  // inputs: g [N,O,Ho,Wo], w [O,C,kh,kw]; output [N,C,H,W]
  void vjp(const Tape& tape, const Node& self, std::span<const double> a,
           std::span<double* const> gin) const override {
    const Node& go = input_node(tape, self, 0);
    const Node& w = input_node(tape, self, 1);
    auto d = conv_dims(self.shape, w.shape, go.shape[2], go.shape[3], g_);
    if (gin[0]) kernel::conv2d_forward(d, a.data(), w.value.data(), gin[0], true);
    if (gin[1]) kernel::conv2d_backward_weight(d, a.data(), go.value.data(), gin[1]);
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& a) const override {
    Value go = input(tape, self, 0), w = input(tape, self, 1);
    Grads out(2);
    if (go.requires_grad()) out[0] = conv2d(a, w, g_);
    if (w.requires_grad()) out[1] = conv2d_weight_grad(a, go, w.dim(2), w.dim(3), g_);
    return out;
  }

 private:
  ConvGeometry g_;
};

class ConvWeightGradOp final : public Op {
 public:
  explicit ConvWeightGradOp(ConvGeometry g) : g_(g) {}
  const char* name() const override { return "conv2d_weight_grad"; }
  // inputs: x [N,C,H,W], g [N,O,Ho,Wo]; output [O,C,kh,kw]
  void vjp(const Tape& tape, const Node& self, std::span<const double> a,
           std::span<double* const> gin) const override {
    const Node& x = input_node(tape, self, 0);
    const Node& go = input_node(tape, self, 1);
    auto d = conv_dims(x.shape, self.shape, go.shape[2], go.shape[3], g_);
    if (gin[0]) kernel::conv2d_backward_input(d, go.value.data(), a.data(), gin[0]);
    if (gin[1]) kernel::conv2d_forward(d, x.value.data(), a.data(), gin[1], true);
  }
  Grads vjp_graph(Tape& tape, std::int32_t self, const Value& a) const override {
    Value x = input(tape, self, 0), go = input(tape, self, 1);
    Grads out(2);
    if (x.requires_grad()) out[0] = conv2d_input_grad(go, a, x.dim(2), x.dim(3), g_);
    if (go.requires_grad()) out[1] = conv2d(x, a, g_);
    return out;
  }

 private:
  ConvGeometry g_;
};

void require_rank(const Value& v, int rank, const char* op) {
  if (v.rank() != rank)
    fail(ErrorKind::shape, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(v.shape()));
}

}  // namespace

// ---- public entry points ---------------------------------------------------

Value add(const Value& a, const Value& b) { return binary(BinKind::add, a, b, "add"); }
Value sub(const Value& a, const Value& b) { return binary(BinKind::sub, a, b, "sub"); }
Value mul(const Value& a, const Value& b) { return binary(BinKind::mul, a, b, "mul"); }
Value div(const Value& a, const Value& b) { return binary(BinKind::div, a, b, "div"); }

Value neg(const Value& a) { return unary_fixed<UnKind::neg>(a); }
Value scale(const Value& a, double s) { return unary(a, std::make_shared<const UnaryOp>(UnKind::scale, s)); }
Value add_scalar(const Value& a, double s) { return unary(a, std::make_shared<const UnaryOp>(UnKind::shift, s)); }
Value tanh(const Value& a) { return unary_fixed<UnKind::tanh>(a); }
Value sin(const Value& a) { return unary_fixed<UnKind::sin>(a); }
Value cos(const Value& a) { return unary_fixed<UnKind::cos>(a); }
Value exp(const Value& a) { return unary_fixed<UnKind::exp>(a); }
Value log(const Value& a) { return unary_fixed<UnKind::log>(a); }
Value sqrt(const Value& a) { return unary_fixed<UnKind::sqrt>(a); }
Value square(const Value& a) { return unary_fixed<UnKind::square>(a); }
Value sigmoid(const Value& a) { return unary_fixed<UnKind::sigmoid>(a); }
Value softplus(const Value& a) { return unary_fixed<UnKind::softplus>(a); }
Value relu(const Value& a) { return unary_fixed<UnKind::relu>(a); }
Value clamp(const Value& a, double lo, double hi) {
  if (!(lo <= hi)) fail(ErrorKind::usage, "clamp: lower bound exceeds upper bound");
  return unary(a, std::make_shared<const UnaryOp>(UnKind::clamp, lo, hi));
}

Value matmul(const Value& a, const Value& b, bool ta, bool tb) {
  Tape& tape = owner({&a, &b}, "matmul");
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Node& na = node_of(a);
  const Node& nb = node_of(b);
  const auto m = ta ? na.shape[1] : na.shape[0];
  const auto ka = ta ? na.shape[0] : na.shape[1];
  const auto kb = tb ? nb.shape[1] : nb.shape[0];
  const auto n = tb ? nb.shape[0] : nb.shape[1];
  if (ka != kb)
    fail(ErrorKind::shape, "matmul: inner dimensions differ: " + to_string(na.shape) + (ta ? "^T" : "") + " x " +
                               to_string(nb.shape) + (tb ? "^T" : ""));
  std::vector<double> y(static_cast<std::size_t>(m * n));
  kernel::gemm(na.value.data(), na.shape[0], na.shape[1], ta, nb.value.data(), nb.shape[0], nb.shape[1], tb, y.data(), false);
  static const auto ops = std::array<std::shared_ptr<const Op>, 4>{
      std::make_shared<MatmulOp>(false, false), std::make_shared<MatmulOp>(false, true),
      std::make_shared<MatmulOp>(true, false), std::make_shared<MatmulOp>(true, true)};
  return tape.record({m, n}, std::move(y), ops[static_cast<std::size_t>((ta ? 2 : 0) + (tb ? 1 : 0))], {a, b});
}

Value sum(const Value& a) { return sum_to(a, {}); }

Value mean(const Value& a) {
  const auto n = a.numel();
  if (n == 0) fail(ErrorKind::shape, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Value sum_to(const Value& a, const Shape& shape) {
  Tape& tape = owner({&a}, "sum_to");
  const Node& na = node_of(a);
  if (shape.size() > na.shape.size() || kernel::broadcast_shape(shape, na.shape, "sum_to") != na.shape)
    fail(ErrorKind::shape, "sum_to: cannot reduce " + to_string(na.shape) + " to " + to_string(shape));
  std::vector<double> y(static_cast<std::size_t>(numel(shape)), 0.0);
  kernel::accumulate_sum_to(na.value.data(), na.shape, shape, y.data());
  static const auto op = std::make_shared<const SumToOp>();
  return tape.record(shape, std::move(y), op, {a});
}

Value broadcast_to(const Value& a, const Shape& shape) {
  Tape& tape = owner({&a}, "broadcast_to");
  const Node& na = node_of(a);
  if (na.shape.size() > shape.size() || kernel::broadcast_shape(na.shape, shape, "broadcast_to") != shape)
    fail(ErrorKind::shape, "broadcast_to: cannot broadcast " + to_string(na.shape) + " to " + to_string(shape));
  std::vector<double> y(static_cast<std::size_t>(numel(shape)));
  kernel::broadcast_into(na.value.data(), na.shape, shape, y.data());
  static const auto op = std::make_shared<const BroadcastOp>();
  return tape.record(shape, std::move(y), op, {a});
}

Value reshape(const Value& a, const Shape& shape) {
  Tape& tape = owner({&a}, "reshape");
  const Node& na = node_of(a);
  if (numel(shape) != numel(na.shape))
    fail(ErrorKind::shape, "reshape: " + to_string(na.shape) + " to " + to_string(shape) + " changes element count");
  static const auto op = std::make_shared<const ReshapeOp>();
  std::vector<double> y = na.value;
  return tape.record(shape, std::move(y), op, {a});
}

Value transpose(const Value& a) {
  Tape& tape = owner({&a}, "transpose");
  require_rank(a, 2, "transpose");
  const Node& na = node_of(a);
  const auto r = na.shape[0], c = na.shape[1];
  std::vector<double> y(na.value.size());
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) y[static_cast<std::size_t>(j * r + i)] = na.value[static_cast<std::size_t>(i * c + j)];
  static const auto op = std::make_shared<const TransposeOp>();
  return tape.record({c, r}, std::move(y), op, {a});
}

Value concat(const std::vector<Value>& parts, int axis) {
  if (parts.empty()) fail(ErrorKind::usage, "concat: no operands");
  Tape& tape = *parts[0].tape();
  for (const auto& p : parts) tape.check_owner(p, "concat");
  Shape out = parts[0].shape();
  const int rank = static_cast<int>(out.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) fail(ErrorKind::shape, "concat: axis out of range for " + to_string(out));
  std::int64_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = static_cast<int>(s.size()) == rank;
    for (int i = 0; ok && i < rank; ++i)
      if (i != axis && s[static_cast<std::size_t>(i)] != out[static_cast<std::size_t>(i)]) ok = false;
    if (!ok) fail(ErrorKind::shape, "concat: incompatible shapes " + to_string(out) + " and " + to_string(s));
    total += s[static_cast<std::size_t>(axis)];
  }
  out[static_cast<std::size_t>(axis)] = total;
  auto so = split_at(out, axis);
  std::vector<double> y(static_cast<std::size_t>(numel(out)));
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const Node& np = node_of(p);
    auto len = np.shape[static_cast<std::size_t>(axis)];
    for (std::int64_t o = 0; o < so.outer; ++o)
      std::copy_n(np.value.data() + o * len * so.inner, len * so.inner, y.data() + (o * so.len + offset) * so.inner);
    offset += len;
  }
  return tape.record(std::move(out), std::move(y), std::make_shared<ConcatOp>(axis), std::span<const Value>(parts));
}

Value slice(const Value& a, int axis, std::int64_t start, std::int64_t length) {
  Tape& tape = owner({&a}, "slice");
  const Node& na = node_of(a);
  const int rank = static_cast<int>(na.shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) fail(ErrorKind::shape, "slice: axis out of range for " + to_string(na.shape));
  auto sa = split_at(na.shape, axis);
  if (start < 0 || length < 0 || start + length > sa.len)
    fail(ErrorKind::shape, "slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                               ") out of bounds for " + to_string(na.shape) + " on axis " + std::to_string(axis));
  Shape out = na.shape;
  out[static_cast<std::size_t>(axis)] = length;
  std::vector<double> y(static_cast<std::size_t>(numel(out)));
  for (std::int64_t o = 0; o < sa.outer; ++o)
    std::copy_n(na.value.data() + (o * sa.len + start) * sa.inner, length * sa.inner, y.data() + o * length * sa.inner);
  return tape.record(std::move(out), std::move(y), std::make_shared<SliceOp>(axis, start), {a});
}

Value repeat(const Value& a, std::int64_t times) {
  Tape& tape = owner({&a}, "repeat");
  if (times < 1) fail(ErrorKind::usage, "repeat: times must be positive");
  if (a.rank() < 1) fail(ErrorKind::shape, "repeat: needs rank >= 1");
  const Node& na = node_of(a);
  Shape out = na.shape;
  out[0] *= times;
  std::vector<double> y;
  y.reserve(na.value.size() * static_cast<std::size_t>(times));
  for (std::int64_t t = 0; t < times; ++t) y.insert(y.end(), na.value.begin(), na.value.end());
  return tape.record(std::move(out), std::move(y), std::make_shared<RepeatOp>(times), {a});
}

Value fold(const Value& a, std::int64_t times) {
  Tape& tape = owner({&a}, "fold");
  if (times < 1) fail(ErrorKind::usage, "fold: times must be positive");
  const Node& na = node_of(a);
  if (na.shape.empty() || na.shape[0] % times != 0)
    fail(ErrorKind::shape, "fold: leading dimension of " + to_string(na.shape) + " not divisible by " + std::to_string(times));
  Shape out = na.shape;
  out[0] /= times;
  const auto block = numel(out);
  std::vector<double> y(static_cast<std::size_t>(block), 0.0);
  for (std::int64_t t = 0; t < times; ++t)
    for (std::int64_t i = 0; i < block; ++i) y[static_cast<std::size_t>(i)] += na.value[static_cast<std::size_t>(t * block + i)];
  return tape.record(std::move(out), std::move(y), std::make_shared<FoldOp>(times), {a});
}

Value logsumexp(const Value& a) {
  Tape& tape = owner({&a}, "logsumexp");
  const Node& na = node_of(a);
  if (na.shape.empty() || na.shape.back() == 0) fail(ErrorKind::shape, "logsumexp: needs a non-empty last axis");
  const auto k = na.shape.back();
  Shape out(na.shape.begin(), na.shape.end() - 1);
  const auto rows = numel(out);
  std::vector<double> y(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = na.value.data() + r * k;
    const double m = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::int64_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
    y[static_cast<std::size_t>(r)] = m + std::log(s);
  }
  static const auto op = std::make_shared<const LogSumExpOp>();
  return tape.record(std::move(out), std::move(y), op, {a});
}

Value stop_gradient(const Value& a) {
  owner({&a}, "stop_gradient");
  return a.tape()->constant(a.tensor());
}

Value conv2d(const Value& x, const Value& w, ConvGeometry g) {
  Tape& tape = owner({&x, &w}, "conv2d");
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const Node& nx = node_of(x);
  const Node& nw = node_of(w);
  if (nx.shape[1] != nw.shape[1])
    fail(ErrorKind::shape, "conv2d: input channels " + to_string(nx.shape) + " vs filters " + to_string(nw.shape));
  const auto ho = conv_out(nx.shape[2], nw.shape[2], g), wo = conv_out(nx.shape[3], nw.shape[3], g);
  if (ho <= 0 || wo <= 0) fail(ErrorKind::shape, "conv2d: kernel larger than padded input " + to_string(nx.shape));
  auto d = conv_dims(nx.shape, nw.shape, ho, wo, g);
  Shape out{nx.shape[0], nw.shape[0], ho, wo};
  std::vector<double> y(static_cast<std::size_t>(numel(out)));
  kernel::conv2d_forward(d, nx.value.data(), nw.value.data(), y.data(), false);
  return tape.record(std::move(out), std::move(y), std::make_shared<Conv2dOp>(g), {x, w});
}

Value conv2d_input_grad(const Value& go, const Value& w, std::int64_t height, std::int64_t width, ConvGeometry geom) {
  Tape& tape = owner({&go, &w}, "conv2d_input_grad");
  require_rank(go, 4, "conv2d_input_grad");
  require_rank(w, 4, "conv2d_input_grad");
  const Node& ng = node_of(go);
  const Node& nw = node_of(w);
  if (ng.shape[1] != nw.shape[0] || conv_out(height, nw.shape[2], geom) != ng.shape[2] ||
      conv_out(width, nw.shape[3], geom) != ng.shape[3])
    fail(ErrorKind::shape, "conv2d_input_grad: gradient " + to_string(ng.shape) + " inconsistent with filters " +
                               to_string(nw.shape) + " and target " + std::to_string(height) + "x" + std::to_string(width));
  Shape out{ng.shape[0], nw.shape[1], height, width};
  auto d = conv_dims(out, nw.shape, ng.shape[2], ng.shape[3], geom);
  std::vector<double> y(static_cast<std::size_t>(numel(out)), 0.0);
  kernel::conv2d_backward_input(d, ng.value.data(), nw.value.data(), y.data());
  return tape.record(std::move(out), std::move(y), std::make_shared<ConvInputGradOp>(geom), {go, w});
}

Value conv2d_weight_grad(const Value& x, const Value& go, std::int64_t kh, std::int64_t kw, ConvGeometry geom) {
  Tape& tape = owner({&x, &go}, "conv2d_weight_grad");
  require_rank(x, 4, "conv2d_weight_grad");
  require_rank(go, 4, "conv2d_weight_grad");
  const Node& nx = node_of(x);
  const Node& ng = node_of(go);
  if (nx.shape[0] != ng.shape[0] || conv_out(nx.shape[2], kh, geom) != ng.shape[2] ||
      conv_out(nx.shape[3], kw, geom) != ng.shape[3])
    fail(ErrorKind::shape, "conv2d_weight_grad: input " + to_string(nx.shape) + " inconsistent with gradient " + to_string(ng.shape));
  Shape out{ng.shape[1], nx.shape[1], kh, kw};
  auto d = conv_dims(nx.shape, out, ng.shape[2], ng.shape[3], geom);
  std::vector<double> y(static_cast<std::size_t>(numel(out)), 0.0);
  kernel::conv2d_backward_weight(d, nx.value.data(), ng.value.data(), y.data());
  return tape.record(std::move(out), std::move(y), std::make_shared<ConvWeightGradOp>(geom), {x, go});
}

}  // namespace pft::ad
