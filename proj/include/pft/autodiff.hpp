#pragma once

// Dense reverse-mode differentiation over 64-bit tensors.
//
// Every intermediate lives on a Tape as an append-only node. A Value is a
// lightweight handle (tape, node index). Backward sweeps visit nodes in strict
// reverse creation order, so adjoint accumulation is deterministic.
//
// Each primitive carries two versions of its local derivative rule: a numeric
// one used by Tape::backward, and one expressed in tape operations, used by
// gradient(..., create_graph = true) so that adjoints can be differentiated
// again.

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pft/error.hpp"

namespace pft::ad {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d);

  static Tensor zeros(Shape s);
  static Tensor filled(Shape s, double v);
  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  double item() const;
};

class Tape;
class Op;

class Value {
 public:
  Value() = default;

  Tape* tape() const { return tape_; }
  std::int32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t numel() const;
  std::span<const double> data() const;
  double item() const;
  Tensor tensor() const;
  bool requires_grad() const;

 private:
  friend class Tape;
  Value(Tape* tape, std::int32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::int32_t id_ = -1;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::shared_ptr<const Op> op;  // null for leaves
  std::vector<std::int32_t> inputs;
  bool requires_grad = false;
};

// Local derivative rule of one primitive.
class Op {
 public:
  virtual ~Op() = default;
  virtual const char* name() const = 0;

  // Accumulates input adjoints. grad_in[i] is null when input i needs none.
  virtual void vjp(const Tape& tape, const Node& self, std::span<const double> grad_out,
                   std::span<double* const> grad_in) const = 0;

  // The same rule recorded as tape operations. Entry i may be empty when
  // input i does not require a gradient.
  virtual std::vector<std::optional<Value>> vjp_graph(Tape& tape, std::int32_t self,
                                                      const Value& grad_out) const = 0;
};

class Tape {
 public:
  explicit Tape(std::uint64_t rng_seed = 0);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value constant(Tensor t);
  Value variable(Tensor t);
  Value leaf(Tensor t, bool requires_grad);
  Value scalar(double v) { return constant(Tensor::scalar(v)); }

  Value record(Shape shape, std::vector<double> value, std::shared_ptr<const Op> op,
               std::initializer_list<Value> inputs);
  Value record(Shape shape, std::vector<double> value, std::shared_ptr<const Op> op,
               std::span<const Value> inputs);

  Value value_of(std::int32_t id);
  const Node& node(std::int32_t id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }

  std::uint64_t rng_seed() const { return rng_seed_; }
  std::mt19937_64& rng() { return rng_; }

  // Numeric reverse sweep from a scalar output. Leaf adjoints stay readable
  // via adjoint() until the next call; interior adjoints are released.
  void backward(const Value& output);
  // Adjoint of a leaf after backward(); zeros when it was not reached.
  std::vector<double> adjoint(const Value& v) const;

  // Checks that v belongs to this tape.
  void check_owner(const Value& v, const char* op) const;

 private:
  std::deque<Node> nodes_;  // stable addresses across record()
  std::vector<std::vector<double>> grads_;
  std::uint64_t rng_seed_;
  std::mt19937_64 rng_;
};

// Adjoints of a scalar output with respect to each entry of wrt, returned as
// fresh tape nodes. With create_graph the adjoints are themselves
// differentiable; otherwise they are constants. Inputs the output does not
// depend on get zero adjoints.
std::vector<Value> gradient(const Value& output, const std::vector<Value>& wrt,
                            bool create_graph = false);

// ---- primitives -----------------------------------------------------------

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value neg(const Value& a);
Value scale(const Value& a, double s);
Value add_scalar(const Value& a, double s);

// 2-D product op(a) * op(b); transpose flags apply before the product.
Value matmul(const Value& a, const Value& b, bool transpose_a = false, bool transpose_b = false);

Value tanh(const Value& a);
Value sin(const Value& a);
Value cos(const Value& a);
Value exp(const Value& a);
Value log(const Value& a);
Value sqrt(const Value& a);
Value square(const Value& a);
Value sigmoid(const Value& a);
Value softplus(const Value& a);
Value relu(const Value& a);
Value clamp(const Value& a, double lo, double hi);

Value sum(const Value& a);  // to a scalar of shape {}
Value mean(const Value& a);
Value sum_to(const Value& a, const Shape& shape);
Value broadcast_to(const Value& a, const Shape& shape);
Value reshape(const Value& a, const Shape& shape);
Value transpose(const Value& a);  // 2-D
Value concat(const std::vector<Value>& parts, int axis);
Value slice(const Value& a, int axis, std::int64_t start, std::int64_t length);
// Stacks `times` copies along axis 0 / sums `times` equal blocks along axis 0.
Value repeat(const Value& a, std::int64_t times);
Value fold(const Value& a, std::int64_t times);
// Log-sum-exp over the last axis; output drops that axis.
Value logsumexp(const Value& a);
Value stop_gradient(const Value& a);

struct ConvGeometry {
  int stride = 1;
  int pad = 0;
};
// x [N,C,H,W], w [O,C,kh,kw] -> [N,O,Ho,Wo]
Value conv2d(const Value& x, const Value& w, ConvGeometry g);
// Adjoint of conv2d with respect to its input; doubles as transposed
// convolution. g [N,O,Ho,Wo] -> [N,C,height,width].
Value conv2d_input_grad(const Value& g, const Value& w, std::int64_t height, std::int64_t width,
                        ConvGeometry geom);
// Adjoint of conv2d with respect to its weight -> [O,C,kh,kw].
Value conv2d_weight_grad(const Value& x, const Value& g, std::int64_t kh, std::int64_t kw,
                         ConvGeometry geom);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator/(const Value& a, const Value& b) { return div(a, b); }
inline Value operator-(const Value& a) { return neg(a); }
inline Value operator*(const Value& a, double s) { return scale(a, s); }
inline Value operator*(double s, const Value& a) { return scale(a, s); }
inline Value operator+(const Value& a, double s) { return add_scalar(a, s); }
inline Value operator-(const Value& a, double s) { return add_scalar(a, -s); }

// Runs fn(i) for i in [0, n) on up to `threads` workers and returns the
// results in index order. Each shard must use its own tape.
template <class R>
std::vector<R> run_shards(int n, int threads, const std::function<R(int)>& fn);

}  // namespace pft::ad

#include "pft/detail/shards.hpp"
