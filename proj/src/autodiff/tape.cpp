#include <cmath>
#include <numeric>
#include <sstream>

#include "pft/autodiff.hpp"

namespace pft {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::shape: return "shape";
    case ErrorKind::range: return "range";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::digest: return "digest";
  }
  return "unknown";
}

}  // namespace pft

namespace pft::ad {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  for (auto dim : shape)
    if (dim < 0) fail(ErrorKind::shape, "negative dimension in " + ad::to_string(shape));
  if (numel(shape) != static_cast<std::int64_t>(data.size()))
    fail(ErrorKind::shape, "tensor data length " + std::to_string(data.size()) +
                               " does not match shape " + ad::to_string(shape));
}

Tensor Tensor::zeros(Shape s) {
  auto n = static_cast<std::size_t>(numel(s));
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::filled(Shape s, double v) {
  auto n = static_cast<std::size_t>(numel(s));
  return Tensor(std::move(s), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::vector(std::vector<double> v) {
  auto n = static_cast<std::int64_t>(v.size());
  return Tensor({n}, std::move(v));
}

double Tensor::item() const {
  if (data.size() != 1) fail(ErrorKind::shape, "item() on tensor of shape " + ad::to_string(shape));
  return data[0];
}

const Shape& Value::shape() const { return tape_->node(id_).shape; }

std::int64_t Value::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    fail(ErrorKind::shape, "axis " + std::to_string(axis) + " out of range for " + ad::to_string(s));
  return s[static_cast<std::size_t>(axis)];
}

std::int64_t Value::numel() const { return ad::numel(shape()); }

std::span<const double> Value::data() const { return tape_->node(id_).value; }

double Value::item() const {
  auto d = data();
  if (d.size() != 1) fail(ErrorKind::shape, "item() on value of shape " + ad::to_string(shape()));
  return d[0];
}

Tensor Value::tensor() const {
  const auto& n = tape_->node(id_);
  return Tensor(n.shape, n.value);
}

bool Value::requires_grad() const { return tape_->node(id_).requires_grad; }

Tape::Tape(std::uint64_t rng_seed) : rng_seed_(rng_seed), rng_(rng_seed) {}

Value Tape::constant(Tensor t) { return leaf(std::move(t), false); }

Value Tape::variable(Tensor t) { return leaf(std::move(t), true); }

Value Tape::leaf(Tensor t, bool requires_grad) {
  Node n;
  n.shape = std::move(t.shape);
  n.value = std::move(t.data);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Value(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

void Tape::check_owner(const Value& v, const char* op) const {
  if (!v.valid()) fail(ErrorKind::usage, std::string(op) + ": operand is an empty value");
  if (v.tape() != this) fail(ErrorKind::usage, std::string(op) + ": operands live on different tapes");
}

Value Tape::record(Shape shape, std::vector<double> value, std::shared_ptr<const Op> op,
                   std::initializer_list<Value> inputs) {
  return record(std::move(shape), std::move(value), std::move(op),
                std::span<const Value>(inputs.begin(), inputs.size()));
}

Value Tape::record(Shape shape, std::vector<double> value, std::shared_ptr<const Op> op,
                   std::span<const Value> inputs) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.op = std::move(op);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    check_owner(in, n.op ? n.op->name() : "record");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || node(in.id()).requires_grad;
  }
  nodes_.push_back(std::move(n));
  return Value(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Value Tape::value_of(std::int32_t id) {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    fail(ErrorKind::range, "node id " + std::to_string(id) + " not on tape");
  return Value(this, id);
}

void Tape::backward(const Value& output) {
  check_owner(output, "backward");
  if (output.numel() != 1)
    fail(ErrorKind::shape, "backward: output must be scalar, got " + ad::to_string(output.shape()));
  grads_.assign(nodes_.size(), {});
  const auto out = static_cast<std::size_t>(output.id());
  grads_[out] = {1.0};
  std::vector<double*> gin;
  for (std::size_t id = out + 1; id-- > 0;) {
    if (grads_[id].empty()) continue;
    const Node& n = nodes_[id];
    if (!n.op || !n.requires_grad) continue;
    gin.assign(n.inputs.size(), nullptr);
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      auto in = static_cast<std::size_t>(n.inputs[i]);
      if (!nodes_[in].requires_grad) continue;
      if (grads_[in].empty()) grads_[in].assign(nodes_[in].value.size(), 0.0);
      gin[i] = grads_[in].data();
    }
    n.op->vjp(*this, n, grads_[id], gin);
    // interior adjoints are not needed once propagated
    std::vector<double>().swap(grads_[id]);
  }
}

std::vector<double> Tape::adjoint(const Value& v) const {
  check_owner(v, "adjoint");
  const auto id = static_cast<std::size_t>(v.id());
  if (id < grads_.size() && !grads_[id].empty()) return grads_[id];
  return std::vector<double>(nodes_[id].value.size(), 0.0);
}

std::vector<Value> gradient(const Value& output, const std::vector<Value>& wrt, bool create_graph) {
  Tape& tape = *output.tape();
  tape.check_owner(output, "gradient");
  if (output.numel() != 1)
    fail(ErrorKind::shape, "gradient: output must be scalar, got " + to_string(output.shape()));
  for (const auto& w : wrt) tape.check_owner(w, "gradient");

  std::vector<Value> result;
  result.reserve(wrt.size());
  if (!create_graph) {
    tape.backward(output);
    for (const auto& w : wrt) result.push_back(tape.constant(Tensor(w.shape(), tape.adjoint(w))));
    return result;
  }

  const auto out = static_cast<std::size_t>(output.id());
  std::vector<std::optional<Value>> adj(out + 1);
  adj[out] = tape.constant(Tensor::filled(output.shape(), 1.0));
  for (std::size_t id = out + 1; id-- > 0;) {
    if (!adj[id]) continue;
    // copy what we need: recording new nodes may reallocate the node list
    const Node& n = tape.node(static_cast<std::int32_t>(id));
    if (!n.op || !n.requires_grad) continue;
    auto op = n.op;
    auto inputs = n.inputs;
    auto grads = op->vjp_graph(tape, static_cast<std::int32_t>(id), *adj[id]);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto in = static_cast<std::size_t>(inputs[i]);
      auto& g = grads[i];
      if (!g || !tape.node(static_cast<std::int32_t>(in)).requires_grad) continue;
      adj[in] = adj[in] ? add(*adj[in], *g) : *g;
    }
  }
  for (const auto& w : wrt) {
    auto id = static_cast<std::size_t>(w.id());
    if (id <= out && adj[id])
      result.push_back(*adj[id]);
    else
      result.push_back(tape.constant(Tensor::zeros(w.shape())));
  }
  return result;
}

}  // namespace pft::ad
