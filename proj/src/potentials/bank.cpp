#include "pft/potentials.hpp"

namespace pft::pot {

using ad::Tensor;

Value WaveOperator::apply(const FieldDerivatives& d, const Value& c) const {
  return sub(d.u_tt, mul(square(c), d.laplacian));
}

PotentialBank::PotentialBank(const PotentialConfig& config, nn::ParamStore& store, std::mt19937_64& rng,
                             const std::string& prefix)
    : config_(config), prefix_(prefix), embedding_(config.time_dim, config.time_base),
      op_(std::make_shared<WaveOperator>()) {
  if (config.K < 1) fail(ErrorKind::usage, "potentials: K must be at least 1");
  if (config.d < 1) fail(ErrorKind::usage, "potentials: latent dimension must be at least 1");
  if (config.hidden < 1) fail(ErrorKind::usage, "potentials: hidden width must be at least 1");
  if (config.fd_fallback && !(config.fd_h > 0)) fail(ErrorKind::usage, "potentials: fd_h must be positive");
  const int nc = config.per_potential_c ? config.K : 1;
  c_ = store.add(prefix + "c", Tensor::filled({nc}, config.c_init));
  for (int k = 0; k < config.K; ++k) {
    const std::string base = prefix + std::to_string(k) + ".";
    switch (config.kind) {
      case PotentialKind::mlp: {
        Net n;
        n.z1 = nn::Linear::create(store, base + "z1", config.d, config.hidden, rng);
        n.z2 = nn::Linear::create(store, base + "z2", config.hidden, config.hidden, rng);
        n.fusion = nn::Linear::create(store, base + "fusion", config.hidden + config.time_dim, config.hidden, rng);
        n.head = nn::Linear::create(store, base + "head", config.hidden, 1, rng,
                                    config.head_init == HeadInit::zero ? nn::Init::zero : nn::Init::uniform_fan_in);
        nets_.push_back(n);
        break;
      }
      case PotentialKind::linear:
        slopes_.push_back(store.add(base + "slope", Tensor::zeros({config.d, 1})));
        break;
      case PotentialKind::plane_wave:
        break;
    }
  }
}

void PotentialBank::set_operator(std::shared_ptr<const ResidualOperator> op) {
  if (!op) fail(ErrorKind::usage, "potentials: null residual operator");
  op_ = std::move(op);
}

void PotentialBank::check(int k, const Value& z, const Value& t) const {
  if (k < 0 || k >= config_.K)
    fail(ErrorKind::range, "potential index " + std::to_string(k) + " outside [0, " + std::to_string(config_.K) + ")");
  if (z.rank() != 2 || z.dim(1) != config_.d)
    fail(ErrorKind::shape, "potentials: z must be [n, " + std::to_string(config_.d) + "], got " +
                               ad::to_string(z.shape()));
  if (t.rank() != 2 || t.dim(1) != 1 || t.dim(0) != z.dim(0))
    fail(ErrorKind::shape, "potentials: t must be [" + std::to_string(z.dim(0)) + ", 1], got " +
                               ad::to_string(t.shape()));
}

Value PotentialBank::wave_coefficient(const nn::Binding& p, int k) const {
  return config_.per_potential_c ? slice(p[c_], 0, k, 1) : p[c_];
}

Taylor2 PotentialBank::field(const nn::Binding& p, int k, const Taylor2& z, const Taylor2& t) const {
  switch (config_.kind) {
    case PotentialKind::linear:
      return matmul(z, p[slopes_[static_cast<std::size_t>(k)]]);
    case PotentialKind::plane_wave: {
      Taylor2 ct = mul(t, Taylor2::constant(wave_coefficient(p, k)));
      return sin(sub(slice(z, 1, 0, 1), ct));
    }
    case PotentialKind::mlp:
      break;
  }
  const Net& n = nets_[static_cast<std::size_t>(k)];
  Taylor2 h = tanh(n.z1(p, z));
  h = tanh(n.z2(p, h));
  Taylor2 f = tanh(n.fusion(p, ad::concat(std::vector<Taylor2>{h, embedding_(t)}, 1)));
  return n.head(p, f);
}

Value PotentialBank::value(const nn::Binding& p, int k, const Value& z, const Value& t) const {
  check(k, z, t);
  switch (config_.kind) {
    case PotentialKind::linear:
      return matmul(z, p[slopes_[static_cast<std::size_t>(k)]]);
    case PotentialKind::plane_wave:
      return sin(sub(slice(z, 1, 0, 1), mul(t, wave_coefficient(p, k))));
    case PotentialKind::mlp:
      break;
  }
  const Net& n = nets_[static_cast<std::size_t>(k)];
  Value h = tanh(n.z1(p, z));
  h = tanh(n.z2(p, h));
  Value f = tanh(n.fusion(p, ad::concat({h, embedding_(t)}, 1)));
  return n.head(p, f);
}

namespace {

// [blocks * n, d] with block i holding unit vector e_i in every row (zero
// rows for blocks >= d).
Tensor axis_tangents(std::int64_t n, std::int64_t d, std::int64_t blocks) {
  Tensor axes = Tensor::zeros({blocks * n, d});
  for (std::int64_t i = 0; i < d; ++i)
    for (std::int64_t r = 0; r < n; ++r) axes.data[static_cast<std::size_t>((i * n + r) * d + i)] = 1.0;
  return axes;
}

Value gradient_from_blocks(const Value& first, std::int64_t n, std::int64_t d) {
  return transpose(reshape(slice(first, 0, 0, d * n), {d, n}));
}

}  // namespace

Value PotentialBank::velocity(const nn::Binding& p, int k, const Value& z, const Value& t) const {
  check(k, z, t);
  if (config_.fd_fallback) return fd_derivatives(p, k, z, t).grad;
  const auto n = z.dim(0), d = z.dim(1);
  ad::Tape& tape = p.tape();
  Taylor2 zt{z, tape.constant(axis_tangents(n, d, d)), std::nullopt, d, 1};
  Taylor2 u = field(p, k, zt, Taylor2::constant(t));
  if (!u.first) return tape.constant(Tensor::zeros({n, d}));
  return gradient_from_blocks(*u.first, n, d);
}

FieldDerivatives PotentialBank::derivatives(const nn::Binding& p, int k, const Value& z, const Value& t) const {
  check(k, z, t);
  if (config_.fd_fallback) return fd_derivatives(p, k, z, t);
  const auto n = z.dim(0), d = z.dim(1), blocks = d + 1;
  ad::Tape& tape = p.tape();
  Tensor tdir = Tensor::zeros({blocks * n, 1});
  for (std::int64_t r = 0; r < n; ++r) tdir.data[static_cast<std::size_t>(d * n + r)] = 1.0;
  Taylor2 zt{z, tape.constant(axis_tangents(n, d, blocks)), std::nullopt, blocks, 2};
  Taylor2 tt{t, tape.constant(std::move(tdir)), std::nullopt, blocks, 2};
  Taylor2 u = field(p, k, zt, tt);
  auto zeros = [&] { return tape.constant(Tensor::zeros({blocks * n, 1})); };
  Value first = u.first ? *u.first : zeros();
  Value second = u.second ? *u.second : zeros();
  FieldDerivatives out;
  out.u = u.primal;
  out.grad = gradient_from_blocks(first, n, d);
  out.u_t = slice(first, 0, d * n, n);
  out.laplacian = fold(slice(second, 0, 0, d * n), d);
  out.u_tt = slice(second, 0, d * n, n);
  return out;
}

FieldDerivatives PotentialBank::fd_derivatives(const nn::Binding& p, int k, const Value& z, const Value& t) const {
  const auto n = z.dim(0), d = z.dim(1), copies = 2 * d + 3;
  const double h = config_.fd_h;
  ad::Tape& tape = p.tape();
  // copy 0: base; 1 + 2i / 2 + 2i: z +- h e_i; 2d + 1 / 2d + 2: t +- h
  Tensor dz = Tensor::zeros({copies * n, d}), dt = Tensor::zeros({copies * n, 1});
  for (std::int64_t i = 0; i < d; ++i)
    for (std::int64_t r = 0; r < n; ++r) {
      dz.data[static_cast<std::size_t>(((1 + 2 * i) * n + r) * d + i)] = h;
      dz.data[static_cast<std::size_t>(((2 + 2 * i) * n + r) * d + i)] = -h;
    }
  for (std::int64_t r = 0; r < n; ++r) {
    dt.data[static_cast<std::size_t>((2 * d + 1) * n + r)] = h;
    dt.data[static_cast<std::size_t>((2 * d + 2) * n + r)] = -h;
  }
  Value zs = add(repeat(z, copies), tape.constant(std::move(dz)));
  Value ts = add(repeat(t, copies), tape.constant(std::move(dt)));
  Value u = value(p, k, zs, ts);
  auto b = [&](std::int64_t j) { return slice(u, 0, j * n, n); };
  const Value u0 = b(0);
  std::vector<Value> grads;
  std::optional<Value> lap;
  for (std::int64_t i = 0; i < d; ++i) {
    Value up = b(1 + 2 * i), um = b(2 + 2 * i);
    grads.push_back(scale(sub(up, um), 0.5 / h));
    Value second = scale(add(sub(up, scale(u0, 2.0)), um), 1.0 / (h * h));
    lap = lap ? add(*lap, second) : second;
  }
  Value tp = b(2 * d + 1), tm = b(2 * d + 2);
  FieldDerivatives out;
  out.u = u0;
  out.grad = ad::concat(grads, 1);
  out.laplacian = *lap;
  out.u_t = scale(sub(tp, tm), 0.5 / h);
  out.u_tt = scale(add(sub(tp, scale(u0, 2.0)), tm), 1.0 / (h * h));
  return out;
}

Value PotentialBank::residual(const nn::Binding& p, int k, const FieldDerivatives& d) const {
  return op_->apply(d, wave_coefficient(p, k));
}

// ---- single points --------------------------------------------------------------

namespace {

struct Point {
  Value z, t;
};

Point point(ad::Tape& tape, const PotentialBank& bank, std::span<const double> z, double t) {
  if (static_cast<int>(z.size()) != bank.d())
    fail(ErrorKind::shape, "potentials: point has " + std::to_string(z.size()) + " coordinates, expected " +
                               std::to_string(bank.d()));
  if (!(t >= 0)) fail(ErrorKind::range, "potentials: time must be non-negative");
  return {tape.constant(Tensor({1, bank.d()}, std::vector<double>(z.begin(), z.end()))),
          tape.constant(Tensor({1, 1}, {t}))};
}

}  // namespace

double evaluate(const PotentialBank& bank, nn::ParamStore& store, int k, std::span<const double> z, double t) {
  ad::Tape tape;
  nn::Binding p(tape, store);
  auto x = point(tape, bank, z, t);
  return bank.value(p, k, x.z, x.t).item();
}

std::vector<double> velocity(const PotentialBank& bank, nn::ParamStore& store, int k, std::span<const double> z,
                             double t) {
  ad::Tape tape;
  nn::Binding p(tape, store);
  auto x = point(tape, bank, z, t);
  auto v = bank.velocity(p, k, x.z, x.t).data();
  return {v.begin(), v.end()};
}

double wave_residual(const PotentialBank& bank, nn::ParamStore& store, int k, std::span<const double> z, double t) {
  ad::Tape tape;
  nn::Binding p(tape, store);
  auto x = point(tape, bank, z, t);
  return bank.residual(p, k, bank.derivatives(p, k, x.z, x.t)).item();
}

}  // namespace pft::pot
