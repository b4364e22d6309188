#include <cmath>
#include <cstring>

#include "pft/nn.hpp"

namespace pft::nn {

// ---- ParamStore -------------------------------------------------------------

std::size_t ParamStore::add(std::string name, Tensor tensor, bool trainable) {
  if (name.empty()) fail(ErrorKind::usage, "ParamStore: empty parameter name");
  if (index_.count(name)) fail(ErrorKind::usage, "ParamStore: duplicate parameter '" + name + "'");
  const std::size_t i = entries_.size();
  index_.emplace(name, i);
  entries_.push_back(ParamEntry{std::move(name), std::move(tensor), trainable});
  return i;
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::usage, "ParamStore: no parameter '" + std::string(name) + "'");
  return it->second;
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.data.size();
  return n;
}

void ParamStore::set_trainable(std::string_view prefix, bool trainable) {
  for (auto& e : entries_)
    if (std::string_view(e.name).substr(0, prefix.size()) == prefix) e.trainable = trainable;
}

std::uint64_t ParamStore::digest(std::string_view prefix) const {
  std::uint64_t h = fnv1a({});
  for (const auto& e : entries_) {
    if (std::string_view(e.name).substr(0, prefix.size()) != prefix) continue;
    h = fnv1a(e.name, h);
    h = fnv1a(ad::to_string(e.tensor.shape), h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(e.tensor.data.data()),
                               e.tensor.data.size() * sizeof(double)),
              h);
  }
  return h;
}

Binding::Binding(ad::Tape& tape, ParamStore& store, bool update_buffers)
    : tape_(&tape), store_(&store), update_buffers_(update_buffers) {
  values_.reserve(store.size());
  for (const auto& e : store.entries()) values_.push_back(tape.leaf(e.tensor, e.trainable));
}

std::vector<std::vector<double>> Binding::gradients() const {
  std::vector<std::vector<double>> g(values_.size());
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (store_->entry(i).trainable) g[i] = tape_->adjoint(values_[i]);
  return g;
}

// ---- layers -----------------------------------------------------------------

namespace {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.data) v = u(rng);
  return t;
}

void require_positive(std::int64_t v, const std::string& what) {
  if (v <= 0) fail(ErrorKind::usage, what + " must be positive, got " + std::to_string(v));
}

Value channel_bias(const Value& b) { return reshape(b, {1, b.dim(0), 1, 1}); }

}  // namespace

Linear Linear::create(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                      std::mt19937_64& rng, Init init) {
  require_positive(in, name + ": input size");
  require_positive(out, name + ": output size");
  Linear l;
  l.in = in;
  l.out = out;
  Tensor w = init == Init::zero ? Tensor::zeros({out, in})
                                : uniform_tensor({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  l.w = store.add(name + ".weight", std::move(w));
  l.b = store.add(name + ".bias", Tensor::zeros({out}));
  return l;
}

Value Linear::operator()(const Binding& p, const Value& x) const {
  return add(matmul(x, p[w], false, true), p[b]);
}

Taylor2 Linear::operator()(const Binding& p, const Taylor2& x) const {
  return add_bias(matmul(x, p[w], true), p[b]);
}

Conv2d Conv2d::create(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                      std::int64_t kernel, ad::ConvGeometry geom, std::mt19937_64& rng) {
  require_positive(in, name + ": input channels");
  require_positive(out, name + ": output channels");
  require_positive(kernel, name + ": kernel");
  Conv2d c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  c.geom = geom;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  c.w = store.add(name + ".weight", uniform_tensor({out, in, kernel, kernel}, bound, rng));
  c.b = store.add(name + ".bias", Tensor::zeros({out}));
  return c;
}

Value Conv2d::operator()(const Binding& p, const Value& x) const {
  return add(conv2d(x, p[w], geom), channel_bias(p[b]));
}

Taylor2 Conv2d::operator()(const Binding& p, const Taylor2& x) const {
  Taylor2 y{operator()(p, x.primal), std::nullopt, std::nullopt, x.blocks, x.order};
  if (x.first) y.first = conv2d(*x.first, p[w], geom);
  if (x.second) y.second = conv2d(*x.second, p[w], geom);
  return y;
}

ConvTranspose2d ConvTranspose2d::create(ParamStore& store, const std::string& name, std::int64_t in,
                                        std::int64_t out, std::int64_t kernel, ad::ConvGeometry geom,
                                        std::mt19937_64& rng) {
  require_positive(in, name + ": input channels");
  require_positive(out, name + ": output channels");
  require_positive(kernel, name + ": kernel");
  ConvTranspose2d c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  c.geom = geom;
  // each output pixel sees in * (kernel / stride)^2 taps
  const double taps = static_cast<double>(in * kernel * kernel) / static_cast<double>(geom.stride * geom.stride);
  c.w = store.add(name + ".weight", uniform_tensor({in, out, kernel, kernel}, 1.0 / std::sqrt(taps), rng));
  c.b = store.add(name + ".bias", Tensor::zeros({out}));
  return c;
}

Value ConvTranspose2d::operator()(const Binding& p, const Value& x) const {
  if (x.rank() != 4) fail(ErrorKind::shape, "conv_transpose2d: expected [N,C,H,W], got " + ad::to_string(x.shape()));
  const auto h = out_size(x.dim(2)), wd = out_size(x.dim(3));
  return add(conv2d_input_grad(x, p[w], h, wd, geom), channel_bias(p[b]));
}

Taylor2 ConvTranspose2d::operator()(const Binding& p, const Taylor2& x) const {
  const auto h = out_size(x.primal.dim(2)), wd = out_size(x.primal.dim(3));
  Taylor2 y{operator()(p, x.primal), std::nullopt, std::nullopt, x.blocks, x.order};
  if (x.first) y.first = conv2d_input_grad(*x.first, p[w], h, wd, geom);
  if (x.second) y.second = conv2d_input_grad(*x.second, p[w], h, wd, geom);
  return y;
}

BatchNorm2d BatchNorm2d::create(ParamStore& store, const std::string& name, std::int64_t channels) {
  require_positive(channels, name + ": channels");
  BatchNorm2d bn;
  bn.channels = channels;
  bn.gamma = store.add(name + ".gamma", Tensor::filled({channels}, 1.0));
  bn.beta = store.add(name + ".beta", Tensor::zeros({channels}));
  bn.running_mean = store.add(name + ".running_mean", Tensor::zeros({channels}), false);
  bn.running_var = store.add(name + ".running_var", Tensor::filled({channels}, 1.0), false);
  return bn;
}

Value BatchNorm2d::operator()(const Binding& p, const Value& x, bool training) const {
  if (x.rank() != 4 || x.dim(1) != channels)
    fail(ErrorKind::shape, "batch_norm: expected [N," + std::to_string(channels) + ",H,W], got " +
                               ad::to_string(x.shape()));
  const Shape cs{1, channels, 1, 1};
  auto per_channel = [&](std::size_t i) { return reshape(p[i], cs); };
  Value mean, var;
  if (training) {
    const double count = static_cast<double>(x.dim(0) * x.dim(2) * x.dim(3));
    if (count < 2) fail(ErrorKind::shape, "batch_norm: training needs more than one value per channel");
    mean = scale(sum_to(x, cs), 1.0 / count);
    Value centered = sub(x, mean);
    var = scale(sum_to(square(centered), cs), 1.0 / count);
    if (p.update_buffers()) {
      auto& rm = p.store().entry(running_mean).tensor.data;
      auto& rv = p.store().entry(running_var).tensor.data;
      const double unbias = count / (count - 1);
      for (std::int64_t c = 0; c < channels; ++c) {
        const auto i = static_cast<std::size_t>(c);
        rm[i] = (1 - momentum) * rm[i] + momentum * mean.data()[i];
        rv[i] = (1 - momentum) * rv[i] + momentum * var.data()[i] * unbias;
      }
    }
    Value inv = div(p.tape().scalar(1.0), sqrt(add_scalar(var, eps)));
    return add(mul(mul(centered, inv), per_channel(gamma)), per_channel(beta));
  }
  mean = per_channel(running_mean);
  var = per_channel(running_var);
  Value inv = div(p.tape().scalar(1.0), sqrt(add_scalar(var, eps)));
  return add(mul(mul(sub(x, mean), inv), per_channel(gamma)), per_channel(beta));
}

// ---- time embedding -----------------------------------------------------------

SinusoidalEmbedding::SinusoidalEmbedding(std::int64_t dim, double base) : dim_(dim), base_(base) {
  if (dim <= 0 || dim % 2 != 0)
    fail(ErrorKind::usage, "time embedding dim must be even and positive, got " + std::to_string(dim));
  if (!(base > 0)) fail(ErrorKind::usage, "time embedding base must be positive");
  for (std::int64_t i = 0; i < dim / 2; ++i)
    freq_.push_back(std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dim)));
}

std::vector<double> SinusoidalEmbedding::embed(std::int64_t t) const {
  if (t < 0) fail(ErrorKind::range, "time embedding: negative timestep " + std::to_string(t));
  return embed(static_cast<double>(t));
}

std::vector<double> SinusoidalEmbedding::embed(double t) const {
  if (!(t >= 0)) fail(ErrorKind::range, "time embedding: negative or non-finite time");
  std::vector<double> e(static_cast<std::size_t>(dim_));
  for (std::size_t i = 0; i < freq_.size(); ++i) {
    e[2 * i] = std::sin(t * freq_[i]);
    e[2 * i + 1] = std::cos(t * freq_[i]);
  }
  return e;
}

Value SinusoidalEmbedding::operator()(const Value& t) const {
  if (t.rank() != 2 || t.dim(1) != 1) fail(ErrorKind::shape, "time embedding: t must be [n,1], got " + ad::to_string(t.shape()));
  const auto n = t.dim(0), h = dim_ / 2;
  Value f = t.tape()->constant(Tensor({1, h}, freq_));
  Value arg = matmul(t, f);
  Value s = reshape(sin(arg), {n, h, 1}), c = reshape(cos(arg), {n, h, 1});
  return ad::reshape(ad::concat({s, c}, 2), {n, dim_});
}

Taylor2 SinusoidalEmbedding::operator()(const Taylor2& t) const {
  if (t.primal.rank() != 2 || t.primal.dim(1) != 1)
    fail(ErrorKind::shape, "time embedding: t must be [n,1], got " + ad::to_string(t.primal.shape()));
  const auto h = dim_ / 2;
  Value f = t.primal.tape()->constant(Tensor({1, h}, freq_));
  Taylor2 arg = matmul(t, f);
  Taylor2 s = reshape_rows(sin(arg), {h, 1}), c = reshape_rows(cos(arg), {h, 1});
  return ad::reshape_rows(ad::concat(std::vector<Taylor2>{s, c}, 2), {dim_});
}

}  // namespace pft::nn
