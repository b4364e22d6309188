#include "pft/models.hpp"

namespace pft::models {

const char* to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::vae_decoder: return "vae_decoder";
    case GeneratorKind::linear_probe: return "linear_probe";
    case GeneratorKind::analytic_map: return "analytic_map";
  }
  return "unknown";
}

GeneratorHandle GeneratorHandle::vae_decoder(const Vae& vae, bool frozen) {
  GeneratorHandle g;
  g.kind_ = GeneratorKind::vae_decoder;
  g.frozen_ = frozen;
  g.d_ = vae.d();
  g.vae_ = &vae;
  g.prefix_ = vae.prefix();
  return g;
}

GeneratorHandle GeneratorHandle::linear_probe(nn::ParamStore& store, const std::string& name, std::int64_t m,
                                              std::int64_t d, std::mt19937_64& rng, bool frozen) {
  if (m < 1 || d < 1) fail(ErrorKind::usage, "linear probe: dimensions must be positive");
  GeneratorHandle g;
  g.kind_ = GeneratorKind::linear_probe;
  g.frozen_ = frozen;
  g.d_ = d;
  g.prefix_ = name;
  Tensor a = Tensor::zeros({m, d});
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  for (auto& v : a.data) v = n(rng);
  g.matrix_ = store.add(name, std::move(a), !frozen);
  return g;
}

GeneratorHandle GeneratorHandle::analytic_map(std::int64_t d) {
  if (d < 1) fail(ErrorKind::usage, "analytic map: dimension must be positive");
  GeneratorHandle g;
  g.kind_ = GeneratorKind::analytic_map;
  g.d_ = d;
  return g;
}

void GeneratorHandle::apply_freeze(nn::ParamStore& store) const {
  if (frozen_ && !prefix_.empty()) store.set_trainable(prefix_, false);
}

std::uint64_t GeneratorHandle::digest(const nn::ParamStore& store) const {
  return prefix_.empty() ? 0 : store.digest(prefix_);
}

Value GeneratorHandle::generate(const nn::Binding& p, const Value& z) const {
  if (z.rank() != 2 || z.dim(1) != d_)
    fail(ErrorKind::shape, "generator: latent codes must be [n," + std::to_string(d_) + "], got " +
                               ad::to_string(z.shape()));
  switch (kind_) {
    case GeneratorKind::vae_decoder: return vae_->decode(p, z);
    case GeneratorKind::linear_probe: return matmul(z, p[matrix_], false, true);
    case GeneratorKind::analytic_map: return z;
  }
  return z;
}

Value GeneratorHandle::jvp(const nn::Binding& p, const Value& z, const Value& v) const {
  if (z.shape() != v.shape())
    fail(ErrorKind::shape, "jvp: tangent " + ad::to_string(v.shape()) + " vs point " + ad::to_string(z.shape()));
  switch (kind_) {
    case GeneratorKind::vae_decoder: {
      Taylor2 out = vae_->decode(p, Taylor2{z, v, std::nullopt, 1, 1});
      return out.first ? *out.first : p.tape().constant(Tensor::zeros(out.primal.shape()));
    }
    case GeneratorKind::linear_probe: return matmul(v, p[matrix_], false, true);
    case GeneratorKind::analytic_map: return v;
  }
  return v;
}

}  // namespace pft::models
