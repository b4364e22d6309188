#include <cmath>

#include "pft/losses.hpp"

namespace pft::loss {

namespace {

// Mean over rows of the row-wise sum of squares of a [n, ...] value.
Value mean_row_sq(const Value& a) {
  const auto n = a.dim(0);
  return scale(sum(square(a)), 1.0 / static_cast<double>(n));
}

void need_rows(const Value& a, const char* what) {
  if (a.rank() < 1 || a.dim(0) < 1) fail(ErrorKind::shape, std::string(what) + ": empty batch");
}

}  // namespace

void validate(const LossWeights& w) {
  const std::pair<const char*, double> all[] = {{"w_f", w.w_f},     {"w_u", w.w_u}, {"w_jac", w.w_jac},
                                               {"w_cls", w.w_cls}, {"w_x", w.w_x}, {"w_z", w.w_z}};
  for (const auto& [name, v] : all)
    if (!std::isfinite(v) || v < 0) fail(ErrorKind::usage, std::string("loss weight ") + name + " must be finite and >= 0");
}

LossBreakdown total_loss(Mode mode, const LossWeights& weights, const LossParts& parts) {
  validate(weights);
  if (mode == Mode::frozen && (parts.l_x || parts.l_z))
    fail(ErrorKind::usage, "total_loss: L_x and L_z apply only in supervised mode");
  if (mode == Mode::supervised && (parts.l_jac || parts.l_cls))
    fail(ErrorKind::usage, "total_loss: L_J and L_k apply only in frozen mode");
  LossBreakdown out;
  std::optional<Value> total;
  auto term = [&](const std::optional<Value>& v, double w, double& field) {
    if (!v || w == 0.0) return;
    if (v->numel() != 1) fail(ErrorKind::shape, "total_loss: loss terms must be scalars, got " + ad::to_string(v->shape()));
    field = v->data()[0];
    Value weighted = w == 1.0 ? *v : scale(*v, w);
    total = total ? add(*total, weighted) : weighted;
  };
  term(parts.l_f, weights.w_f, out.l_f);
  term(parts.l_u, weights.w_u, out.l_u);
  term(parts.l_jac, weights.w_jac, out.l_jac);
  term(parts.l_cls, weights.w_cls, out.l_cls);
  term(parts.l_x, weights.w_x, out.l_x);
  term(parts.l_z, weights.w_z, out.l_z);
  if (total) {
    out.total_value = *total;
    out.total = total->data()[0];
  }
  return out;
}

Value loss_f(const std::vector<Value>& residuals) {
  if (residuals.empty()) fail(ErrorKind::usage, "loss_f: trajectory has no residuals");
  std::optional<Value> acc;
  for (const auto& f : residuals) {
    need_rows(f, "loss_f");
    Value m = mean_row_sq(f);
    acc = acc ? add(*acc, m) : m;
  }
  return scale(*acc, 1.0 / static_cast<double>(residuals.size()));
}

Value loss_f(const dyn::Trajectory& trajectory) {
  if (trajectory.residuals.size() != trajectory.velocities.size())
    fail(ErrorKind::usage, "loss_f: rollout was run without residuals");
  return loss_f(trajectory.residuals);
}

Value loss_u(const pot::PotentialBank& bank, const nn::Binding& p, int k, const Value& z0) {
  need_rows(z0, "loss_u");
  Value t0 = p.tape().constant(ad::Tensor::zeros({z0.dim(0), 1}));
  return mean_row_sq(bank.velocity(p, k, z0, t0));
}

Value loss_velocity_penalty(const dyn::Trajectory& trajectory) {
  if (trajectory.velocities.empty()) fail(ErrorKind::usage, "velocity penalty: empty trajectory");
  std::optional<Value> acc;
  for (const auto& v : trajectory.velocities) {
    Value m = mean_row_sq(v);
    acc = acc ? add(*acc, m) : m;
  }
  return scale(*acc, 1.0 / static_cast<double>(trajectory.velocities.size()));
}

Value loss_jacobian(const models::GeneratorHandle& generator, const nn::Binding& p, const Value& z, const Value& v) {
  need_rows(z, "loss_jacobian");
  return neg(mean_row_sq(generator.jvp(p, z, v)));
}

Value loss_jacobian(const models::GeneratorHandle& generator, const pot::PotentialBank& bank, const nn::Binding& p,
                    int k, const Value& z_t, int t) {
  if (t < 0) fail(ErrorKind::range, "loss_jacobian: negative timestep");
  need_rows(z_t, "loss_jacobian");
  Value tt = p.tape().constant(ad::Tensor::filled({z_t.dim(0), 1}, static_cast<double>(t)));
  return loss_jacobian(generator, p, z_t, bank.velocity(p, k, z_t, tt));
}

Value loss_classifier(const Value& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(labels.size()))
    fail(ErrorKind::shape, "loss_classifier: logits " + ad::to_string(logits.shape()) + " for " +
                               std::to_string(labels.size()) + " labels");
  const auto n = logits.dim(0), K = logits.dim(1);
  ad::Tensor onehot = ad::Tensor::zeros({n, K});
  for (std::int64_t i = 0; i < n; ++i) {
    const int k = labels[static_cast<std::size_t>(i)];
    if (k < 0 || k >= K)
      fail(ErrorKind::range, "loss_classifier: label " + std::to_string(k) + " outside [0, " + std::to_string(K) + ")");
    onehot.data[static_cast<std::size_t>(i * K + k)] = 1.0;
  }
  Value picked = sum(mul(logits, logits.tape()->constant(std::move(onehot))));
  return scale(sub(sum(logsumexp(logits)), picked), 1.0 / static_cast<double>(n));
}

Value loss_latent_match(const pot::PotentialBank& bank, const nn::Binding& p, int k, int t, const Value& z_t,
                        const Value& z_next, const Value& zhat_t) {
  if (z_t.shape() != zhat_t.shape() || z_next.shape() != z_t.shape())
    fail(ErrorKind::shape, "loss_latent_match: codes " + ad::to_string(z_t.shape()) + ", " +
                               ad::to_string(z_next.shape()) + ", " + ad::to_string(zhat_t.shape()) + " differ");
  if (t < 0) fail(ErrorKind::range, "loss_latent_match: negative timestep");
  need_rows(z_t, "loss_latent_match");
  Value tt = p.tape().constant(ad::Tensor::filled({z_t.dim(0), 1}, static_cast<double>(t)));
  Value v = bank.velocity(p, k, zhat_t, tt);
  return add(mean_row_sq(sub(z_t, zhat_t)), mean_row_sq(sub(sub(z_next, z_t), v)));
}

Value bernoulli_nll(const Value& logits, const Value& x) {
  if (logits.shape() != x.shape())
    fail(ErrorKind::shape, "bernoulli_nll: logits " + ad::to_string(logits.shape()) + " vs images " +
                               ad::to_string(x.shape()));
  for (double v : logits.data())
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "bernoulli_nll: non-finite decoder output");
  Value l = clamp(logits, -models::kLogitClamp, models::kLogitClamp);
  const auto n = l.dim(0);
  return sum_to(reshape(sub(softplus(l), mul(x, l)), {n, l.numel() / n}), {n, 1});
}

Value gaussian_kl(const Value& mu, const Value& logvar) {
  if (mu.shape() != logvar.shape() || mu.rank() != 2)
    fail(ErrorKind::shape, "gaussian_kl: mean " + ad::to_string(mu.shape()) + " vs log-variance " +
                               ad::to_string(logvar.shape()));
  Value terms = sub(add(square(mu), exp(logvar)), add_scalar(logvar, 1.0));
  return scale(sum_to(terms, {mu.dim(0), 1}), 0.5);
}

ElboTerms loss_elbo(const models::Vae& vae, const nn::Binding& p, const Value& x, const Value& zhat,
                    const models::Posterior& q) {
  need_rows(x, "loss_elbo");
  const double inv = 1.0 / static_cast<double>(x.dim(0));
  ElboTerms out;
  out.recon = scale(sum(bernoulli_nll(vae.decode_logits(p, zhat), x)), inv);
  out.kl = scale(sum(gaussian_kl(q.mu, q.logvar)), inv);
  out.loss = add(out.recon, out.kl);
  return out;
}

}  // namespace pft::loss
