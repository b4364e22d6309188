#pragma once

// Training objectives. Batched inputs are reduced by a mean over rows so a
// batch of one gives the per-sample value.

#include <optional>
#include <vector>

#include "pft/dynamics.hpp"
#include "pft/models.hpp"

namespace pft::loss {

using ad::Value;

enum class Mode { frozen, supervised };

struct LossWeights {
  double w_f = 1.0;
  double w_u = 1.0;
  double w_jac = 1.0;
  double w_cls = 1.0;
  double w_x = 1.0;
  double w_z = 1.0;
};

// Unweighted terms; a missing term contributes nothing.
struct LossParts {
  std::optional<Value> l_f, l_u, l_jac, l_cls, l_x, l_z;
};

struct LossBreakdown {
  double l_f = 0, l_u = 0, l_jac = 0, l_cls = 0, l_x = 0, l_z = 0;
  double total = 0;
  Value total_value;  // differentiable total
};

void validate(const LossWeights& w);

// Weighted sum of the terms enabled in `mode`. Terms with weight 0 are not
// added at all. Supervised-only parts in frozen mode (and vice versa) are an
// error.
LossBreakdown total_loss(Mode mode, const LossWeights& weights, const LossParts& parts);

// Mean over t and rows of f(z_t, t)^2 from residuals [n, 1] per step.
Value loss_f(const std::vector<Value>& residuals);
Value loss_f(const dyn::Trajectory& trajectory);

// Mean over rows of ||grad_z u^k(z0, 0)||^2.
Value loss_u(const pot::PotentialBank& bank, const nn::Binding& p, int k, const Value& z0);

// Direct velocity penalty mean ||v||^2 over the trajectory (ablation stand-in for L_f).
Value loss_velocity_penalty(const dyn::Trajectory& trajectory);

// -mean over rows of ||(dG/dz) v||^2.
Value loss_jacobian(const models::GeneratorHandle& generator, const nn::Binding& p, const Value& z,
                    const Value& v);
// Same with v = grad_z u^k(z_t, t).
Value loss_jacobian(const models::GeneratorHandle& generator, const pot::PotentialBank& bank,
                    const nn::Binding& p, int k, const Value& z_t, int t);

// Mean cross-entropy of logits [n, K] against labels.
Value loss_classifier(const Value& logits, const std::vector<int>& labels);

// Mean over rows of ||z_t - zhat_t||^2 + ||z_next - z_t - grad u^k(zhat_t, t)||^2.
Value loss_latent_match(const pot::PotentialBank& bank, const nn::Binding& p, int k, int t, const Value& z_t,
                        const Value& z_next, const Value& zhat_t);

// Negative Bernoulli log-likelihood summed over pixels, per row [n, 1].
Value bernoulli_nll(const Value& logits, const Value& x);
// KL(N(mu, exp(logvar)) || N(0, I)) summed over latent axes, per row [n, 1].
Value gaussian_kl(const Value& mu, const Value& logvar);

struct ElboTerms {
  Value loss;   // mean over rows of recon + kl
  Value recon;  // mean over rows
  Value kl;     // mean over rows
};

// Negative ELBO of images x [n, C, H, W] whose code zhat is decoded, with the
// posterior q(z | x) given by (mu, logvar).
ElboTerms loss_elbo(const models::Vae& vae, const nn::Binding& p, const Value& x, const Value& zhat,
                    const models::Posterior& q);

}  // namespace pft::loss
