#include <cmath>

#include "pft/dynamics.hpp"

namespace pft::dyn {

namespace {

void guard(const Value& z, int step, double limit) {
  for (double v : z.data()) {
    if (!std::isfinite(v))
      fail(ErrorKind::numeric, "rollout: non-finite state at step " + std::to_string(step));
    if (std::abs(v) > limit)
      fail(ErrorKind::numeric, "rollout: state diverged at step " + std::to_string(step) + " (|z_i| > " +
                                   std::to_string(limit) + ")");
  }
}

}  // namespace

Trajectory rollout(const pot::PotentialBank& bank, const nn::Binding& p, int k, const Value& z0,
                   const RolloutOptions& options, std::uint64_t start_seed) {
  if (options.steps < 0) fail(ErrorKind::usage, "rollout: steps must be non-negative");
  if (options.sign != 1 && options.sign != -1) fail(ErrorKind::usage, "rollout: sign must be +1 or -1");
  if (k < 0 || k >= bank.K())
    fail(ErrorKind::range, "potential index " + std::to_string(k) + " outside [0, " + std::to_string(bank.K()) + ")");
  if (z0.rank() != 2 || z0.dim(1) != bank.d())
    fail(ErrorKind::shape, "rollout: z0 must be [n, " + std::to_string(bank.d()) + "], got " +
                               ad::to_string(z0.shape()));
  ad::Tape& tape = p.tape();
  Trajectory tr;
  tr.k = k;
  tr.sign = options.sign;
  tr.start_seed = start_seed;
  tr.states.reserve(static_cast<std::size_t>(options.steps) + 1);
  tr.states.push_back(options.track_gradients ? z0 : tape.constant(z0.tensor()));
  if (options.check_divergence) guard(z0, 0, options.divergence_limit);
  const auto n = z0.dim(0);
  for (int i = 0; i < options.steps; ++i) {
    const Value& z = tr.states.back();
    Value input = options.truncate ? stop_gradient(z) : z;
    Value t = tape.constant(Tensor::filled({n, 1}, static_cast<double>(i)));
    Value v;
    if (options.residuals) {
      auto d = bank.derivatives(p, k, input, t);
      v = d.grad;
      tr.residuals.push_back(bank.residual(p, k, d));
    } else {
      v = bank.velocity(p, k, input, t);
    }
    if (!options.track_gradients) v = tape.constant(v.tensor());
    Value next = options.sign > 0 ? add(z, v) : sub(z, v);
    if (options.check_divergence) guard(next, i + 1, options.divergence_limit);
    tr.velocities.push_back(v);
    tr.states.push_back(next);
  }
  return tr;
}

std::pair<Value, Value> pair_at(const pot::PotentialBank& bank, const nn::Binding& p, int k, int t, const Value& z0,
                                RolloutOptions options) {
  if (t < 0) fail(ErrorKind::range, "pair_at: negative timestep " + std::to_string(t));
  options.steps = t + 1;
  options.residuals = false;
  auto tr = rollout(bank, p, k, z0, options);
  return {tr.states[static_cast<std::size_t>(t)], tr.states[static_cast<std::size_t>(t) + 1]};
}

SampleDraw sample_draw(std::mt19937_64& rng, int K, int T) {
  if (K < 1) fail(ErrorKind::usage, "sample_draw: K must be at least 1");
  if (T < 2) fail(ErrorKind::usage, "sample_draw: T must be at least 2");
  std::uniform_int_distribution<int> dk(0, K - 1), dt(0, T - 2);
  SampleDraw s;
  s.k = dk(rng);
  s.t = dt(rng);
  return s;
}

Tensor sample_prior(std::mt19937_64& rng, std::int64_t n, std::int64_t d) {
  if (n < 0 || d < 1) fail(ErrorKind::usage, "sample_prior: bad shape");
  Tensor z = Tensor::zeros({n, d});
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : z.data) v = g(rng);
  return z;
}

}  // namespace pft::dyn
