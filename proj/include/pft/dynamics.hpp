#pragma once

// Traversal z_{i+1} = z_i + sign * grad_z u^k(z_i, i) and training-time draws.

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "pft/potentials.hpp"

namespace pft::dyn {

using ad::Tensor;
using ad::Value;

// Rows of every state are independent samples that share k, sign and step.
struct Trajectory {
  int k = 0;
  int sign = 1;
  std::uint64_t start_seed = 0;
  std::vector<Value> states;      // steps + 1 entries, [n, d]
  std::vector<Value> velocities;  // steps entries, grad u at (states[i], i)
  std::vector<Value> residuals;   // residual at (states[i], i) when requested, [n, 1]
};

struct RolloutOptions {
  int steps = 0;
  int sign = 1;
  bool track_gradients = true;  // false detaches every state and velocity
  bool truncate = false;        // stop gradients through earlier states
  bool residuals = false;       // also evaluate the PDE residual at each visited state
  double divergence_limit = 1e3;
  bool check_divergence = true;  // false leaves divergent rows for the caller to screen
};

// Raises a numeric error naming the step when a state turns non-finite or a
// coordinate exceeds the divergence limit.
Trajectory rollout(const pot::PotentialBank& bank, const nn::Binding& p, int k, const Value& z0,
                   const RolloutOptions& options, std::uint64_t start_seed = 0);

// (states[t], states[t + 1]) of a t + 1 step rollout.
std::pair<Value, Value> pair_at(const pot::PotentialBank& bank, const nn::Binding& p, int k, int t, const Value& z0,
                                RolloutOptions options = {});

struct SampleDraw {
  int k = 0;
  int t = 0;
};

// k uniform on {0..K-1}, t uniform on {0..T-2}.
SampleDraw sample_draw(std::mt19937_64& rng, int K, int T);

// Standard normal latent codes, [n, d] row-major.
Tensor sample_prior(std::mt19937_64& rng, std::int64_t n, std::int64_t d);

}  // namespace pft::dyn
