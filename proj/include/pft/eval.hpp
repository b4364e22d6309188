#pragma once

// Metrics over trained models and artifact writers.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pft/data.hpp"

namespace pft::eval {

using ad::Tensor;
using ad::Value;

struct VpProtocol {
  int epochs = 60;
  double lr = 0.005;
  std::int64_t batch = 32;
  std::uint64_t seed = 0;
  std::vector<int> widths{8, 16, 16, 32};
};

// Trains a fresh pair classifier on the train split and returns its test
// accuracy in percent. The probe never sees a test index.
double vp_score(const data::VpPairDataset& dataset, const VpProtocol& protocol);

enum class EquivarianceMode { learned, vanilla };

struct EquivarianceOptions {
  EquivarianceMode mode = EquivarianceMode::learned;
  // Velocities all taken at z0 (z0 + sum_i grad u(z0, i)) instead of the
  // state-dependent rollout.
  bool cumulative = false;
};

struct EquivarianceReport {
  double mean = 0;                          // over sequences
  std::map<std::string, double> per_factor;  // factor name -> mean
};

// sum_{t >= 1} sum_pixels |x_t - decode(zhat_t)| with z0 the posterior mean of
// x_0 and zhat_t the traversal of potential factor_to_k[factor] (zhat_t = z0
// in vanilla mode), averaged over sequences.
EquivarianceReport equivariance_error(const models::Vae& vae, const pot::PotentialBank& bank, nn::ParamStore& store,
                                      const std::vector<data::TransformSequence>& sequences,
                                      const std::map<data::Factor, int>& factor_to_k,
                                      const EquivarianceOptions& options = {});

// Importance-weighted bound log (1/n) sum_i p(x|z_i) p(z_i) / q(z_i|x) with
// z_i ~ q(z|x), averaged over images [N, C, H, W]. Nats per image.
double estimate_loglik(const models::Vae& vae, nn::ParamStore& store, const Tensor& images, int n_importance,
                       std::uint64_t seed);

struct ResidualSummary {
  double mean_abs_residual = 0;   // over probes and steps
  double mean_velocity0 = 0;      // mean ||grad u(z0, 0)||
  double median_velocity0 = 0;
  std::vector<double> norm_profile;  // mean ||z_t|| for t = 0..steps
  std::int64_t probes = 0;
  std::int64_t divergent = 0;  // probes excluded from the averages
};

// Monte Carlo summary over n_probes prior draws per potential rolled out `steps` steps.
ResidualSummary residual_diagnostics(const pot::PotentialBank& bank, nn::ParamStore& store, std::int64_t n_probes,
                                     int steps, std::mt19937_64& rng);

// Accuracy (percent) of a trained pair classifier on fresh generated pairs
// (x_t, x_{t+1}) with k uniform on 0..K-1 and t uniform on 0..T-2.
double classifier_accuracy(const pot::PotentialBank& bank, const models::IndexClassifier& classifier,
                           const models::GeneratorHandle& generator, nn::ParamStore& store, std::int64_t n, int T,
                           std::mt19937_64& rng);

// ---- artifacts ----------------------------------------------------------------------

// images [rows * cols, C, H, W] with C in {1, 3}, values in [0, 1] (clamped).
// Writes binary PPM (P6, maxval 255, no comments).
void emit_grid(const Tensor& images, int rows, int cols, const std::string& path);
// [3, H, W] in [0, 1].
Tensor read_ppm(const std::string& path);

struct MetricsReport {
  std::map<std::string, double> scalars;
  std::map<std::string, std::string> strings;
  std::uint64_t config_digest = 0;
  std::uint64_t seed = 0;
};

// Flat JSON object, keys sorted, numbers with 17 significant digits.
std::string metrics_json(const MetricsReport& report);
void write_metrics(const MetricsReport& report, const std::string& path);

// Atomic write via a temporary file; creates parent directories.
void write_file(const std::string& path, const std::string& bytes);

}  // namespace pft::eval
