#pragma once

// Toy generative model (convolutional VAE), the pair classifier that
// identifies which potential produced an image pair, and a uniform handle
// over the generators potentials can be trained against.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pft/nn.hpp"

namespace pft::models {

using ad::Shape;
using ad::Taylor2;
using ad::Tensor;
using ad::Value;

// Logits are clamped to +-log(1e6 - 1) so probabilities stay in [1e-6, 1 - 1e-6].
inline constexpr double kLogitClamp = 13.815509557963773;
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

struct VaeConfig {
  int d = 8;
  int size = 32;  // square images, multiple of 4
  int channels = 1;
  int width1 = 16;
  int width2 = 32;
};

struct Posterior {
  Value mu;      // [n, d]
  Value logvar;  // [n, d], clamped
};

// Encoder: conv3/s2 -> relu -> conv3/s2 -> relu -> linear to (mu, logvar).
// Decoder: linear -> relu -> convT4/s2 -> relu -> convT4/s2 to Bernoulli logits.
class Vae {
 public:
  Vae(const VaeConfig& config, nn::ParamStore& store, std::mt19937_64& rng, const std::string& prefix = "vae/");

  const VaeConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }
  int d() const { return config_.d; }
  Shape image_shape() const { return {config_.channels, config_.size, config_.size}; }
  std::int64_t pixels() const;

  // x [n, C, H, W] in [0, 1].
  Posterior encode(const nn::Binding& p, const Value& x) const;
  // mu + exp(logvar / 2) * eps, eps [n, d].
  static Value reparameterize(const Posterior& q, const Tensor& eps);

  // z [n, d] -> clamped logits [n, C, H, W].
  Value decode_logits(const nn::Binding& p, const Value& z) const;
  Value decode(const nn::Binding& p, const Value& z) const;  // probabilities
  // Probabilities with Taylor coefficients (used for Jacobian-vector products).
  Taylor2 decode(const nn::Binding& p, const Taylor2& z) const;

 private:
  void check_images(const Value& x) const;
  void check_latent(const Value& z) const;

  VaeConfig config_;
  std::string prefix_;
  nn::Conv2d enc1_, enc2_;
  nn::Linear enc_head_;
  nn::Linear dec_in_;
  nn::ConvTranspose2d dec1_, dec2_;
};

struct ClassifierConfig {
  int K = 4;
  int channels = 1;  // per image; the input pair has 2 * channels
  int size = 32;     // multiple of 16
  std::vector<int> widths{8, 16, 16, 32};
  bool reuse_encoder = false;  // linear head on VAE posterior means instead
};

// Predicts the potential index from an image pair concatenated along channels.
class IndexClassifier {
 public:
  IndexClassifier(const ClassifierConfig& config, nn::ParamStore& store, std::mt19937_64& rng,
                  const Vae* encoder = nullptr, const std::string& prefix = "classifier/");

  const ClassifierConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }

  // x_t, x_next [n, C, H, W] -> logits [n, K]. Training mode uses batch
  // statistics and refreshes the running ones.
  Value logits(const nn::Binding& p, const Value& x_t, const Value& x_next, bool training) const;

 private:
  ClassifierConfig config_;
  std::string prefix_;
  const Vae* encoder_ = nullptr;
  std::vector<nn::Conv2d> convs_;
  std::vector<nn::BatchNorm2d> norms_;
  nn::Linear head_;
};

enum class GeneratorKind { vae_decoder, linear_probe, analytic_map };

const char* to_string(GeneratorKind kind);

// Generator G: Z -> X the potentials are trained against.
class GeneratorHandle {
 public:
  static GeneratorHandle vae_decoder(const Vae& vae, bool frozen = true);
  // G(z) = z A^T with A [m, d] stored under `name`.
  static GeneratorHandle linear_probe(nn::ParamStore& store, const std::string& name, std::int64_t m,
                                      std::int64_t d, std::mt19937_64& rng, bool frozen = true);
  static GeneratorHandle analytic_map(std::int64_t d);  // identity

  GeneratorKind kind() const { return kind_; }
  bool frozen() const { return frozen_; }
  std::int64_t d() const { return d_; }

  // Marks the generator's parameters non-trainable when frozen.
  void apply_freeze(nn::ParamStore& store) const;
  // Digest of the generator's parameters (0 for parameter-free maps).
  std::uint64_t digest(const nn::ParamStore& store) const;

  Value generate(const nn::Binding& p, const Value& z) const;
  // (dG/dz) v by one first-order Taylor pass; same shape as generate().
  Value jvp(const nn::Binding& p, const Value& z, const Value& v) const;

 private:
  GeneratorKind kind_ = GeneratorKind::analytic_map;
  bool frozen_ = true;
  std::int64_t d_ = 0;
  const Vae* vae_ = nullptr;
  std::string prefix_;
  std::size_t matrix_ = 0;
};

struct VaeTrainConfig {
  std::int64_t iterations = 0;
  std::int64_t batch = 16;
  double lr = 5e-4;
  double clip = 5.0;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct VaeTrainStep {
  std::int64_t step = 0;
  double loss = 0;  // batch-mean negative ELBO
  double recon = 0;
  double kl = 0;
};

struct VaeTrainReport {
  std::vector<double> epoch_mean_loss;
  std::int64_t steps = 0;
};

// Plain ELBO training on images [N, C, H, W]; epochs are shuffled passes.
// A non-finite loss raises a numeric error carrying the step index.
VaeTrainReport train_vae_baseline(const Vae& vae, nn::ParamStore& store, nn::AdamState& adam, const Tensor& images,
                                  const VaeTrainConfig& config,
                                  const std::function<void(const VaeTrainStep&)>& on_step = {});

}  // namespace pft::models
