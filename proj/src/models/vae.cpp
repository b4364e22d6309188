#include "pft/models.hpp"

namespace pft::models {

namespace {

constexpr ad::ConvGeometry kDown{2, 1};

}  // namespace

Vae::Vae(const VaeConfig& config, nn::ParamStore& store, std::mt19937_64& rng, const std::string& prefix)
    : config_(config), prefix_(prefix) {
  if (config.d < 1) fail(ErrorKind::usage, "vae: latent dimension must be at least 1");
  if (config.size < 4 || config.size % 4 != 0) fail(ErrorKind::usage, "vae: image size must be a positive multiple of 4");
  if (config.channels < 1) fail(ErrorKind::usage, "vae: channels must be positive");
  const std::int64_t s4 = config.size / 4, flat = config.width2 * s4 * s4;
  enc1_ = nn::Conv2d::create(store, prefix + "enc1", config.channels, config.width1, 3, kDown, rng);
  enc2_ = nn::Conv2d::create(store, prefix + "enc2", config.width1, config.width2, 3, kDown, rng);
  enc_head_ = nn::Linear::create(store, prefix + "enc_head", flat, 2 * config.d, rng);
  dec_in_ = nn::Linear::create(store, prefix + "dec_in", config.d, flat, rng);
  dec1_ = nn::ConvTranspose2d::create(store, prefix + "dec1", config.width2, config.width1, 4, kDown, rng);
  dec2_ = nn::ConvTranspose2d::create(store, prefix + "dec2", config.width1, config.channels, 4, kDown, rng);
}

std::int64_t Vae::pixels() const {
  return static_cast<std::int64_t>(config_.channels) * config_.size * config_.size;
}

void Vae::check_images(const Value& x) const {
  const Shape want{x.rank() > 0 ? x.dim(0) : 0, config_.channels, config_.size, config_.size};
  if (x.rank() != 4 || x.shape() != want)
    fail(ErrorKind::shape, "vae: images must be [n," + std::to_string(config_.channels) + "," +
                               std::to_string(config_.size) + "," + std::to_string(config_.size) + "], got " +
                               ad::to_string(x.shape()));
}

void Vae::check_latent(const Value& z) const {
  if (z.rank() != 2 || z.dim(1) != config_.d)
    fail(ErrorKind::shape, "vae: latent codes must be [n," + std::to_string(config_.d) + "], got " +
                               ad::to_string(z.shape()));
}

Posterior Vae::encode(const nn::Binding& p, const Value& x) const {
  check_images(x);
  const auto n = x.dim(0);
  Value h = relu(enc1_(p, x));
  h = relu(enc2_(p, h));
  Value out = enc_head_(p, reshape(h, {n, h.numel() / n}));
  return {slice(out, 1, 0, config_.d), clamp(slice(out, 1, config_.d, config_.d), kLogVarMin, kLogVarMax)};
}

Value Vae::reparameterize(const Posterior& q, const Tensor& eps) {
  if (eps.shape != q.mu.shape())
    fail(ErrorKind::shape, "reparameterize: noise " + ad::to_string(eps.shape) + " vs mean " +
                               ad::to_string(q.mu.shape()));
  Value sigma = exp(scale(q.logvar, 0.5));
  return add(q.mu, mul(sigma, q.mu.tape()->constant(eps)));
}

Value Vae::decode_logits(const nn::Binding& p, const Value& z) const {
  check_latent(z);
  const std::int64_t s4 = config_.size / 4;
  Value h = relu(dec_in_(p, z));
  h = reshape(h, {z.dim(0), config_.width2, s4, s4});
  h = relu(dec1_(p, h));
  return clamp(dec2_(p, h), -kLogitClamp, kLogitClamp);
}

Value Vae::decode(const nn::Binding& p, const Value& z) const { return sigmoid(decode_logits(p, z)); }

Taylor2 Vae::decode(const nn::Binding& p, const Taylor2& z) const {
  check_latent(z.primal);
  const std::int64_t s4 = config_.size / 4;
  Taylor2 h = relu(dec_in_(p, z));
  h = ad::reshape_rows(h, {config_.width2, s4, s4});
  h = relu(dec1_(p, h));
  return sigmoid(dec2_(p, h));
}

// ---- classifier ---------------------------------------------------------------

IndexClassifier::IndexClassifier(const ClassifierConfig& config, nn::ParamStore& store, std::mt19937_64& rng,
                                 const Vae* encoder, const std::string& prefix)
    : config_(config), prefix_(prefix), encoder_(encoder) {
  if (config.K < 1) fail(ErrorKind::usage, "classifier: K must be at least 1");
  if (config.reuse_encoder) {
    if (!encoder) fail(ErrorKind::usage, "classifier: encoder reuse needs a VAE");
    head_ = nn::Linear::create(store, prefix + "head", 3 * encoder->d(), config.K, rng);
    return;
  }
  const int depth = static_cast<int>(config.widths.size());
  if (depth < 1) fail(ErrorKind::usage, "classifier: needs at least one conv layer");
  if (config.size % (1 << depth) != 0)
    fail(ErrorKind::usage, "classifier: image size must be divisible by 2^" + std::to_string(depth));
  std::int64_t in = 2 * config.channels;
  for (int i = 0; i < depth; ++i) {
    const std::string name = prefix + "conv" + std::to_string(i);
    convs_.push_back(nn::Conv2d::create(store, name, in, config.widths[static_cast<std::size_t>(i)], 3, kDown, rng));
    norms_.push_back(nn::BatchNorm2d::create(store, prefix + "bn" + std::to_string(i),
                                             config.widths[static_cast<std::size_t>(i)]));
    in = config.widths[static_cast<std::size_t>(i)];
  }
  const std::int64_t s = config.size >> depth;
  head_ = nn::Linear::create(store, prefix + "head", in * s * s, config.K, rng);
}

Value IndexClassifier::logits(const nn::Binding& p, const Value& x_t, const Value& x_next, bool training) const {
  if (x_t.shape() != x_next.shape())
    fail(ErrorKind::shape, "classifier: pair shapes differ: " + ad::to_string(x_t.shape()) + " vs " +
                               ad::to_string(x_next.shape()));
  const Shape want{x_t.rank() > 0 ? x_t.dim(0) : 0, config_.channels, config_.size, config_.size};
  if (x_t.rank() != 4 || x_t.shape() != want)
    fail(ErrorKind::shape, "classifier: images must be [n," + std::to_string(config_.channels) + "," +
                               std::to_string(config_.size) + "," + std::to_string(config_.size) + "], got " +
                               ad::to_string(x_t.shape()));
  if (config_.reuse_encoder) {
    Value a = encoder_->encode(p, x_t).mu, b = encoder_->encode(p, x_next).mu;
    return head_(p, ad::concat({a, b, sub(b, a)}, 1));
  }
  Value h = ad::concat({x_t, x_next}, 1);
  for (std::size_t i = 0; i < convs_.size(); ++i) h = relu(norms_[i](p, convs_[i](p, h), training));
  const auto n = h.dim(0);
  return head_(p, reshape(h, {n, h.numel() / n}));
}

}  // namespace pft::models
