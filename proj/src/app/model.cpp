#include <algorithm>

#include "pft/app.hpp"

namespace pft::app {

std::unique_ptr<Model> build_model(const Config& config, const std::string& kind) {
  if (kind != "vae" && kind != "potentials") fail(ErrorKind::format, "unknown model kind '" + kind + "'");
  config.validate();
  auto m = std::make_unique<Model>();
  m->config = config;
  m->kind = kind;
  std::mt19937_64 vae_rng(derive_seed(config.integer("train_vae.seed"), "vae-init"));
  m->vae = std::make_unique<models::Vae>(vae_config(config), m->store, vae_rng);
  if (kind == "potentials") {
    std::mt19937_64 bank_rng(derive_seed(config.seed(), "potentials-init"));
    m->bank = std::make_unique<pot::PotentialBank>(potential_config(config), m->store, bank_rng);
    if (run_mode(config) == loss::Mode::frozen) {
      const auto cc = classifier_config(config);
      std::mt19937_64 cls_rng(derive_seed(config.seed(), "classifier-init"));
      m->classifier = std::make_unique<models::IndexClassifier>(cc, m->store, cls_rng,
                                                                cc.reuse_encoder ? m->vae.get() : nullptr);
      m->store.set_trainable(m->vae->prefix(), false);
    }
  }
  return m;
}

nn::Checkpoint make_checkpoint(const Model& model, const nn::AdamState* adam) {
  nn::Checkpoint ckpt;
  ckpt.kind = model.kind;
  ckpt.config_text = model.config.dump();
  ckpt.config_digest = model.config.digest();
  ckpt.meta = model.meta;
  ckpt.meta["mode"] = model.config.text("run.mode");
  ckpt.meta["seed"] = std::to_string(model.config.seed());
  ckpt.meta["generator_digest"] = nn::hex64(model.config.generator_digest());
  nn::pack_params(ckpt, model.store, adam);
  return ckpt;
}

std::unique_ptr<Model> load_model(const std::string& path) {
  nn::Checkpoint ckpt = nn::load_checkpoint(path);
  Config config = Config::parse(ckpt.config_text);
  if (config.digest() != ckpt.config_digest)
    fail(ErrorKind::digest, "checkpoint '" + path + "': stored config digest " + nn::hex64(ckpt.config_digest) +
                                " does not match its config text (" + nn::hex64(config.digest()) + ")");
  auto m = build_model(config, ckpt.kind);
  nn::unpack_params(ckpt, m->store);
  m->meta = ckpt.meta;
  return m;
}

Tensor vae_training_images(const Config& config) {
  const int size = static_cast<int>(config.integer("models.size"));
  const int channels = static_cast<int>(config.integer("models.channels"));
  if (config.text("data.source") == "shapes") {
    std::mt19937_64 rng(derive_seed(config.integer("data.seed"), "images"));
    return data::random_images(rng, config.integer("data.train_images"), size, channels);
  }
  const auto seqs = training_sequences(config);
  const std::int64_t T = config.integer("data.T_seq");
  const std::int64_t per = static_cast<std::int64_t>(channels) * size * size;
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(seqs.size()) * T, channels, size, size});
  for (std::size_t i = 0; i < seqs.size(); ++i)
    std::copy(seqs[i].images.data.begin(), seqs[i].images.data.end(),
              out.data.begin() + static_cast<std::int64_t>(i) * T * per);
  return out;
}

namespace {

std::vector<data::TransformSequence> make_sequences(const Config& config, std::int64_t n, std::mt19937_64& rng) {
  const auto factors = factor_list(config);
  const int size = static_cast<int>(config.integer("models.size"));
  const int channels = static_cast<int>(config.integer("models.channels"));
  const int T = static_cast<int>(config.integer("data.T_seq"));
  const auto& sname = config.text("data.shape");
  const data::ShapeKind shape = sname == "ellipse"    ? data::ShapeKind::ellipse
                                : sname == "triangle" ? data::ShapeKind::triangle
                                                      : data::ShapeKind::square;
  std::vector<data::TransformSequence> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    out.push_back(data::random_sequence(rng, factors[static_cast<std::size_t>(i) % factors.size()], T, size,
                                        channels, shape));
  return out;
}

}  // namespace

// Sequence i varies factor i mod F.
std::vector<data::TransformSequence> training_sequences(const Config& config) {
  std::mt19937_64 rng(derive_seed(config.integer("data.seed"), "sequences"));
  return make_sequences(config, config.integer("data.train_sequences"), rng);
}

std::vector<data::TransformSequence> heldout_sequences(const Config& config, std::int64_t n, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "heldout-sequences"));
  return make_sequences(config, n, rng);
}

}  // namespace pft::app
