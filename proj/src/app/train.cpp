#include <cmath>
#include <numeric>
#include <sstream>

#include "common.hpp"

namespace pft::app {

using ad::Shape;
namespace fs = std::filesystem;

namespace {

fs::path output_dir(const Config& config) {
  fs::path dir = config.text("run.output_dir");
  fs::create_directories(dir);
  return dir;
}

std::string format_losses(const loss::LossBreakdown& b) {
  std::ostringstream s;
  s.precision(6);
  s << "total=" << b.total << " l_f=" << b.l_f << " l_u=" << b.l_u << " l_jac=" << b.l_jac << " l_cls=" << b.l_cls
    << " l_x=" << b.l_x << " l_z=" << b.l_z;
  return s.str();
}

void accumulate(loss::LossBreakdown& into, const loss::LossBreakdown& b, double w) {
  into.l_f += w * b.l_f;
  into.l_u += w * b.l_u;
  into.l_jac += w * b.l_jac;
  into.l_cls += w * b.l_cls;
  into.l_x += w * b.l_x;
  into.l_z += w * b.l_z;
  into.total += w * b.total;
}

void add_to(std::optional<Value>& acc, const Value& v) { acc = acc ? add(*acc, v) : v; }

// Rows of x [N, ...] picked by `rows`.
Tensor rows_of(const Tensor& x, const std::vector<std::int64_t>& rows) { return data::take_rows(x, rows); }

// Tensors [n_i, ...] with equal trailing shape, stacked along rows.
Tensor concat_rows(std::initializer_list<const Tensor*> parts) {
  Shape shape = (*parts.begin())->shape;
  shape[0] = 0;
  for (const Tensor* t : parts) shape[0] += t->shape[0];
  Tensor out = Tensor::zeros(shape);
  auto it = out.data.begin();
  for (const Tensor* t : parts) it = std::copy(t->data.begin(), t->data.end(), it);
  return out;
}

// Row `frame` of every listed sequence, stacked.
Tensor frames(const std::vector<data::TransformSequence>& seqs, const std::vector<std::int64_t>& which, int frame) {
  const Tensor& first = seqs.at(static_cast<std::size_t>(which.at(0))).images;
  const std::int64_t per = first.size() / first.shape[0];
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(which.size()), first.shape[1], first.shape[2], first.shape[3]});
  for (std::size_t i = 0; i < which.size(); ++i) {
    const Tensor& img = seqs[static_cast<std::size_t>(which[i])].images;
    std::copy_n(img.data.begin() + frame * per, per, out.data.begin() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

struct Batch {
  int t = 0;
  std::vector<int> k;                // per row
  Tensor z0;                         // frozen: prior draws [B, d]
  std::vector<std::int64_t> seq;     // supervised: sequence per row
  Tensor eps[3];                     // supervised: noise [B, d] for frames 0, t, t + 1
};

struct ShardOut {
  std::vector<std::vector<double>> grads;
  loss::LossBreakdown losses;
};

struct Trainer {
  const Config& config;
  Model& model;
  loss::Mode mode;
  loss::LossWeights weights;
  models::GeneratorHandle generator;
  std::vector<data::TransformSequence> sequences;
  std::vector<std::vector<std::int64_t>> by_factor;  // sequence indices per potential
  dyn::RolloutOptions base;
  bool use_f, use_penalty, use_u, use_jac, use_cls, use_x, use_z;
  double lambda;
  int T;  // horizon of t draws
  int K;
  std::int64_t d;

  Trainer(const Config& c, Model& m)
      : config(c),
        model(m),
        mode(run_mode(c)),
        weights(loss_weights(c)),
        generator(models::GeneratorHandle::vae_decoder(*m.vae, mode == loss::Mode::frozen)) {
    const bool penalty = c.flag("losses.velocity_penalty");
    use_f = weights.w_f > 0 && !penalty;
    use_penalty = weights.w_f > 0 && penalty;
    use_u = weights.w_u > 0;
    const bool frozen = mode == loss::Mode::frozen;
    use_jac = frozen && weights.w_jac > 0;
    use_cls = frozen && weights.w_cls > 0;
    use_x = !frozen && weights.w_x > 0;
    use_z = !frozen && weights.w_z > 0;
    if (!(use_f || use_penalty || use_u || use_jac || use_cls || use_x || use_z))
      fail(ErrorKind::usage, "config: every loss term of this mode is disabled or has weight 0");
    lambda = c.real("losses.penalty_lambda");
    K = m.bank->K();
    d = m.bank->d();
    base.truncate = c.flag("dynamics.truncate");
    base.divergence_limit = c.real("dynamics.divergence_limit");
    if (frozen) {
      T = static_cast<int>(c.integer("dynamics.T"));
    } else {
      T = static_cast<int>(c.integer("data.T_seq"));
      sequences = training_sequences(c);
      by_factor.resize(static_cast<std::size_t>(K));
      for (std::size_t i = 0; i < sequences.size(); ++i) by_factor[i % static_cast<std::size_t>(K)].push_back(
          static_cast<std::int64_t>(i));
      for (int k = 0; k < K; ++k)
        if (by_factor[static_cast<std::size_t>(k)].empty())
          fail(ErrorKind::usage, "config: data.train_sequences leaves factor " + std::to_string(k) + " without data");
    }
  }

  Batch draw(std::mt19937_64& rng, std::int64_t B) const {
    Batch b;
    b.t = dyn::sample_draw(rng, K, T).t;
    std::uniform_int_distribution<int> pick(0, K - 1);
    for (std::int64_t i = 0; i < B; ++i) b.k.push_back(pick(rng));
    if (mode == loss::Mode::frozen) {
      b.z0 = dyn::sample_prior(rng, B, d);
    } else {
      for (std::int64_t i = 0; i < B; ++i) {
        const auto& pool = by_factor[static_cast<std::size_t>(b.k[static_cast<std::size_t>(i)])];
        b.seq.push_back(pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]);
      }
      for (auto& e : b.eps) e = dyn::sample_prior(rng, B, d);
    }
    return b;
  }

  // Rollout length: the whole horizon when L_f (or its stand-in) is on, else
  // just far enough to reach z_{t+1}. Frozen runs visit T states before the
  // last step; a supervised sequence of T frames has T - 1 steps.
  int steps_for(int t) const {
    if (!use_f && !use_penalty) return t + 1;
    return mode == loss::Mode::frozen ? T : T - 1;
  }

  ShardOut shard(const Batch& b, std::int64_t lo, std::int64_t hi, bool primary) const {
    ad::Tape tape;
    nn::Binding p(tape, model.store, primary);
    const std::int64_t n = hi - lo;
    std::optional<Value> sum_f, sum_u, sum_j, sum_x, sum_z;
    std::vector<Value> zt_parts, zn_parts;
    std::vector<int> labels;
    const int t = b.t;
    for (int k = 0; k < K; ++k) {
      std::vector<std::int64_t> rows;
      for (std::int64_t i = lo; i < hi; ++i)
        if (b.k[static_cast<std::size_t>(i)] == k) rows.push_back(i);
      if (rows.empty()) continue;
      const double ng = static_cast<double>(rows.size());
      dyn::RolloutOptions o = base;
      o.steps = steps_for(t);
      o.residuals = use_f;
      if (mode == loss::Mode::frozen) {
        Value z0 = tape.constant(rows_of(b.z0, rows));
        auto traj = dyn::rollout(*model.bank, p, k, z0, o);
        if (use_f) add_to(sum_f, scale(loss::loss_f(traj), ng));
        if (use_penalty) add_to(sum_f, scale(loss::loss_velocity_penalty(traj), ng * lambda));
        if (use_u) add_to(sum_u, scale(loss::loss_u(*model.bank, p, k, z0), ng));
        const auto ti = static_cast<std::size_t>(t);
        if (use_jac) add_to(sum_j, scale(loss::loss_jacobian(generator, p, traj.states[ti], traj.velocities[ti]), ng));
        if (use_cls) {
          zt_parts.push_back(traj.states[ti]);
          zn_parts.push_back(traj.states[ti + 1]);
          labels.insert(labels.end(), rows.size(), k);
        }
      } else {
        std::vector<std::int64_t> which;
        for (auto r : rows) which.push_back(b.seq[static_cast<std::size_t>(r)]);
        const auto g = static_cast<std::int64_t>(rows.size());
        const Tensor x0 = frames(sequences, which, 0), xt = frames(sequences, which, t),
                     xn = frames(sequences, which, t + 1);
        Value x = tape.constant(concat_rows({&x0, &xt, &xn}));
        models::Posterior q = model.vae->encode(p, x);
        Value mu0 = slice(q.mu, 0, 0, g), mut = slice(q.mu, 0, g, g), mun = slice(q.mu, 0, 2 * g, g);
        auto traj = dyn::rollout(*model.bank, p, k, mu0, o);
        if (use_f) add_to(sum_f, scale(loss::loss_f(traj), ng));
        if (use_penalty) add_to(sum_f, scale(loss::loss_velocity_penalty(traj), ng * lambda));
        if (use_u) add_to(sum_u, scale(loss::loss_u(*model.bank, p, k, stop_gradient(mu0)), ng));
        const auto ti = static_cast<std::size_t>(t);
        if (use_z)
          add_to(sum_z, scale(loss::loss_latent_match(*model.bank, p, k, t, mut, mun, traj.states[ti]), ng));
        if (use_x) {
          // ELBO of all three frames under their own posterior samples.
          const Tensor e0 = rows_of(b.eps[0], rows), et = rows_of(b.eps[1], rows), en = rows_of(b.eps[2], rows);
          Value z = models::Vae::reparameterize(q, concat_rows({&e0, &et, &en}));
          add_to(sum_x, scale(loss::loss_elbo(*model.vae, p, x, z, q).loss, ng));
        }
      }
    }
    const double inv = 1.0 / static_cast<double>(n);
    loss::LossParts parts;
    if (sum_f) parts.l_f = scale(*sum_f, inv);
    if (sum_u) parts.l_u = scale(*sum_u, inv);
    if (sum_j) parts.l_jac = scale(*sum_j, inv);
    if (sum_x) parts.l_x = scale(*sum_x, inv);
    if (sum_z) parts.l_z = scale(*sum_z, inv);
    if (use_cls) {
      Value xt = generator.generate(p, concat(zt_parts, 0));
      Value xn = generator.generate(p, concat(zn_parts, 0));
      parts.l_cls = loss::loss_classifier(model.classifier->logits(p, xt, xn, true), labels);
    }
    loss::LossBreakdown bd = loss::total_loss(mode, weights, parts);
    tape.backward(scale(bd.total_value, static_cast<double>(n) / static_cast<double>(b.k.size())));
    return ShardOut{p.gradients(), bd};
  }
};

}  // namespace

CommandResult train_vae(const Config& config_in, const StepObserver& observer) {
  Config config = config_in;
  config.validate();
  auto model = build_model(config, "vae");
  const fs::path dir = output_dir(config);
  const Tensor images = vae_training_images(config);

  models::VaeTrainConfig tc;
  tc.iterations = config.integer("train_vae.iterations");
  tc.batch = config.integer("train_vae.batch");
  tc.lr = config.real("train_vae.lr");
  tc.clip = config.real("nn.clip");
  tc.seed = derive_seed(config.integer("train_vae.seed"), "vae-train");
  tc.threads = static_cast<int>(config.integer("run.threads"));
  auto adam = nn::make_adam(model->store, {tc.lr, config.real("nn.beta1"), config.real("nn.beta2")});

  CommandResult result;
  const std::int64_t interval = config.integer("run.log_interval");
  detail::LogWriter log(config, dir / "train_vae.jsonl");
  auto report = models::train_vae_baseline(*model->vae, model->store, adam, images, tc, [&](const models::VaeTrainStep& s) {
    if ((s.step + 1) % interval != 0) return;
    LogRow row;
    row.step = s.step + 1;
    row.losses.l_x = s.loss;
    row.losses.total = s.loss;
    row.extra = {{"recon", s.recon}, {"kl", s.kl}};
    log.write(row);
    if (observer) observer(row);
    result.log.push_back(row);
  });

  model->meta["iterations"] = std::to_string(tc.iterations);
  model->meta["dataset_images"] = std::to_string(images.shape[0]);
  const std::string ckpt = (dir / "vae.pfckpt").string();
  nn::save_checkpoint(make_checkpoint(*model, &adam), ckpt);
  detail::write_config_echo(config, dir);
  result.outputs = {ckpt, (dir / "train_vae.jsonl").string(), (dir / detail::kConfigEcho).string()};
  std::ostringstream s;
  s << "train-vae: " << tc.iterations << " iterations on " << images.shape[0] << " images";
  if (!report.epoch_mean_loss.empty()) s << ", last epoch mean loss " << report.epoch_mean_loss.back();
  s << "; config " << nn::hex64(config.digest()) << " seed " << config.seed();
  result.summary = s.str();
  return result;
}

CommandResult train_potentials(const Config& config_in, const std::string& generator_path,
                               const StepObserver& observer) {
  Config config = config_in;
  config.validate();
  const loss::Mode mode = run_mode(config);
  auto model = build_model(config, "potentials");

  std::uint64_t generator_params = 0;
  if (!generator_path.empty()) {
    nn::Checkpoint gen = nn::load_checkpoint(generator_path);
    if (gen.kind != "vae")
      fail(ErrorKind::usage, "generator checkpoint '" + generator_path + "' holds a '" + gen.kind + "' model");
    const Config gen_config = Config::parse(gen.config_text);
    if (gen_config.generator_digest() != config.generator_digest())
      fail(ErrorKind::digest, "generator checkpoint digest " + nn::hex64(gen_config.generator_digest()) +
                                  " does not match the config's generator digest " +
                                  nn::hex64(config.generator_digest()));
    nn::unpack_params(gen, model->store, nullptr, model->vae->prefix());
    model->meta["generator_checkpoint_digest"] = nn::hex64(gen.config_digest);
  } else if (mode == loss::Mode::frozen) {
    fail(ErrorKind::usage, "train-potentials: frozen mode needs a generator checkpoint");
  }
  if (mode == loss::Mode::frozen) generator_params = model->store.digest(model->vae->prefix());

  Trainer trainer(config, *model);
  const fs::path dir = output_dir(config);
  const std::int64_t iterations = config.integer("train.iterations");
  const std::int64_t B = config.integer("train.batch");
  const double clip = config.real("nn.clip");
  const int threads = static_cast<int>(config.integer("run.threads"));
  const std::int64_t interval = config.integer("run.log_interval");

  // Supervised runs give the VAE its own optimizer and learning rate.
  const std::string vae_prefix = model->vae->prefix();
  const nn::AdamConfig main_cfg{config.real("nn.lr"), config.real("nn.beta1"), config.real("nn.beta2")};
  const nn::AdamConfig vae_cfg{config.real("train_vae.lr"), config.real("nn.beta1"), config.real("nn.beta2")};
  nn::AdamState adam = nn::make_adam(model->store, main_cfg);
  nn::AdamState adam_vae = nn::make_adam(model->store, vae_cfg);
  std::vector<bool> is_vae(model->store.size());
  for (std::size_t i = 0; i < is_vae.size(); ++i) is_vae[i] = model->store.entry(i).name.starts_with(vae_prefix);

  std::mt19937_64 rng(derive_seed(config.seed(), "train-potentials"));
  CommandResult result;
  detail::LogWriter log(config, dir / "train_potentials.jsonl");
  for (std::int64_t step = 0; step < iterations; ++step) {
    const Batch batch = trainer.draw(rng, B);
    const int shards = static_cast<int>(std::min<std::int64_t>(threads, B));
    std::vector<ShardOut> outs;
    try {
      outs = ad::run_shards<ShardOut>(shards, shards, [&](int s) {
        const std::int64_t lo = B * s / shards, hi = B * (s + 1) / shards;
        return trainer.shard(batch, lo, hi, s == 0);
      });
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      fail(ErrorKind::numeric, "train-potentials: iteration " + std::to_string(step) + ": " + e.what());
    }
    // Shards return row-weighted gradients; reduce them in shard order.
    loss::LossBreakdown losses;
    for (std::size_t sh = 0; sh < outs.size(); ++sh) {
      const auto si = static_cast<std::int64_t>(sh);
      const std::int64_t rows = B * (si + 1) / shards - B * si / shards;
      accumulate(losses, outs[sh].losses, static_cast<double>(rows) / static_cast<double>(B));
    }
    ShardOut total = std::move(outs[0]);
    for (std::size_t sh = 1; sh < outs.size(); ++sh)
      for (std::size_t i = 0; i < total.grads.size(); ++i)
        for (std::size_t j = 0; j < total.grads[i].size(); ++j) total.grads[i][j] += outs[sh].grads[i][j];
    if (!std::isfinite(losses.total))
      fail(ErrorKind::numeric, "train-potentials: non-finite loss at iteration " + std::to_string(step));
    nn::clip_global_norm(total.grads, clip);
    std::vector<std::vector<double>> vae_grads(total.grads.size());
    for (std::size_t i = 0; i < total.grads.size(); ++i)
      if (is_vae[i]) std::swap(vae_grads[i], total.grads[i]);
    nn::adam_step(model->store, total.grads, adam);
    if (mode == loss::Mode::supervised) nn::adam_step(model->store, vae_grads, adam_vae);

    if ((step + 1) % interval == 0) {
      LogRow row;
      row.step = step + 1;
      row.losses = losses;
      row.extra["t"] = batch.t;
      log.write(row);
      if (observer) observer(row);
      result.log.push_back(row);
    }
  }

  if (mode == loss::Mode::frozen) {
    if (model->store.digest(vae_prefix) != generator_params)
      fail(ErrorKind::digest, "train-potentials: generator parameters changed during frozen training");
    model->meta["generator_param_digest"] = nn::hex64(generator_params);
  }
  model->meta["iterations"] = std::to_string(iterations);
  // One optimizer view for the checkpoint: VAE moments come from its own state.
  nn::AdamState merged = adam;
  for (std::size_t i = 0; i < is_vae.size(); ++i)
    if (is_vae[i] && mode == loss::Mode::supervised) {
      merged.m[i] = adam_vae.m[i];
      merged.v[i] = adam_vae.v[i];
    }
  const std::string ckpt = (dir / "potentials.pfckpt").string();
  nn::save_checkpoint(make_checkpoint(*model, &merged), ckpt);
  detail::write_config_echo(config, dir);
  result.outputs = {ckpt, (dir / "train_potentials.jsonl").string(), (dir / detail::kConfigEcho).string()};
  std::ostringstream s;
  s << "train-potentials (" << config.text("run.mode") << "): " << iterations << " iterations";
  if (!result.log.empty()) s << ", last " << format_losses(result.log.back().losses);
  s << "; config " << nn::hex64(config.digest()) << " seed " << config.seed();
  result.summary = s.str();
  return result;
}

}  // namespace pft::app
