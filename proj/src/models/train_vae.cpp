#include <algorithm>
#include <cmath>
#include <numeric>

#include "pft/losses.hpp"
#include "pft/models.hpp"

namespace pft::models {

namespace {

struct ShardOut {
  std::vector<std::vector<double>> grads;
  double loss = 0, recon = 0, kl = 0;
};

Tensor gather(const Tensor& images, const std::vector<std::int64_t>& rows) {
  const std::int64_t per = images.size() / images.shape[0];
  Shape s = images.shape;
  s[0] = static_cast<std::int64_t>(rows.size());
  Tensor out = Tensor::zeros(s);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(images.data.begin() + rows[i] * per, per, out.data.begin() + static_cast<std::int64_t>(i) * per);
  return out;
}

}  // namespace

VaeTrainReport train_vae_baseline(const Vae& vae, nn::ParamStore& store, nn::AdamState& adam, const Tensor& images,
                                  const VaeTrainConfig& config,
                                  const std::function<void(const VaeTrainStep&)>& on_step) {
  if (images.shape.size() != 4 || images.shape[0] < 1) fail(ErrorKind::usage, "train-vae: empty dataset");
  if (config.batch < 1) fail(ErrorKind::usage, "train-vae: batch must be positive");
  if (config.iterations < 0) fail(ErrorKind::usage, "train-vae: iterations must be non-negative");
  const std::int64_t N = images.shape[0], B = std::min(config.batch, N);
  const std::int64_t per_epoch = (N + B - 1) / B;
  std::mt19937_64 rng(config.seed);
  std::vector<std::int64_t> order(static_cast<std::size_t>(N));
  VaeTrainReport report;
  double epoch_sum = 0;
  std::int64_t epoch_count = 0;
  for (std::int64_t step = 0; step < config.iterations; ++step) {
    const std::int64_t pos = step % per_epoch;
    if (pos == 0) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
    }
    const std::int64_t begin = pos * B, count = std::min(B, N - begin);
    std::vector<std::int64_t> rows(order.begin() + begin, order.begin() + begin + count);
    Tensor x = gather(images, rows);
    Tensor eps = Tensor::zeros({count, vae.d()});
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& v : eps.data) v = g(rng);

    const int shards = static_cast<int>(std::min<std::int64_t>(std::max(config.threads, 1), count));
    auto outs = ad::run_shards<ShardOut>(shards, shards, [&](int s) {
      const std::int64_t lo = count * s / shards, hi = count * (s + 1) / shards;
      std::vector<std::int64_t> local(static_cast<std::size_t>(hi - lo));
      std::iota(local.begin(), local.end(), lo);
      ad::Tape tape;
      nn::Binding p(tape, store);
      Value xs = tape.constant(gather(x, local));
      Posterior q = vae.encode(p, xs);
      Tensor e = Tensor::zeros({hi - lo, vae.d()});
      std::copy(eps.data.begin() + lo * vae.d(), eps.data.begin() + hi * vae.d(), e.data.begin());
      auto terms = loss::loss_elbo(vae, p, xs, Vae::reparameterize(q, e), q);
      const double w = static_cast<double>(hi - lo) / static_cast<double>(count);
      tape.backward(scale(terms.loss, w));
      return ShardOut{p.gradients(), terms.loss.item() * w, terms.recon.item() * w, terms.kl.item() * w};
    });
    ShardOut total = std::move(outs[0]);
    for (std::size_t s = 1; s < outs.size(); ++s) {
      for (std::size_t i = 0; i < total.grads.size(); ++i)
        for (std::size_t j = 0; j < total.grads[i].size(); ++j) total.grads[i][j] += outs[s].grads[i][j];
      total.loss += outs[s].loss;
      total.recon += outs[s].recon;
      total.kl += outs[s].kl;
    }
    if (!std::isfinite(total.loss))
      fail(ErrorKind::numeric, "train-vae: non-finite loss at step " + std::to_string(step));
    nn::clip_global_norm(total.grads, config.clip);
    nn::adam_step(store, total.grads, adam);
    if (on_step) on_step({step, total.loss, total.recon, total.kl});
    epoch_sum += total.loss;
    ++epoch_count;
    if (pos == per_epoch - 1 || step + 1 == config.iterations) {
      report.epoch_mean_loss.push_back(epoch_sum / static_cast<double>(epoch_count));
      epoch_sum = 0;
      epoch_count = 0;
    }
  }
  report.steps = config.iterations;
  return report;
}

}  // namespace pft::models
