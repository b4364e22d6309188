#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "pft/data.hpp"

namespace pft::data {

void split_indices(std::int64_t n, double train_fraction, std::mt19937_64& rng, std::vector<std::int64_t>& train,
                   std::vector<std::int64_t>& test) {
  if (!(train_fraction > 0 && train_fraction < 1)) fail(ErrorKind::usage, "split: train fraction must be in (0, 1)");
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::int64_t>(std::ceil(train_fraction * static_cast<double>(n) - 1e-9));
  train.assign(idx.begin(), idx.begin() + n_train);
  test.assign(idx.begin() + n_train, idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
}

VpPairDataset build_vp_dataset(const pot::PotentialBank& bank, nn::ParamStore& store,
                               const models::GeneratorHandle& generator, const VpBuildOptions& options,
                               std::mt19937_64& rng) {
  const int K = bank.K();
  const std::int64_t n = options.n_pairs, d = bank.d();
  if (n < K) fail(ErrorKind::usage, "vp dataset: need at least K = " + std::to_string(K) + " pairs");
  if (options.steps < 1) fail(ErrorKind::usage, "vp dataset: steps must be positive");
  if (options.chunk < 1) fail(ErrorKind::usage, "vp dataset: chunk must be positive");
  if (generator.d() != d) fail(ErrorKind::shape, "vp dataset: generator latent size differs from the bank");

  VpPairDataset ds;
  ds.K = K;
  ds.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % K);
  std::shuffle(ds.labels.begin(), ds.labels.end(), rng);
  std::bernoulli_distribution coin(0.5);
  for (std::int64_t i = 0; i < n; ++i) ds.signs.push_back(coin(rng) ? 1 : -1);
  Tensor z0 = dyn::sample_prior(rng, n, d);

  const auto max_skips = static_cast<std::int64_t>(std::floor(0.01 * static_cast<double>(n)));
  std::vector<std::int64_t> pending(static_cast<std::size_t>(n));
  std::iota(pending.begin(), pending.end(), 0);
  std::int64_t per_image = 0;
  while (!pending.empty()) {
    std::map<std::pair<int, int>, std::vector<std::int64_t>> groups;
    for (auto i : pending) groups[{ds.labels[static_cast<std::size_t>(i)], ds.signs[static_cast<std::size_t>(i)]}].push_back(i);
    std::vector<std::int64_t> retry;
    for (const auto& [key, members] : groups) {
      for (std::size_t lo = 0; lo < members.size(); lo += static_cast<std::size_t>(options.chunk)) {
        const std::size_t hi = std::min(members.size(), lo + static_cast<std::size_t>(options.chunk));
        const auto m = static_cast<std::int64_t>(hi - lo);
        Tensor zb = Tensor::zeros({m, d});
        for (std::size_t r = lo; r < hi; ++r)
          std::copy_n(z0.data.begin() + members[r] * d, d, zb.data.begin() + static_cast<std::int64_t>(r - lo) * d);
        ad::Tape tape;
        nn::Binding p(tape, store);
        dyn::RolloutOptions ro;
        ro.steps = options.steps;
        ro.sign = key.second;
        ro.track_gradients = false;
        ro.check_divergence = false;
        auto tr = dyn::rollout(bank, p, key.first, tape.constant(zb), ro);
        std::vector<bool> ok(static_cast<std::size_t>(m), true);
        for (const auto& s : tr.states)
          for (std::int64_t r = 0; r < m; ++r)
            for (std::int64_t j = 0; j < d; ++j) {
              const double v = s.data()[static_cast<std::size_t>(r * d + j)];
              if (!std::isfinite(v) || std::abs(v) > ro.divergence_limit) ok[static_cast<std::size_t>(r)] = false;
            }
        Tensor last = tr.states.back().tensor();
        for (auto& v : last.data)
          if (!std::isfinite(v)) v = 0.0;
        Value clean = tape.constant(std::move(last));
        Value a = generator.generate(p, tr.states.front()), b = generator.generate(p, clean);
        if (per_image == 0) {
          per_image = a.numel() / m;
          ad::Shape s = a.shape();
          s[0] = n;
          ds.x0 = Tensor::zeros(s);
          ds.xT = Tensor::zeros(s);
        }
        for (std::size_t r = lo; r < hi; ++r) {
          const auto row = static_cast<std::int64_t>(r - lo);
          const std::int64_t dst = members[r];
          if (!ok[static_cast<std::size_t>(row)]) {
            retry.push_back(dst);
            continue;
          }
          std::copy_n(a.data().begin() + row * per_image, per_image, ds.x0.data.begin() + dst * per_image);
          std::copy_n(b.data().begin() + row * per_image, per_image, ds.xT.data.begin() + dst * per_image);
        }
      }
    }
    std::sort(retry.begin(), retry.end());
    for (auto i : retry) {
      if (++ds.skipped > max_skips)
        fail(ErrorKind::numeric, "vp dataset: more than 1% of rollouts diverged (" + std::to_string(ds.skipped) +
                                     " of " + std::to_string(n) + ")");
      Tensor fresh = dyn::sample_prior(rng, 1, d);
      std::copy(fresh.data.begin(), fresh.data.end(), z0.data.begin() + i * d);
    }
    pending = std::move(retry);
  }
  split_indices(n, options.train_fraction, rng, ds.train, ds.test);
  return ds;
}

}  // namespace pft::data
