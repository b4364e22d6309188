#include <algorithm>
#include <cmath>

#include "pft/eval.hpp"
#include "pft/losses.hpp"

namespace pft::eval {

namespace {

double row_norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

EquivarianceReport equivariance_error(const models::Vae& vae, const pot::PotentialBank& bank, nn::ParamStore& store,
                                      const std::vector<data::TransformSequence>& sequences,
                                      const std::map<data::Factor, int>& factor_to_k,
                                      const EquivarianceOptions& options) {
  if (sequences.empty()) fail(ErrorKind::usage, "equivariance: no sequences");
  EquivarianceReport report;
  std::map<std::string, std::pair<double, int>> acc;
  double total = 0;
  for (const auto& seq : sequences) {
    auto it = factor_to_k.find(seq.factor);
    if (it == factor_to_k.end())
      fail(ErrorKind::usage, std::string("equivariance: no potential mapped to factor ") + data::to_string(seq.factor));
    const int k = it->second;
    const std::int64_t T = seq.images.shape[0];
    if (T < 2) fail(ErrorKind::usage, "equivariance: sequence needs at least two states");
    const std::int64_t per = seq.images.size() / T;
    ad::Tape tape;
    nn::Binding p(tape, store);
    Value x0 = tape.constant(data::take_rows(seq.images, {0}));
    Value z0 = vae.encode(p, x0).mu;
    std::vector<Value> states;
    if (options.mode == EquivarianceMode::vanilla) {
      for (std::int64_t t = 1; t < T; ++t) states.push_back(z0);
    } else if (options.cumulative) {
      Value z = z0;
      for (std::int64_t t = 1; t < T; ++t) {
        Value tt = tape.constant(Tensor::filled({1, 1}, static_cast<double>(t - 1)));
        z = add(z, bank.velocity(p, k, z0, tt));
        states.push_back(z);
      }
    } else {
      dyn::RolloutOptions o;
      o.steps = static_cast<int>(T - 1);
      o.track_gradients = false;
      auto tr = dyn::rollout(bank, p, k, z0, o);
      states.assign(tr.states.begin() + 1, tr.states.end());
    }
    Value decoded = vae.decode(p, ad::concat(states, 0));  // [T-1, C, H, W]
    double err = 0;
    for (std::int64_t t = 1; t < T; ++t)
      for (std::int64_t j = 0; j < per; ++j)
        err += std::abs(seq.images.data[static_cast<std::size_t>(t * per + j)] -
                        decoded.data()[static_cast<std::size_t>((t - 1) * per + j)]);
    total += err;
    auto& slot = acc[data::to_string(seq.factor)];
    slot.first += err;
    slot.second += 1;
  }
  report.mean = total / static_cast<double>(sequences.size());
  for (const auto& [name, s] : acc) report.per_factor[name] = s.first / s.second;
  return report;
}

double estimate_loglik(const models::Vae& vae, nn::ParamStore& store, const Tensor& images, int n_importance,
                       std::uint64_t seed) {
  if (n_importance < 1) fail(ErrorKind::usage, "estimate_loglik: n_importance must be at least 1");
  if (images.shape.size() != 4 || images.shape[0] < 1) fail(ErrorKind::usage, "estimate_loglik: empty image set");
  std::mt19937_64 rng(seed);
  const std::int64_t N = images.shape[0], d = vae.d(), n = n_importance;
  double total = 0;
  for (std::int64_t i = 0; i < N; ++i) {
    ad::Tape tape;
    nn::Binding p(tape, store);
    Value x = tape.constant(data::take_rows(images, {i}));
    auto q = vae.encode(p, x);
    Tensor eps = dyn::sample_prior(rng, n, d);
    Tensor z = Tensor::zeros({n, d});
    std::vector<double> logw(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t s = 0; s < n; ++s)
      for (std::int64_t j = 0; j < d; ++j) {
        const double mu = q.mu.data()[static_cast<std::size_t>(j)], lv = q.logvar.data()[static_cast<std::size_t>(j)];
        const double e = eps.data[static_cast<std::size_t>(s * d + j)];
        const double zz = mu + std::exp(0.5 * lv) * e;
        z.data[static_cast<std::size_t>(s * d + j)] = zz;
        // log p(z) - log q(z | x), the 2 pi terms cancel
        logw[static_cast<std::size_t>(s)] += -0.5 * zz * zz + 0.5 * (e * e + lv);
      }
    Value xs = tape.constant(data::take_rows(images, std::vector<std::int64_t>(static_cast<std::size_t>(n), i)));
    Value nll = loss::bernoulli_nll(vae.decode_logits(p, tape.constant(z)), xs);
    double m = -INFINITY;
    for (std::int64_t s = 0; s < n; ++s) {
      logw[static_cast<std::size_t>(s)] -= nll.data()[static_cast<std::size_t>(s)];
      m = std::max(m, logw[static_cast<std::size_t>(s)]);
    }
    double acc = 0;
    for (double w : logw) acc += std::exp(w - m);
    total += m + std::log(acc / static_cast<double>(n));
  }
  return total / static_cast<double>(N);
}

ResidualSummary residual_diagnostics(const pot::PotentialBank& bank, nn::ParamStore& store, std::int64_t n_probes,
                                     int steps, std::mt19937_64& rng) {
  if (n_probes < 1) fail(ErrorKind::usage, "residual diagnostics: n_probes must be positive");
  if (steps < 1) fail(ErrorKind::usage, "residual diagnostics: steps must be positive");
  const std::int64_t d = bank.d();
  ResidualSummary out;
  out.norm_profile.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  double sum_f = 0, sum_v = 0;
  std::int64_t count_f = 0, good = 0;
  std::vector<double> v0;
  for (int k = 0; k < bank.K(); ++k) {
    Tensor z0 = dyn::sample_prior(rng, n_probes, d);
    ad::Tape tape;
    nn::Binding p(tape, store);
    dyn::RolloutOptions o;
    o.steps = steps;
    o.residuals = true;
    o.track_gradients = false;
    o.check_divergence = false;
    auto tr = dyn::rollout(bank, p, k, tape.constant(z0), o);
    for (std::int64_t r = 0; r < n_probes; ++r) {
      bool ok = true;
      for (const auto& s : tr.states)
        for (std::int64_t j = 0; j < d; ++j) {
          const double v = s.data()[static_cast<std::size_t>(r * d + j)];
          ok = ok && std::isfinite(v) && std::abs(v) <= o.divergence_limit;
        }
      for (const auto& f : tr.residuals) ok = ok && std::isfinite(f.data()[static_cast<std::size_t>(r)]);
      ++out.probes;
      if (!ok) {
        ++out.divergent;
        continue;
      }
      ++good;
      for (const auto& f : tr.residuals) {
        sum_f += std::abs(f.data()[static_cast<std::size_t>(r)]);
        ++count_f;
      }
      const double n0 = row_norm(tr.velocities[0].data().subspan(static_cast<std::size_t>(r * d), static_cast<std::size_t>(d)));
      sum_v += n0;
      v0.push_back(n0);
      for (std::size_t t = 0; t < tr.states.size(); ++t)
        out.norm_profile[t] += row_norm(tr.states[t].data().subspan(static_cast<std::size_t>(r * d), static_cast<std::size_t>(d)));
    }
  }
  if (good > 0) {
    out.mean_abs_residual = sum_f / static_cast<double>(count_f);
    out.mean_velocity0 = sum_v / static_cast<double>(good);
    std::sort(v0.begin(), v0.end());
    const std::size_t m = v0.size();
    out.median_velocity0 = m % 2 ? v0[m / 2] : 0.5 * (v0[m / 2 - 1] + v0[m / 2]);
    for (auto& x : out.norm_profile) x /= static_cast<double>(good);
  }
  return out;
}

double classifier_accuracy(const pot::PotentialBank& bank, const models::IndexClassifier& classifier,
                           const models::GeneratorHandle& generator, nn::ParamStore& store, std::int64_t n, int T,
                           std::mt19937_64& rng) {
  if (n < 1) fail(ErrorKind::usage, "classifier accuracy: n must be positive");
  const int K = bank.K();
  const std::int64_t d = bank.d();
  std::vector<dyn::SampleDraw> draws;
  for (std::int64_t i = 0; i < n; ++i) draws.push_back(dyn::sample_draw(rng, K, T));
  Tensor z0 = dyn::sample_prior(rng, n, d);
  std::int64_t correct = 0;
  for (int k = 0; k < K; ++k) {
    std::vector<std::int64_t> rows;
    for (std::int64_t i = 0; i < n; ++i)
      if (draws[static_cast<std::size_t>(i)].k == k) rows.push_back(i);
    for (std::size_t lo = 0; lo < rows.size(); lo += 128) {
      std::vector<std::int64_t> chunk(rows.begin() + static_cast<std::ptrdiff_t>(lo),
                                      rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), lo + 128)));
      const auto m = static_cast<std::int64_t>(chunk.size());
      ad::Tape tape;
      nn::Binding p(tape, store);
      dyn::RolloutOptions o;
      o.steps = T - 1;
      o.track_gradients = false;
      auto tr = dyn::rollout(bank, p, k, tape.constant(data::take_rows(z0, chunk)), o);
      Tensor a = Tensor::zeros({m, d}), b = Tensor::zeros({m, d});
      for (std::int64_t r = 0; r < m; ++r) {
        const auto t = static_cast<std::size_t>(draws[static_cast<std::size_t>(chunk[static_cast<std::size_t>(r)])].t);
        std::copy_n(tr.states[t].data().begin() + r * d, d, a.data.begin() + r * d);
        std::copy_n(tr.states[t + 1].data().begin() + r * d, d, b.data.begin() + r * d);
      }
      Value logits = classifier.logits(p, generator.generate(p, tape.constant(a)),
                                       generator.generate(p, tape.constant(b)), false);
      for (std::int64_t r = 0; r < m; ++r) {
        auto row = logits.data().subspan(static_cast<std::size_t>(r * K), static_cast<std::size_t>(K));
        correct += (std::max_element(row.begin(), row.end()) - row.begin()) == k;
      }
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace pft::eval
