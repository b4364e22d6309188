#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "pft/losses.hpp"

using namespace pft;
using namespace pft::loss;
using ad::Tensor;

namespace {

pot::PotentialConfig mlp_cfg(int d, int K = 2) {
  pot::PotentialConfig c;
  c.K = K;
  c.d = d;
  c.hidden = 5;
  c.time_dim = 4;
  c.head_init = pot::HeadInit::uniform;
  return c;
}

pot::PotentialConfig kind_cfg(pot::PotentialKind kind, int d) {
  pot::PotentialConfig c;
  c.kind = kind;
  c.K = 1;
  c.d = d;
  return c;
}

}  // namespace

TEST_CASE("L_f: arithmetic, plane wave, linear potential") {
  ad::Tape tape;
  std::vector<Value> res{tape.constant(Tensor({1, 1}, {1.0})), tape.constant(Tensor({1, 1}, {2.0}))};
  CHECK(loss_f(res).item() == 2.5);
  CHECK_THROWS_AS(loss_f(std::vector<Value>{}), Error);

  std::mt19937_64 rng(2);
  for (auto kind : {pot::PotentialKind::plane_wave, pot::PotentialKind::linear}) {
    nn::ParamStore store;
    pot::PotentialBank bank(kind_cfg(kind, 3), store, rng);
    if (kind == pot::PotentialKind::linear) store.at("potentials/0.slope").data = {0.02, -0.05, 0.01};
    nn::Binding p(tape, store);
    dyn::RolloutOptions o;
    o.steps = 10;
    o.residuals = true;
    auto tr = dyn::rollout(bank, p, 0, tape.constant(dyn::sample_prior(rng, 6, 3)), o);
    const double lf = loss_f(tr).item();
    if (kind == pot::PotentialKind::linear)
      CHECK(lf == 0.0);
    else
      CHECK(lf < 1e-8);
    o.residuals = false;
    CHECK_THROWS_AS(loss_f(dyn::rollout(bank, p, 0, tape.constant(Tensor::zeros({1, 3})), o)), Error);
  }
}

TEST_CASE("L_u: zero bank, probe slope, parameter gradient") {
  std::mt19937_64 rng(4);
  {
    nn::ParamStore store;
    pot::PotentialConfig cfg;
    pot::PotentialBank bank(cfg, store, rng);
    ad::Tape tape;
    nn::Binding p(tape, store);
    CHECK(loss_u(bank, p, 3, tape.constant(dyn::sample_prior(rng, 4, 8))).item() == 0.0);
  }
  {
    nn::ParamStore store;
    pot::PotentialBank bank(kind_cfg(pot::PotentialKind::linear, 2), store, rng);
    store.at("potentials/0.slope").data = {3.0, 4.0};
    ad::Tape tape;
    nn::Binding p(tape, store);
    CHECK(loss_u(bank, p, 0, tape.constant(Tensor({2, 2}, {0.1, 0.2, -5, 7}))).item() == 25.0);
  }
  nn::ParamStore store;
  pot::PotentialBank bank(mlp_cfg(3), store, rng);
  const Tensor z0 = dyn::sample_prior(rng, 3, 3);
  for (const char* name : {"potentials/1.z1.weight", "potentials/1.fusion.bias", "potentials/1.head.weight"}) {
    auto err = oracle::param_grad_error(store, store.index_of(name), [&](const nn::Binding& p) {
      return loss_u(bank, p, 1, p.tape().constant(z0));
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("L_J: zero velocity, identity generator, explicit Jacobian oracle, sign") {
  std::mt19937_64 rng(6);
  ad::Tape tape;
  nn::ParamStore store;
  nn::Binding p0(tape, store);
  auto id = models::GeneratorHandle::analytic_map(3);
  Value z = tape.constant(Tensor({2, 3}, {0.1, 0.2, 0.3, -1, 0, 1}));
  CHECK(loss_jacobian(id, p0, z, tape.constant(Tensor::zeros({2, 3}))).item() == 0.0);
  Value v = tape.constant(Tensor({2, 3}, {1, 2, 2, 0, 3, 4}));
  CHECK(loss_jacobian(id, p0, z, v).item() == doctest::Approx(-(9.0 + 25.0) / 2).epsilon(1e-15));

  auto probe = models::GeneratorHandle::linear_probe(store, "probe/A", 5, 3, rng);
  nn::Binding p(tape, store);
  const auto& A = store.at("probe/A").data;
  double expect = 0;
  for (int r = 0; r < 2; ++r)
    for (int i = 0; i < 5; ++i) {
      double s = 0;
      for (int j = 0; j < 3; ++j) s += A[static_cast<std::size_t>(i * 3 + j)] * v.data()[static_cast<std::size_t>(r * 3 + j)];
      expect += s * s;
    }
  CHECK(loss_jacobian(probe, p, z, v).item() == doctest::Approx(-expect / 2).epsilon(1e-13));

  // through a bank: never positive, gradient matches FD
  pot::PotentialBank bank(mlp_cfg(3), store, rng);
  const Tensor zt = dyn::sample_prior(rng, 3, 3);
  {
    nn::Binding pb(tape, store);
    CHECK(loss_jacobian(probe, bank, pb, 0, tape.constant(zt), 4).item() <= 0.0);
  }
  auto err = oracle::param_grad_error(store, store.index_of("potentials/0.z2.weight"), [&](const nn::Binding& pb) {
    return loss_jacobian(probe, bank, pb, 0, pb.tape().constant(zt), 4);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("L_J through the VAE decoder matches a finite-difference JVP") {
  std::mt19937_64 rng(8);
  nn::ParamStore store;
  models::VaeConfig vc;
  vc.d = 3;
  vc.size = 8;
  vc.width1 = 3;
  vc.width2 = 4;
  models::Vae vae(vc, store, rng);
  auto g = models::GeneratorHandle::vae_decoder(vae, true);
  g.apply_freeze(store);
  const auto z = oracle::uniform(rng, 3), v = oracle::uniform(rng, 3);
  ad::Tape tape;
  nn::Binding p(tape, store);
  Value j = g.jvp(p, tape.constant(Tensor({1, 3}, z)), tape.constant(Tensor({1, 3}, v)));
  REQUIRE(j.shape() == ad::Shape{1, 1, 8, 8});
  for (std::size_t px = 0; px < 64; px += 7) {
    auto f = [&](const std::vector<double>& q) {
      ad::Tape t2;
      nn::Binding p2(t2, store);
      return g.generate(p2, t2.constant(Tensor({1, 3}, q))).data()[px];
    };
    CHECK(j.data()[px] == doctest::Approx(oracle::fd_first(f, z, v)).epsilon(1e-6));
  }
}

TEST_CASE("L_k: closed forms, independent log-sum-exp, label range") {
  ad::Tape tape;
  CHECK(loss_classifier(tape.constant(Tensor::zeros({3, 4})), {0, 1, 3}).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(loss_classifier(tape.constant(Tensor({1, 4}, {0, 20, 0, 0})), {1}).item() < 1e-8);
  std::mt19937_64 rng(1);
  auto logits = oracle::uniform(rng, 5 * 4, -30, 30);
  std::vector<int> labels{0, 3, 2, 2, 1};
  long double expect = 0;
  for (int r = 0; r < 5; ++r) {
    long double m = -1e300L, s = 0;
    for (int k = 0; k < 4; ++k) m = std::max<long double>(m, logits[static_cast<std::size_t>(r * 4 + k)]);
    for (int k = 0; k < 4; ++k) s += std::exp(static_cast<long double>(logits[static_cast<std::size_t>(r * 4 + k)]) - m);
    expect += m + std::log(s) - logits[static_cast<std::size_t>(r * 4 + labels[static_cast<std::size_t>(r)])];
  }
  const double got = loss_classifier(tape.constant(Tensor({5, 4}, logits)), labels).item();
  CHECK(got == doctest::Approx(static_cast<double>(expect / 5)).epsilon(1e-14));
  CHECK(got >= 0);
  CHECK_THROWS_AS(loss_classifier(tape.constant(Tensor::zeros({1, 4})), {4}), Error);
  CHECK_THROWS_AS(loss_classifier(tape.constant(Tensor::zeros({1, 4})), {-1}), Error);
  CHECK_THROWS_AS(loss_classifier(tape.constant(Tensor::zeros({2, 4})), {1}), Error);

  // gradient through a classifier's parameters
  nn::ParamStore store;
  auto lin = nn::Linear::create(store, "c", 3, 4, rng);
  const Tensor x({5, 3}, oracle::uniform(rng, 15));
  auto err = oracle::param_grad_error(store, lin.w, [&](const nn::Binding& p) {
    return loss_classifier(lin(p, p.tape().constant(x)), labels);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("L_z: arithmetic, zero case, gradient") {
  std::mt19937_64 rng(3);
  nn::ParamStore store;
  pot::PotentialBank bank(kind_cfg(pot::PotentialKind::linear, 1), store, rng);
  ad::Tape tape;
  nn::Binding p(tape, store);
  auto c = [&](double v) { return tape.constant(Tensor({1, 1}, {v})); };
  CHECK(loss_latent_match(bank, p, 0, 2, c(1), c(3), c(2)).item() == 5.0);
  store.at("potentials/0.slope").data = {2.0};
  nn::Binding p2(tape, store);
  CHECK(loss_latent_match(bank, p2, 0, 2, c(1), c(3), c(1)).item() == 0.0);
  CHECK_THROWS_AS(loss_latent_match(bank, p2, 0, 0, c(1), c(3), tape.constant(Tensor::zeros({1, 2}))), Error);

  nn::ParamStore s2;
  pot::PotentialBank mlp(mlp_cfg(2), s2, rng);
  const Tensor zt({2, 2}, oracle::uniform(rng, 4)), zn({2, 2}, oracle::uniform(rng, 4)),
      zh({2, 2}, oracle::uniform(rng, 4));
  auto err = oracle::param_grad_error(s2, s2.index_of("potentials/1.z1.weight"), [&](const nn::Binding& pb) {
    ad::Tape& t = pb.tape();
    return loss_latent_match(mlp, pb, 1, 3, t.constant(zt), t.constant(zn), t.constant(zh));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("ELBO pieces: KL closed forms and the clamped reconstruction bound") {
  ad::Tape tape;
  CHECK(gaussian_kl(tape.constant(Tensor::zeros({1, 4})), tape.constant(Tensor::zeros({1, 4}))).item() == 0.0);
  CHECK(gaussian_kl(tape.constant(Tensor({1, 1}, {1.0})), tape.constant(Tensor::zeros({1, 1}))).item() == 0.5);
  std::mt19937_64 rng(5);
  auto mu = oracle::uniform(rng, 6, -2, 2), lv = oracle::uniform(rng, 6, -3, 3);
  Value kl = gaussian_kl(tape.constant(Tensor({2, 3}, mu)), tape.constant(Tensor({2, 3}, lv)));
  for (int r = 0; r < 2; ++r) {
    double e = 0;
    for (int j = 0; j < 3; ++j) {
      const auto i = static_cast<std::size_t>(r * 3 + j);
      e += 0.5 * (mu[i] * mu[i] + std::exp(lv[i]) - 1 - lv[i]);
    }
    CHECK(kl.data()[static_cast<std::size_t>(r)] == doctest::Approx(e).epsilon(1e-14));
    CHECK(kl.data()[static_cast<std::size_t>(r)] >= 0);
  }

  const int N = 64;
  Tensor x = Tensor::zeros({1, 1, 8, 8}), logits = Tensor::zeros({1, 1, 8, 8});
  for (int i = 0; i < N; ++i) {
    x.data[static_cast<std::size_t>(i)] = i % 3 == 0 ? 1.0 : 0.0;
    logits.data[static_cast<std::size_t>(i)] = i % 3 == 0 ? 1e3 : -1e3;
  }
  const double nll = bernoulli_nll(tape.constant(logits), tape.constant(x)).item();
  CHECK(nll > 0);
  CHECK(nll <= -N * std::log(1 - 1e-6) * (1 + 1e-9));
  logits.data[0] = std::nan("");
  CHECK_THROWS_AS(bernoulli_nll(tape.constant(logits), tape.constant(x)), Error);
}

TEST_CASE("total loss: weights, modes, bitwise skip equivalence") {
  ad::Tape tape;
  auto s = [&](double v) { return tape.constant(Tensor::scalar(v)); };
  LossParts frozen;
  frozen.l_f = s(1);
  frozen.l_u = s(2);
  frozen.l_jac = s(-3);
  frozen.l_cls = s(4);
  CHECK(total_loss(Mode::frozen, {}, frozen).total == 4.0);
  LossWeights zero{0, 0, 0, 0, 0, 0};
  auto z = total_loss(Mode::frozen, zero, frozen);
  CHECK(z.total == 0.0);
  CHECK(z.l_f == 0.0);

  LossParts sup;
  sup.l_x = s(1);
  CHECK_THROWS_AS(total_loss(Mode::frozen, {}, sup), Error);
  CHECK_THROWS_AS(total_loss(Mode::supervised, {}, frozen), Error);
  LossWeights bad;
  bad.w_f = -1;
  CHECK_THROWS_AS(total_loss(Mode::frozen, bad, frozen), Error);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = oracle::uniform(rng, 4, -5, 5);
    auto w = oracle::uniform(rng, 4, 0, 3);
    LossParts q;
    q.l_f = s(v[0]);
    q.l_u = s(v[1]);
    q.l_x = s(v[2]);
    q.l_z = s(v[3]);
    LossWeights lw;
    lw.w_f = w[0];
    lw.w_u = w[1];
    lw.w_x = w[2];
    lw.w_z = w[3];
    auto b = total_loss(Mode::supervised, lw, q);
    CHECK(b.total == doctest::Approx(w[0] * b.l_f + w[1] * b.l_u + w[2] * b.l_x + w[3] * b.l_z).epsilon(1e-14));
    lw.w_u = 0;
    auto off = total_loss(Mode::supervised, lw, q);
    LossParts skipped = q;
    skipped.l_u.reset();
    CHECK(off.total == total_loss(Mode::supervised, lw, skipped).total);
    CHECK(off.l_u == 0.0);
  }
}
