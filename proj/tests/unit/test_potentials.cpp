#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "pft/potentials.hpp"

using namespace pft;
using namespace pft::pot;
using ad::Tensor;

namespace {

PotentialConfig small_mlp(int d = 3, int hidden = 5, int time_dim = 4) {
  PotentialConfig c;
  c.K = 2;
  c.d = d;
  c.hidden = hidden;
  c.time_dim = time_dim;
  c.head_init = HeadInit::uniform;
  return c;
}

// Plain-loop evaluation of one potential network from the stored weights.
double reference_u(const nn::ParamStore& s, const std::string& base, const std::vector<double>& z, double t,
                   int time_dim, double time_base) {
  auto layer = [&](const std::string& name, const std::vector<double>& x, bool act) {
    const auto& w = s.at(base + name + ".weight");
    const auto& b = s.at(base + name + ".bias");
    const auto out = static_cast<std::size_t>(w.shape[0]), in = static_cast<std::size_t>(w.shape[1]);
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b.data[o];
      for (std::size_t i = 0; i < in; ++i) acc += w.data[o * in + i] * x[i];
      y[o] = act ? std::tanh(acc) : acc;
    }
    return y;
  };
  auto h = layer("z1", z, true);
  h = layer("z2", h, true);
  for (int i = 0; i < time_dim / 2; ++i) {
    const double f = std::pow(time_base, -2.0 * i / time_dim);
    h.push_back(std::sin(t * f));
    h.push_back(std::cos(t * f));
  }
  h = layer("fusion", h, true);
  return layer("head", h, false)[0];
}

}  // namespace

TEST_CASE("zero-initialized head gives a zero field, velocity and residual") {
  nn::ParamStore store;
  std::mt19937_64 rng(1);
  PotentialConfig cfg;
  PotentialBank bank(cfg, store, rng);
  std::vector<double> z(8, 0.3);
  for (int k = 0; k < 4; ++k) {
    CHECK(evaluate(bank, store, k, z, 2.0) == 0.0);
    for (double v : velocity(bank, store, k, z, 2.0)) CHECK(v == 0.0);
    CHECK(wave_residual(bank, store, k, z, 2.0) == 0.0);
  }
  CHECK(store.at("potentials/c").data == std::vector<double>{1.0});
}

TEST_CASE("evaluation is deterministic and matches a hand-set two-unit network") {
  nn::ParamStore store;
  std::mt19937_64 rng(2);
  PotentialConfig cfg = small_mlp(2, 2, 2);
  PotentialBank bank(cfg, store, rng);
  // hand-set weights for potential 1
  store.at("potentials/1.z1.weight").data = {0.5, -1.0, 0.25, 2.0};
  store.at("potentials/1.z1.bias").data = {0.1, -0.2};
  store.at("potentials/1.z2.weight").data = {1.0, 0.0, -0.5, 1.5};
  store.at("potentials/1.z2.bias").data = {0.0, 0.3};
  store.at("potentials/1.fusion.weight").data = {0.2, -0.4, 1.0, 0.5, 0.7, 0.1, -0.3, 0.9};
  store.at("potentials/1.fusion.bias").data = {0.05, -0.05};
  store.at("potentials/1.head.weight").data = {1.5, -2.0};
  store.at("potentials/1.head.bias").data = {0.25};
  const std::vector<double> z{0.4, -0.6};
  const double t = 3.0;
  // by hand: a = tanh(W1 z + b1), b = tanh(W2 a + b2), e = [sin 3, cos 3],
  // c = tanh(Wf [b; e] + bf), u = wh . c + bh
  const double a0 = std::tanh(0.5 * 0.4 - 1.0 * -0.6 + 0.1), a1 = std::tanh(0.25 * 0.4 + 2.0 * -0.6 - 0.2);
  const double b0 = std::tanh(a0), b1 = std::tanh(-0.5 * a0 + 1.5 * a1 + 0.3);
  const double e0 = std::sin(3.0), e1 = std::cos(3.0);
  const double c0 = std::tanh(0.2 * b0 - 0.4 * b1 + 1.0 * e0 + 0.5 * e1 + 0.05);
  const double c1 = std::tanh(0.7 * b0 + 0.1 * b1 - 0.3 * e0 + 0.9 * e1 - 0.05);
  const double expected = 1.5 * c0 - 2.0 * c1 + 0.25;
  CHECK(evaluate(bank, store, 1, z, t) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(evaluate(bank, store, 1, z, t) == evaluate(bank, store, 1, z, t));
}

TEST_CASE("out-of-range index and wrong latent size are rejected") {
  nn::ParamStore store;
  std::mt19937_64 rng(3);
  PotentialBank bank(small_mlp(), store, rng);
  std::vector<double> z(3, 0.0), bad(4, 0.0);
  try {
    evaluate(bank, store, 2, z, 0.0);
    FAIL("expected range error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::range);
  }
  CHECK_THROWS_AS(evaluate(bank, store, -1, z, 0.0), Error);
  try {
    evaluate(bank, store, 0, bad, 0.0);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape);
  }
}

TEST_CASE("linear potential: constant velocity, identically zero residual") {
  nn::ParamStore store;
  std::mt19937_64 rng(4);
  PotentialConfig cfg;
  cfg.kind = PotentialKind::linear;
  cfg.K = 1;
  cfg.d = 3;
  PotentialBank bank(cfg, store, rng);
  store.at("potentials/0.slope").data = {0.5, -1.25, 3.0};
  std::mt19937_64 r(5);
  for (int i = 0; i < 20; ++i) {
    auto z = oracle::uniform(r, 3, -4, 4);
    const double t = 9.0 * i / 19.0;
    CHECK(velocity(bank, store, 0, z, t) == std::vector<double>{0.5, -1.25, 3.0});
    CHECK(wave_residual(bank, store, 0, z, t) == 0.0);
  }
}

TEST_CASE("plane wave solves the wave equation at random probes") {
  nn::ParamStore store;
  std::mt19937_64 rng(6);
  PotentialConfig cfg;
  cfg.kind = PotentialKind::plane_wave;
  cfg.K = 1;
  cfg.d = 8;
  PotentialBank bank(cfg, store, rng);
  store.at("potentials/c").data = {1.37};
  std::mt19937_64 r(7);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    auto z = oracle::uniform(r, 8, -3, 3);
    worst = std::max(worst, std::abs(wave_residual(bank, store, 0, z, 10.0 * oracle::uniform(r, 1, 0, 1)[0])));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("random network: velocity and residual agree with finite differences") {
  nn::ParamStore store;
  std::mt19937_64 rng(8);
  PotentialConfig cfg = small_mlp(3, 6, 4);
  PotentialBank bank(cfg, store, rng);
  store.at("potentials/c").data = {0.8};
  std::mt19937_64 r(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto z = oracle::uniform(r, 3, -1, 1);
    const double t = 1.0 + trial;
    auto u_of_z = [&](const std::vector<double>& q) { return evaluate(bank, store, 1, q, t); };
    auto fd = oracle::fd_gradient(u_of_z, z);
    CHECK(oracle::max_rel_err(velocity(bank, store, 1, z, t), fd) < 1e-4);

    double lap = 0;
    for (int i = 0; i < 3; ++i) {
      std::vector<double> e(3, 0.0);
      e[static_cast<std::size_t>(i)] = 1.0;
      lap += oracle::fd_second(u_of_z, z, e, 1e-3);
    }
    auto u_of_t = [&](const std::vector<double>& q) { return evaluate(bank, store, 1, z, q[0]); };
    const double utt = oracle::fd_second(u_of_t, {t}, {1.0}, 1e-3);
    const double expected = utt - 0.64 * lap;
    CHECK(oracle::rel_err(wave_residual(bank, store, 1, z, t), expected) < 1e-3);
  }
}

TEST_CASE("zero wave coefficient leaves exactly the time curvature") {
  nn::ParamStore store;
  std::mt19937_64 rng(10);
  PotentialBank bank(small_mlp(), store, rng);
  store.at("potentials/c").data = {0.0};
  ad::Tape tape;
  nn::Binding p(tape, store);
  Value z = tape.constant(Tensor({4, 3}, oracle::uniform(rng, 12)));
  Value t = tape.constant(Tensor::filled({4, 1}, 2.0));
  auto d = bank.derivatives(p, 0, z, t);
  Value f = bank.residual(p, 0, d);
  for (std::size_t i = 0; i < 4; ++i) CHECK(f.data()[i] == d.u_tt.data()[i]);
}

TEST_CASE("mean squared residual is differentiable in c") {
  nn::ParamStore store;
  std::mt19937_64 rng(11);
  PotentialBank bank(small_mlp(), store, rng);
  const auto zdata = oracle::uniform(rng, 15);
  auto msr = [&](double c, double* grad) {
    store.at("potentials/c").data = {c};
    ad::Tape tape;
    nn::Binding p(tape, store);
    Value z = tape.constant(Tensor({5, 3}, zdata));
    Value t = tape.constant(Tensor::filled({5, 1}, 1.5));
    Value loss = mean(square(bank.residual(p, 0, bank.derivatives(p, 0, z, t))));
    if (grad) {
      tape.backward(loss);
      *grad = tape.adjoint(p[store.index_of("potentials/c")])[0];
    }
    return loss.item();
  };
  double g = 0;
  msr(0.9, &g);
  const double fd = (msr(0.9 + 1e-5, nullptr) - msr(0.9 - 1e-5, nullptr)) / 2e-5;
  CHECK(oracle::rel_err(g, fd) < 1e-4);
}

TEST_CASE("velocity and derivative passes agree, and the difference fallback tracks them") {
  std::mt19937_64 rng(12);
  nn::ParamStore store;
  PotentialConfig cfg = small_mlp(4, 8, 6);
  PotentialBank bank(cfg, store, rng);
  nn::ParamStore fd_store = store;
  cfg.fd_fallback = true;
  std::mt19937_64 rng2(12);
  nn::ParamStore scratch;
  PotentialBank fd_bank(cfg, scratch, rng2);

  ad::Tape tape;
  nn::Binding p(tape, store), q(tape, fd_store);
  Value z = tape.constant(Tensor({3, 4}, oracle::uniform(rng, 12)));
  Value t = tape.constant(Tensor::filled({3, 1}, 4.0));
  auto exact = bank.derivatives(p, 1, z, t);
  Value v = bank.velocity(p, 1, z, t);
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(v.data()[i] - exact.grad.data()[i]) < 1e-14);
  auto approx = fd_bank.derivatives(q, 1, z, t);
  std::vector<double> a(exact.laplacian.data().begin(), exact.laplacian.data().end());
  std::vector<double> b(approx.laplacian.data().begin(), approx.laplacian.data().end());
  CHECK(oracle::max_rel_err(b, a) < 1e-4);
  std::vector<double> ga(exact.grad.data().begin(), exact.grad.data().end());
  std::vector<double> gb(approx.grad.data().begin(), approx.grad.data().end());
  CHECK(oracle::max_rel_err(gb, ga) < 1e-5);
  std::vector<double> ta(exact.u_tt.data().begin(), exact.u_tt.data().end());
  std::vector<double> tb(approx.u_tt.data().begin(), approx.u_tt.data().end());
  CHECK(oracle::max_rel_err(tb, ta) < 1e-3);
}

TEST_CASE("hand-computed potential matches the plain-loop reference for random weights") {
  std::mt19937_64 rng(13);
  nn::ParamStore store;
  PotentialConfig cfg = small_mlp(3, 7, 6);
  PotentialBank bank(cfg, store, rng);
  for (int i = 0; i < 10; ++i) {
    auto z = oracle::uniform(rng, 3);
    const double t = i * 0.7;
    CHECK(evaluate(bank, store, 0, z, t) ==
          doctest::Approx(reference_u(store, "potentials/0.", z, t, 6, 10000.0)).epsilon(1e-13));
  }
}
