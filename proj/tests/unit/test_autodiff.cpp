#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pft/autodiff.hpp"
#include "pft/taylor.hpp"

using namespace pft;
using namespace pft::ad;

namespace {

// Tape version of oracle::DenseNet with parameters laid out identically.
Value dense_net(Tape& tape, const oracle::DenseNet& net, const std::vector<Value>& layers, const Value& x) {
  Value a = x;  // [1, in]
  for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
    a = add(matmul(a, layers[2 * l], false, true), layers[2 * l + 1]);
    if (l + 2 < net.widths.size()) a = tanh(a);
  }
  (void)tape;
  return sum(a);
}

std::vector<Value> bind_dense(Tape& tape, const oracle::DenseNet& net, const std::vector<double>& p) {
  std::vector<Value> layers;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
    auto in = static_cast<std::int64_t>(net.widths[l]), out = static_cast<std::int64_t>(net.widths[l + 1]);
    auto w = std::vector<double>(p.begin() + static_cast<long>(off), p.begin() + static_cast<long>(off + out * in));
    off += static_cast<std::size_t>(out * in);
    auto b = std::vector<double>(p.begin() + static_cast<long>(off), p.begin() + static_cast<long>(off + out));
    off += static_cast<std::size_t>(out);
    layers.push_back(tape.variable(Tensor({out, in}, w)));
    layers.push_back(tape.variable(Tensor({out}, b)));
  }
  return layers;
}

std::vector<double> flatten_grads(Tape& tape, const std::vector<Value>& vs) {
  std::vector<double> g;
  for (const auto& v : vs) {
    auto a = tape.adjoint(v);
    g.insert(g.end(), a.begin(), a.end());
  }
  return g;
}

}  // namespace

TEST_CASE("tanh at zero and its derivative") {
  Tape tape;
  Value x = tape.variable(Tensor::scalar(0.0));
  Value y = tanh(x);
  CHECK(y.item() == 0.0);
  auto g = gradient(y, {x});
  CHECK(g[0].item() == 1.0);
}

TEST_CASE("matmul shape algebra and mismatch errors") {
  Tape tape;
  Value a = tape.constant(Tensor::zeros({2, 3}));
  Value b = tape.constant(Tensor::zeros({3, 1}));
  CHECK(matmul(a, b).shape() == Shape{2, 1});
  CHECK(matmul(a, a, false, true).shape() == Shape{2, 2});
  try {
    matmul(a, a);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape);
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, tape.constant(Tensor::zeros({4}))), Error);
}

TEST_CASE("operands from different tapes are rejected") {
  Tape t1, t2;
  Value a = t1.constant(Tensor::scalar(1.0));
  Value b = t2.constant(Tensor::scalar(2.0));
  try {
    add(a, b);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("different tapes") != std::string::npos);
  }
}

TEST_CASE("gradient of x^2 and of an unrelated input") {
  Tape tape;
  Value x = tape.variable(Tensor::scalar(3.0));
  Value unused = tape.variable(Tensor::scalar(5.0));
  Value y = square(x);
  auto g = gradient(y, {x, unused});
  CHECK(g[0].item() == doctest::Approx(6.0));
  CHECK(g[1].item() == 0.0);
  CHECK_THROWS_AS(gradient(tape.variable(Tensor::zeros({2})), {x}), Error);
}

TEST_CASE("random two-layer tanh network: reverse gradient matches central differences") {
  std::mt19937_64 rng(7);
  oracle::DenseNet net{{4, 6, 3}};
  auto p = oracle::uniform(rng, net.param_count());
  auto x = oracle::uniform(rng, 4);
  auto fd = oracle::fd_gradient([&](const std::vector<double>& q) { return net.eval(q, x); }, p, 1e-5);
  Tape tape;
  auto layers = bind_dense(tape, net, p);
  Value y = dense_net(tape, net, layers, tape.constant(Tensor({1, 4}, x)));
  CHECK(y.item() == doctest::Approx(net.eval(p, x)).epsilon(1e-12));
  tape.backward(y);
  CHECK(oracle::max_rel_err(flatten_grads(tape, layers), fd) < 1e-4);
}

TEST_CASE("reverse gradients over 100 random networks agree with finite differences") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> depth(1, 3), width(1, 16);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    oracle::DenseNet net;
    net.widths.push_back(static_cast<std::size_t>(width(rng)));
    const int layers = depth(rng);
    for (int l = 0; l < layers; ++l) net.widths.push_back(static_cast<std::size_t>(width(rng)));
    auto p = oracle::uniform(rng, net.param_count());
    auto x = oracle::uniform(rng, net.widths[0]);
    auto fd = oracle::fd_gradient([&](const std::vector<double>& q) { return net.eval(q, x); }, p, 1e-5);
    Tape tape;
    auto vars = bind_dense(tape, net, p);
    Value y = dense_net(tape, net, vars, tape.constant(Tensor({1, static_cast<std::int64_t>(x.size())}, x)));
    tape.backward(y);
    worst = std::max(worst, oracle::max_rel_err(flatten_grads(tape, vars), fd));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("parameter gradient of squared latent gradient norm, one hidden unit") {
  // u(z) = a * tanh(w.z + b); |grad_z u|^2 = a^2 (1 - h^2)^2 |w|^2 with h = tanh(w.z + b).
  const std::vector<double> w0{0.3, -0.7, 0.5}, z0{0.2, 0.1, -0.4};
  const double a0 = 1.3, b0 = 0.25;
  double s = b0, ww = 0.0;
  for (int i = 0; i < 3; ++i) s += w0[static_cast<std::size_t>(i)] * z0[static_cast<std::size_t>(i)], ww += w0[static_cast<std::size_t>(i)] * w0[static_cast<std::size_t>(i)];
  const double h = std::tanh(s), q = 1 - h * h;
  const double d_a = 2 * a0 * q * q * ww;
  const double d_b = -4 * a0 * a0 * ww * h * q * q;
  std::vector<double> d_w(3);
  for (std::size_t j = 0; j < 3; ++j) d_w[j] = a0 * a0 * q * q * (-4 * h * z0[j] * ww + 2 * w0[j]);

  auto build = [&](Tape& tape, Value& a, Value& b, Value& w, Value& z) {
    a = tape.variable(Tensor::scalar(a0));
    b = tape.variable(Tensor::scalar(b0));
    w = tape.variable(Tensor({1, 3}, w0));
    z = tape.variable(Tensor({1, 3}, z0));
    return mul(a, tanh(add(matmul(z, w, false, true), b)));
  };

  SUBCASE("via reverse-over-reverse") {
    Tape tape;
    Value a, b, w, z;
    Value u = build(tape, a, b, w, z);
    Value gz = gradient(sum(u), {z}, true)[0];
    Value n2 = sum(square(gz));
    auto g = gradient(n2, {a, b, w});
    CHECK(g[0].item() == doctest::Approx(d_a).epsilon(1e-12));
    CHECK(g[1].item() == doctest::Approx(d_b).epsilon(1e-12));
    for (std::size_t j = 0; j < 3; ++j) CHECK(g[2].data()[j] == doctest::Approx(d_w[j]).epsilon(1e-12));
  }
  SUBCASE("via Taylor first coefficients") {
    Tape tape;
    Value a = tape.variable(Tensor::scalar(a0));
    Value b = tape.variable(Tensor::scalar(b0));
    Value w = tape.variable(Tensor({1, 3}, w0));
    Value z = tape.constant(Tensor({1, 3}, z0));
    Tensor axes = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) axes.data[static_cast<std::size_t>(i * 4)] = 1.0;
    Taylor2 zt{z, tape.constant(axes), std::nullopt, 3};
    Taylor2 u = mul(Taylor2::constant(a), tanh(add_bias(matmul(zt, w, true), b)));
    Value n2 = sum(square(*u.first));
    auto g = gradient(n2, {a, b, w});
    CHECK(g[0].item() == doctest::Approx(d_a).epsilon(1e-12));
    CHECK(g[1].item() == doctest::Approx(d_b).epsilon(1e-12));
    for (std::size_t j = 0; j < 3; ++j) CHECK(g[2].data()[j] == doctest::Approx(d_w[j]).epsilon(1e-12));
  }
}

TEST_CASE("second derivative of a quadratic form along a basis vector") {
  std::mt19937_64 rng(3);
  const int d = 4;
  auto A = oracle::uniform(rng, d * d);
  Tape tape;
  Value Av = tape.constant(Tensor({d, d}, A));
  Value x = tape.constant(Tensor({1, d}, oracle::uniform(rng, d)));
  auto f = [&](const Taylor2& v) {
    Taylor2 Ax = matmul(v, Av, true);  // row form: (A x)^T = x^T A^T
    return sum_rows(mul(v, Ax));
  };
  for (int i = 0; i < d; ++i) {
    Tensor e = Tensor::zeros({1, d});
    e.data[static_cast<std::size_t>(i)] = 1.0;
    auto r = directional_second(f, x, e);
    CHECK(r.second.item() == doctest::Approx(2 * A[static_cast<std::size_t>(i * d + i)]).epsilon(1e-14));
  }
}

TEST_CASE("linear functions have zero second derivative and zero direction is rejected") {
  Tape tape;
  Value w = tape.constant(Tensor({3, 1}, {1.0, -2.0, 0.5}));
  Value x = tape.constant(Tensor({1, 3}, {0.1, 0.2, 0.3}));
  auto f = [&](const Taylor2& v) { return matmul(v, w); };
  auto r = directional_second(f, x, Tensor({1, 3}, {0.3, 0.4, -1.0}));
  CHECK(r.second.item() == 0.0);
  CHECK(r.first.item() == doctest::Approx(0.3 - 0.8 - 0.5));
  CHECK_THROWS_AS(directional_second(f, x, Tensor::zeros({1, 3})), Error);
}

TEST_CASE("random MLP directional second derivative matches second differences") {
  std::mt19937_64 rng(11);
  oracle::DenseNet net{{5, 8, 8, 1}};
  auto p = oracle::uniform(rng, net.param_count());
  auto x = oracle::uniform(rng, 5);
  auto v = oracle::uniform(rng, 5);
  Tape tape;
  auto layers = bind_dense(tape, net, p);
  auto f = [&](const Taylor2& in) {
    Taylor2 a = in;
    for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
      a = add_bias(matmul(a, layers[2 * l], true), layers[2 * l + 1]);
      if (l + 2 < net.widths.size()) a = tanh(a);
    }
    return sum_rows(a);
  };
  auto r = directional_second(f, tape.constant(Tensor({1, 5}, x)), Tensor({1, 5}, v));
  auto ref = [&](const std::vector<double>& y) { return net.eval(p, y); };
  CHECK(oracle::rel_err(r.second.item(), oracle::fd_second(ref, x, v, 1e-3)) < 1e-3);
  CHECK(oracle::rel_err(r.first.item(), oracle::fd_first(ref, x, v)) < 1e-6);
}

TEST_CASE("Taylor propagation is exact on polynomials and elementary compositions") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const double x0 = u(rng), v = u(rng) + 1.5;
    const double c0 = u(rng), c1 = u(rng), c2 = u(rng), c3 = u(rng), c4 = u(rng);
    Tape tape;
    Value x = tape.constant(Tensor({1, 1}, {x0}));
    auto poly = [&](const Taylor2& t) {
      Taylor2 t2 = mul(t, t), t3 = mul(t2, t), t4 = square(t2);
      Taylor2 acc = add_scalar(scale(t, c1), c0);
      acc = add(acc, scale(t2, c2));
      acc = add(acc, scale(t3, c3));
      return add(acc, scale(t4, c4));
    };
    auto rp = directional_second(poly, x, Tensor({1, 1}, {v}));
    const double d2 = (2 * c2 + 6 * c3 * x0 + 12 * c4 * x0 * x0) * v * v;
    const double d1 = (c1 + 2 * c2 * x0 + 3 * c3 * x0 * x0 + 4 * c4 * x0 * x0 * x0) * v;
    worst = std::max({worst, std::abs(rp.second.item() - d2), std::abs(rp.first.item() - d1)});

    // g(x) = sin(exp(x)) * cos(2x)
    auto comp = [&](const Taylor2& t) { return mul(sin(exp(t)), cos(scale(t, 2.0))); };
    auto rc = directional_second(comp, x, Tensor({1, 1}, {v}));
    const double e = std::exp(x0), s = std::sin(e), c = std::cos(e), s2 = std::sin(2 * x0), c2x = std::cos(2 * x0);
    const double f1 = c * e;                     // d/dx sin(e^x)
    const double f2 = -s * e * e + c * e;        // d2/dx2 sin(e^x)
    const double g1 = -2 * s2, g2 = -4 * c2x;    // derivatives of cos(2x)
    const double exact2 = (f2 * c2x + 2 * f1 * g1 + s * g2) * v * v;
    worst = std::max(worst, std::abs(rc.second.item() - exact2));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("Taylor first coefficient equals the reverse-mode gradient entry") {
  std::mt19937_64 rng(13);
  oracle::DenseNet net{{4, 7, 1}};
  auto p = oracle::uniform(rng, net.param_count());
  auto x = oracle::uniform(rng, 4);
  Tape tape;
  auto layers = bind_dense(tape, net, p);
  Value xv = tape.variable(Tensor({1, 4}, x));
  Value y = dense_net(tape, net, layers, xv);
  auto g = gradient(y, {xv})[0];
  auto f = [&](const Taylor2& in) {
    Taylor2 a = tanh(add_bias(matmul(in, layers[0], true), layers[1]));
    return sum_rows(add_bias(matmul(a, layers[2], true), layers[3]));
  };
  for (int i = 0; i < 4; ++i) {
    Tensor e = Tensor::zeros({1, 4});
    e.data[static_cast<std::size_t>(i)] = 1.0;
    auto r = directional_second(f, xv, e);
    CHECK(std::abs(r.first.item() - g.data()[static_cast<std::size_t>(i)]) < 1e-12);
  }
}

TEST_CASE("laplacian of simple fields") {
  Tape tape;
  std::mt19937_64 rng(1);
  Value z = tape.constant(Tensor({3, 8}, oracle::uniform(rng, 24)));
  Value t = tape.constant(Tensor({3, 1}, {0.0, 1.0, 2.0}));
  auto norm2 = [](const Taylor2& zz, const Taylor2&) { return sum_rows(square(zz)); };
  auto lap = laplacian(norm2, z, t);
  for (double v : lap.data()) CHECK(v == doctest::Approx(16.0).epsilon(1e-14));

  Value w = tape.constant(Tensor({8, 1}, oracle::uniform(rng, 8)));
  auto linear = [&](const Taylor2& zz, const Taylor2&) { return matmul(zz, w); };
  for (double v : laplacian(linear, z, t).data()) CHECK(v == 0.0);
}

TEST_CASE("plane wave solves the wave equation") {
  const double c = 1.7;
  Tape tape;
  std::mt19937_64 rng(9);
  const std::int64_t n = 5, d = 4;
  auto zd = oracle::uniform(rng, static_cast<std::size_t>(n * d), -2, 2);
  auto td = oracle::uniform(rng, static_cast<std::size_t>(n), 0, 9);
  Value z = tape.constant(Tensor({n, d}, zd));
  Value t = tape.constant(Tensor({n, 1}, td));
  auto wave = [&](const Taylor2& zz, const Taylor2& tt) { return sin(sub(slice(zz, 1, 0, 1), scale(tt, c))); };
  Value lap = laplacian(wave, z, t);
  // time direction: second coefficient along t
  Taylor2 tt{t, tape.constant(Tensor::filled({n, 1}, 1.0)), std::nullopt, 1};
  Taylor2 u = wave(Taylor2::constant(z), tt);
  for (std::int64_t r = 0; r < n; ++r) {
    const double phase = zd[static_cast<std::size_t>(r * d)] - c * td[static_cast<std::size_t>(r)];
    CHECK(lap.data()[static_cast<std::size_t>(r)] == doctest::Approx(-std::sin(phase)).epsilon(1e-13));
    const double utt = u.second->data()[static_cast<std::size_t>(r)];
    CHECK(std::abs(utt - c * c * lap.data()[static_cast<std::size_t>(r)]) < 1e-12);
  }
}

TEST_CASE("convolution primitives agree with finite differences, including second order") {
  std::mt19937_64 rng(21);
  const std::int64_t N = 2, C = 2, H = 6, W = 5, O = 3, K = 3;
  auto xd = oracle::uniform(rng, static_cast<std::size_t>(N * C * H * W));
  auto wd = oracle::uniform(rng, static_cast<std::size_t>(O * C * K * K));
  ConvGeometry geom{2, 1};
  const std::int64_t Ho = (H + 2 - K) / 2 + 1, Wo = (W + 2 - K) / 2 + 1;
  auto rd = oracle::uniform(rng, static_cast<std::size_t>(N * O * Ho * Wo));

  // reference convolution with loops
  auto conv_ref = [&](const std::vector<double>& x, const std::vector<double>& w) {
    std::vector<double> y(static_cast<std::size_t>(N * O * Ho * Wo), 0.0);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t o = 0; o < O; ++o)
        for (std::int64_t i = 0; i < Ho; ++i)
          for (std::int64_t j = 0; j < Wo; ++j) {
            double s = 0;
            for (std::int64_t c = 0; c < C; ++c)
              for (std::int64_t ki = 0; ki < K; ++ki)
                for (std::int64_t kj = 0; kj < K; ++kj) {
                  auto yy = i * 2 - 1 + ki, xx = j * 2 - 1 + kj;
                  if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                  s += w[static_cast<std::size_t>(((o * C + c) * K + ki) * K + kj)] *
                       x[static_cast<std::size_t>(((n * C + c) * H + yy) * W + xx)];
                }
            y[static_cast<std::size_t>(((n * O + o) * Ho + i) * Wo + j)] = s;
          }
    return y;
  };
  // scalar objective: sum(r * tanh(conv(x, w)))^2 style nonlinearity
  auto objective = [&](const std::vector<double>& x, const std::vector<double>& w) {
    auto y = conv_ref(x, w);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += rd[i] * std::tanh(y[i]);
    return s;
  };

  Tape tape;
  Value x = tape.variable(Tensor({N, C, H, W}, xd));
  Value w = tape.variable(Tensor({O, C, K, K}, wd));
  Value r = tape.constant(Tensor({N, O, Ho, Wo}, rd));
  Value y = conv2d(x, w, geom);
  auto yref = conv_ref(xd, wd);
  for (std::size_t i = 0; i < yref.size(); ++i) REQUIRE(y.data()[i] == doctest::Approx(yref[i]).epsilon(1e-12));
  Value obj = sum(mul(r, tanh(y)));
  auto g = gradient(obj, {x, w}, true);
  auto gx_fd = oracle::fd_gradient([&](const std::vector<double>& q) { return objective(q, wd); }, xd);
  auto gw_fd = oracle::fd_gradient([&](const std::vector<double>& q) { return objective(xd, q); }, wd);
  CHECK(oracle::max_rel_err(std::vector<double>(g[0].data().begin(), g[0].data().end()), gx_fd) < 1e-6);
  CHECK(oracle::max_rel_err(std::vector<double>(g[1].data().begin(), g[1].data().end()), gw_fd) < 1e-6);

  // second order: gradient of |dobj/dx|^2 with respect to w, against FD of the FD-free first derivative
  Value n2 = sum(square(g[0]));
  auto h = gradient(n2, {w})[0];
  auto n2_of_w = [&](const std::vector<double>& q) {
    Tape t2;
    Value x2 = t2.variable(Tensor({N, C, H, W}, xd));
    Value w2 = t2.constant(Tensor({O, C, K, K}, q));
    Value o2 = sum(mul(t2.constant(Tensor({N, O, Ho, Wo}, rd)), tanh(conv2d(x2, w2, geom))));
    t2.backward(o2);
    double s = 0;
    for (double v : t2.adjoint(x2)) s += v * v;
    return s;
  };
  auto h_fd = oracle::fd_gradient(n2_of_w, wd, 1e-5);
  CHECK(oracle::max_rel_err(std::vector<double>(h.data().begin(), h.data().end()), h_fd) < 1e-5);
}

TEST_CASE("second-order reverse mode through elementwise, reduction and shape ops") {
  std::mt19937_64 rng(31);
  auto xd = oracle::uniform(rng, 12, 0.2, 1.5);
  // f(x) = logsumexp(reshape(x)) + sum(sigmoid(x) * softplus(x) / sqrt(x)) + sum(concat(slice, exp))
  auto build = [&](Tape& tape, const Value& x) {
    Value m = reshape(x, {3, 4});
    Value lse = sum(logsumexp(m));
    Value elt = sum(div(mul(sigmoid(x), softplus(x)), sqrt(x)));
    Value cat = concat({slice(m, 1, 1, 2), exp(slice(m, 1, 0, 1))}, 1);
    Value rep = fold(repeat(transpose(cat), 2), 2);
    Value br = sum(mul(broadcast_to(sum_to(m, {1, 4}), {3, 4}), log(m)));
    (void)tape;
    return add(add(lse, elt), add(sum(square(rep)), br));
  };
  auto plain = [&](const std::vector<double>& q) {
    Tape t;
    return build(t, t.constant(Tensor({12}, q))).item();
  };
  Tape tape;
  Value x = tape.variable(Tensor({12}, xd));
  Value f = build(tape, x);
  CHECK(f.item() == doctest::Approx(plain(xd)));
  Value gx = gradient(f, {x}, true)[0];
  auto g_fd = oracle::fd_gradient(plain, xd);
  CHECK(oracle::max_rel_err(std::vector<double>(gx.data().begin(), gx.data().end()), g_fd) < 1e-7);
  // Hessian-vector product against FD of the gradient
  auto v = oracle::uniform(rng, 12);
  Value hv = gradient(sum(mul(gx, tape.constant(Tensor({12}, v)))), {x})[0];
  auto gdot = [&](const std::vector<double>& q) {
    Tape t;
    Value xv = t.variable(Tensor({12}, q));
    t.backward(build(t, xv));
    auto a = t.adjoint(xv);
    double s = 0;
    for (std::size_t i = 0; i < 12; ++i) s += a[i] * v[i];
    return s;
  };
  auto hv_fd = oracle::fd_gradient(gdot, xd);
  CHECK(oracle::max_rel_err(std::vector<double>(hv.data().begin(), hv.data().end()), hv_fd) < 1e-6);
}

TEST_CASE("identical inputs give bit-identical values and adjoints") {
  auto run = [] {
    std::mt19937_64 rng(99);
    oracle::DenseNet net{{6, 16, 16, 1}};
    auto p = oracle::uniform(rng, net.param_count());
    auto x = oracle::uniform(rng, 6);
    Tape tape(42);
    auto layers = bind_dense(tape, net, p);
    Value y = dense_net(tape, net, layers, tape.constant(Tensor({1, 6}, x)));
    tape.backward(y);
    auto g = flatten_grads(tape, layers);
    g.push_back(y.item());
    return g;
  };
  auto a = run(), b = run();
  CHECK(a == b);
}

TEST_CASE("sharded execution returns results in index order") {
  auto r = run_shards<int>(8, 3, [](int i) { return i * i; });
  for (int i = 0; i < 8; ++i) CHECK(r[static_cast<std::size_t>(i)] == i * i);
  CHECK_THROWS(run_shards<int>(4, 2, [](int i) -> int {
    if (i == 2) fail(ErrorKind::numeric, "boom");
    return i;
  }));
}
