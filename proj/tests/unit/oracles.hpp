#pragma once

// Test-only reference computations. Everything here works on plain doubles
// and never touches the tape, so it stays independent of the code it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using Fn = std::function<double(const std::vector<double>&)>;

inline std::vector<double> fd_gradient(const Fn& f, std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

// d^2/ds^2 f(x + s v) at s = 0 by central second differences.
inline double fd_second(const Fn& f, const std::vector<double>& x, const std::vector<double>& v, double h = 1e-3) {
  auto at = [&](double s) {
    std::vector<double> y(x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * v[i];
    return f(y);
  };
  return (at(h) - 2 * at(0) + at(-h)) / (h * h);
}

inline double fd_first(const Fn& f, const std::vector<double>& x, const std::vector<double>& v, double h = 1e-5) {
  auto at = [&](double s) {
    std::vector<double> y(x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * v[i];
    return f(y);
  };
  return (at(h) - at(-h)) / (2 * h);
}

// max_i |a_i - b_i| / max_i |b_i|
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return den > 0 ? num / den : num;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-12); }

inline std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Dense tanh network evaluated with plain loops: layers (W [out x in], b [out]),
// tanh after every layer except the last; output is the sum of the last layer.
struct DenseNet {
  std::vector<std::size_t> widths;  // input, hidden..., output
  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l + 1] * widths[l] + widths[l + 1];
    return n;
  }
  double eval(const std::vector<double>& params, const std::vector<double>& x) const {
    std::vector<double> a(x);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::size_t in = widths[l], out = widths[l + 1];
      std::vector<double> z(out);
      for (std::size_t o = 0; o < out; ++o) {
        double s = params[off + out * in + o];
        for (std::size_t i = 0; i < in; ++i) s += params[off + o * in + i] * a[i];
        z[o] = (l + 2 < widths.size()) ? std::tanh(s) : s;
      }
      off += out * in + out;
      a = std::move(z);
    }
    double s = 0.0;
    for (double v : a) s += v;
    return s;
  }
};

}  // namespace oracle

#include "pft/nn.hpp"

namespace oracle {

// Largest relative error between the tape gradient of `loss` with respect to
// store entry `entry` and central differences of the same function.
inline double param_grad_error(pft::nn::ParamStore& store, std::size_t entry,
                               const std::function<pft::ad::Value(const pft::nn::Binding&)>& loss,
                               double h = 1e-5) {
  std::vector<double> tape_grad;
  {
    pft::ad::Tape tape;
    pft::nn::Binding p(tape, store);
    tape.backward(loss(p));
    tape_grad = tape.adjoint(p[entry]);
  }
  auto& data = store.entry(entry).tensor.data;
  const std::vector<double> saved = data;
  auto f = [&](const std::vector<double>& x) {
    data = x;
    pft::ad::Tape tape;
    pft::nn::Binding p(tape, store);
    return loss(p).item();
  };
  auto fd = fd_gradient(f, saved, h);
  data = saved;
  return max_rel_err(tape_grad, fd);
}

}  // namespace oracle
