#include "kernels.hpp"

#include <Eigen/Core>
#include <algorithm>

namespace pft::ad::kernel {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      fail(ErrorKind::shape, std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::int64_t> strides(r, 0);
  std::int64_t stride = 1;
  for (std::size_t k = 0; k < s.size(); ++k) {
    std::size_t si = s.size() - 1 - k;
    std::size_t oi = r - 1 - k;
    strides[oi] = s[si] == 1 ? 0 : stride;
    stride *= s[si];
  }
  return strides;
}

void accumulate_sum_to(const double* x, const Shape& xs, const Shape& target, double* dst) {
  const std::int64_t n = numel(xs);
  const std::int64_t nt = numel(target);
  if (nt == n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] += x[i];
    return;
  }
  if (nt == 1) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += x[i];
    dst[0] += s;
    return;
  }
  if (n == 0) return;
  const auto st = broadcast_strides(target, xs);
  const std::size_t r = xs.size();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t it = 0;
  const std::int64_t inner = xs[r - 1];
  const std::int64_t sti = st[r - 1];
  for (std::int64_t i = 0; i < n; i += inner) {
    for (std::int64_t j = 0; j < inner; ++j) dst[it + j * sti] += x[i + j];
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      it += st[d];
      if (idx[d] < xs[d]) break;
      it -= st[d] * xs[d];
      idx[d] = 0;
    }
  }
}

void broadcast_into(const double* x, const Shape& xs, const Shape& out, double* y) {
  map2(x, xs, x, xs, out, y, [](double a, double) { return a; });
}

void gemm(const double* A, std::int64_t ar, std::int64_t ac, bool ta, const double* B,
          std::int64_t br, std::int64_t bc, bool tb, double* C, bool accumulate) {
  const std::int64_t m = ta ? ac : ar;
  const std::int64_t n = tb ? br : bc;
  CMap a(A, ar, ac);
  CMap b(B, br, bc);
  MMap c(C, m, n);
  if (!accumulate) c.setZero();
  if (!ta && !tb)
    c.noalias() += a * b;
  else if (ta && !tb)
    c.noalias() += a.transpose() * b;
  else if (!ta && tb)
    c.noalias() += a * b.transpose();
  else
    c.noalias() += a.transpose() * b.transpose();
}

namespace {

// cols [c*kh*kw, ho*wo] for one sample
void im2col(const ConvDims& d, const double* x, double* cols) {
  const std::int64_t hw = d.ho * d.wo;
  for (std::int64_t c = 0; c < d.c; ++c)
    for (std::int64_t ki = 0; ki < d.kh; ++ki)
      for (std::int64_t kj = 0; kj < d.kw; ++kj) {
        double* row = cols + ((c * d.kh + ki) * d.kw + kj) * hw;
        for (std::int64_t oy = 0; oy < d.ho; ++oy) {
          const std::int64_t iy = oy * d.stride - d.pad + ki;
          for (std::int64_t ox = 0; ox < d.wo; ++ox) {
            const std::int64_t ix = ox * d.stride - d.pad + kj;
            row[oy * d.wo + ox] = (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w) ? x[(c * d.h + iy) * d.w + ix] : 0.0;
          }
        }
      }
}

void col2im(const ConvDims& d, const double* cols, double* x) {
  const std::int64_t hw = d.ho * d.wo;
  for (std::int64_t c = 0; c < d.c; ++c)
    for (std::int64_t ki = 0; ki < d.kh; ++ki)
      for (std::int64_t kj = 0; kj < d.kw; ++kj) {
        const double* row = cols + ((c * d.kh + ki) * d.kw + kj) * hw;
        for (std::int64_t oy = 0; oy < d.ho; ++oy) {
          const std::int64_t iy = oy * d.stride - d.pad + ki;
          if (iy < 0 || iy >= d.h) continue;
          for (std::int64_t ox = 0; ox < d.wo; ++ox) {
            const std::int64_t ix = ox * d.stride - d.pad + kj;
            if (ix < 0 || ix >= d.w) continue;
            x[(c * d.h + iy) * d.w + ix] += row[oy * d.wo + ox];
          }
        }
      }
}

std::vector<double>& scratch() {
  thread_local std::vector<double> buf;
  return buf;
}

}  // namespace

void conv2d_forward(const ConvDims& d, const double* x, const double* w, double* y, bool accumulate) {
  const std::int64_t ckk = d.c * d.kh * d.kw;
  const std::int64_t hw = d.ho * d.wo;
  auto& cols = scratch();
  cols.resize(static_cast<std::size_t>(ckk * hw));
  for (std::int64_t n = 0; n < d.n; ++n) {
    im2col(d, x + n * d.c * d.h * d.w, cols.data());
    gemm(w, d.o, ckk, false, cols.data(), ckk, hw, false, y + n * d.o * hw, accumulate);
  }
}

void conv2d_backward_input(const ConvDims& d, const double* g, const double* w, double* dx) {
  const std::int64_t ckk = d.c * d.kh * d.kw;
  const std::int64_t hw = d.ho * d.wo;
  auto& cols = scratch();
  cols.resize(static_cast<std::size_t>(ckk * hw));
  for (std::int64_t n = 0; n < d.n; ++n) {
    gemm(w, d.o, ckk, true, g + n * d.o * hw, d.o, hw, false, cols.data(), false);
    col2im(d, cols.data(), dx + n * d.c * d.h * d.w);
  }
}

void conv2d_backward_weight(const ConvDims& d, const double* x, const double* g, double* dw) {
  const std::int64_t ckk = d.c * d.kh * d.kw;
  const std::int64_t hw = d.ho * d.wo;
  auto& cols = scratch();
  cols.resize(static_cast<std::size_t>(ckk * hw));
  for (std::int64_t n = 0; n < d.n; ++n) {
    im2col(d, x + n * d.c * d.h * d.w, cols.data());
    gemm(g + n * d.o * hw, d.o, hw, false, cols.data(), ckk, hw, true, dw, true);
  }
}

}  // namespace pft::ad::kernel
