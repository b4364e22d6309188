#pragma once

// Raw buffer kernels shared by the primitive ops.

#include <cstdint>
#include <vector>

#include "pft/autodiff.hpp"

namespace pft::ad::kernel {

// Right-aligned broadcast of two shapes; throws a shape error naming `op`.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op);

// Element strides of `s` when viewed with shape `out` (0 on broadcast axes).
std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out);

// y[i] = f(a[ia], b[ib]) over the broadcast shape `out`.
template <class F>
void map2(const double* a, const Shape& as, const double* b, const Shape& bs, const Shape& out,
          double* y, F f) {
  const std::int64_t n = numel(out);
  const std::int64_t na = numel(as), nb = numel(bs);
  if (na == n && nb == n && as.size() == bs.size() && as == bs) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = f(a[i], b[i]);
    return;
  }
  if (nb == 1 && na == n) {
    const double b0 = b[0];
    for (std::int64_t i = 0; i < n; ++i) y[i] = f(a[i], b0);
    return;
  }
  if (na == 1 && nb == n) {
    const double a0 = a[0];
    for (std::int64_t i = 0; i < n; ++i) y[i] = f(a0, b[i]);
    return;
  }
  const auto sa = broadcast_strides(as, out);
  const auto sb = broadcast_strides(bs, out);
  const std::size_t r = out.size();
  if (r == 0) {
    y[0] = f(a[0], b[0]);
    return;
  }
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t ia = 0, ib = 0;
  const std::int64_t inner = out[r - 1];
  const std::int64_t sai = sa[r - 1], sbi = sb[r - 1];
  for (std::int64_t i = 0; i < n; i += inner) {
    for (std::int64_t j = 0; j < inner; ++j) y[i + j] = f(a[ia + j * sai], b[ib + j * sbi]);
    // advance the outer odometer
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// dst[target] += sum of x over the axes where `target` broadcasts to `xs`.
void accumulate_sum_to(const double* x, const Shape& xs, const Shape& target, double* dst);

// y = broadcast of x (shape xs) to shape `out`.
void broadcast_into(const double* x, const Shape& xs, const Shape& out, double* y);

// C (+)= op(A) * op(B); A is ar x ac as stored, B is br x bc as stored.
void gemm(const double* A, std::int64_t ar, std::int64_t ac, bool ta, const double* B,
          std::int64_t br, std::int64_t bc, bool tb, double* C, bool accumulate);

struct ConvDims {
  std::int64_t n, c, h, w;  // input
  std::int64_t o, kh, kw;   // filters
  std::int64_t ho, wo;      // output
  int stride, pad;
};

void conv2d_forward(const ConvDims& d, const double* x, const double* w, double* y, bool accumulate);
void conv2d_backward_input(const ConvDims& d, const double* g, const double* w, double* dx);
void conv2d_backward_weight(const ConvDims& d, const double* x, const double* g, double* dw);

}  // namespace pft::ad::kernel
