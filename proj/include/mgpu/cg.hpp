#pragma once

#include <cmath>

namespace mgpu {

struct CgParams {
  int max_iters = 30;
  double tol = 1e-2;  // relative residual
};

struct CgResult {
  int iterations = 0;
  double residual = 0.0;  // relative, |r_k| / |r_0|
  bool breakdown = false;
};

/// Conjugate gradients for a self-adjoint positive definite operator, from a
/// zero initial guess. `Space` supplies the vector arithmetic:
///   V make() const;              zero vector
///   double dot(const V&, const V&) const;   real part of the inner product
///   void axpy(double a, const V& x, V& y) const;   y += a x
///   void xpay(const V& x, double a, V& y) const;   y = x + a y
///   void copy(const V& src, V& dst) const;
///   void zero(V&) const;
/// `apply(x, out)` evaluates the operator.
template <class V, class Space, class Apply>
CgResult cg_solve(const Space& space, Apply&& apply, const V& rhs, V& x, const CgParams& params) {
  CgResult res;
  space.zero(x);
  V r = space.make();
  V p = space.make();
  V ap = space.make();
  space.copy(rhs, r);
  space.copy(rhs, p);

  double rr = space.dot(r, r);
  const double rr0 = rr;
  if (!(rr0 > 0.0)) return res;
  const double stop = params.tol * params.tol * rr0;

  for (int it = 0; it < params.max_iters; ++it) {
    apply(p, ap);
    const double pap = space.dot(p, ap);
    // Curvature vanished or went negative: keep the best iterate so far.
    if (!(pap > 1e-30 * rr) || !std::isfinite(pap)) {
      res.breakdown = true;
      break;
    }
    const double step = rr / pap;
    space.axpy(step, p, x);
    space.axpy(-step, ap, r);
    const double rr_new = space.dot(r, r);
    res.iterations = it + 1;
    res.residual = std::sqrt(rr_new / rr0);
    if (rr_new <= stop) break;
    space.xpay(r, rr_new / rr, p);
    rr = rr_new;
  }
  return res;
}

}  // namespace mgpu
