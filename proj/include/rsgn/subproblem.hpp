#pragma once

// Approximate minimisation of the reduced Gauss-Newton model
//     m(s) = f0 + <g, s> + 1/2 <s, B s>,   B = J_S^T J_S,
// either inside a trust region |s| <= delta or with a (sigma/2)|s|^2 penalty.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "rsgn/core.hpp"

namespace rsgn {

class ReducedModel {
 public:
  /// Model built from a sketched Jacobian (n x l) and the residual at x_k.
  static ReducedModel from_sketched_jacobian(double f0, Matrix js, const Vector& residual) {
    require_size(residual.size(), js.rows(), "model residual");
    Vector g = js.transpose() * residual;
    return ReducedModel(f0, std::move(g), std::move(js), std::nullopt);
  }

  /// Model with an explicit symmetric PSD curvature matrix.
  static ReducedModel from_hessian(double f0, Vector g, Matrix b) {
    if (b.rows() != b.cols()) throw DimensionError("model curvature must be square");
    require_size(g.size(), b.rows(), "model gradient");
    return ReducedModel(f0, std::move(g), std::nullopt, std::move(b));
  }

  Index dimension() const { return g_.size(); }
  double f0() const { return f0_; }
  const Vector& gradient() const { return g_; }

  /// v -> B v
  Vector apply_b(const Vector& v) const {
    if (js_) return js_->transpose() * (*js_ * v);
    return *b_ * v;
  }

  /// <v, B v>, computed as |J_S v|^2 when the Jacobian factor is available.
  double curvature(const Vector& v) const {
    if (js_) return (*js_ * v).squaredNorm();
    return v.dot(*b_ * v);
  }

  double value(const Vector& s) const { return f0_ + g_.dot(s) + 0.5 * curvature(s); }

  /// m(0) - m(s)
  double decrease(const Vector& s) const { return -(g_.dot(s) + 0.5 * curvature(s)); }

  /// Cached power-iteration estimate of |B|_2, never below the Rayleigh quotient of g.
  double b_norm_estimate() const { return b_norm_; }

 private:
  ReducedModel(double f0, Vector g, std::optional<Matrix> js, std::optional<Matrix> b)
      : f0_(f0), g_(std::move(g)), js_(std::move(js)), b_(std::move(b)) {
    b_norm_ = estimate_b_norm(30);
  }

  double estimate_b_norm(int iterations) const {
    const Index l = g_.size();
    if (l == 0) return 0.0;
    double best = 0.0;
    const double gg = g_.squaredNorm();
    if (gg > 0.0) best = curvature(g_) / gg;
    // Start from g tilted towards the all-ones direction so a g orthogonal to
    // the leading eigenvector does not pin the estimate.
    Vector v = Vector::Ones(l) / std::sqrt(static_cast<double>(l));
    if (gg > 0.0) v += g_ / std::sqrt(gg);
    const double nv = v.norm();
    if (nv == 0.0) return best;
    v /= nv;
    for (int it = 0; it < iterations; ++it) {
      Vector w = apply_b(v);
      best = std::max(best, v.dot(w));
      const double nw = w.norm();
      if (nw == 0.0) break;
      v = w / nw;
    }
    return best;
  }

  double f0_;
  Vector g_;
  std::optional<Matrix> js_;
  std::optional<Matrix> b_;
  double b_norm_ = 0.0;
};

struct SubproblemResult {
  Vector step;
  /// m(0) - m(step)
  double predicted_decrease = 0.0;
  bool on_boundary = false;
  int cg_iterations = 0;
};

/// Model minimiser along -g inside |s| <= delta.
inline SubproblemResult cauchy_point(const ReducedModel& model, double delta) {
  if (!(delta > 0.0)) throw ParameterError("trust-region radius must be positive");
  const Vector& g = model.gradient();
  const double gnorm = g.norm();
  SubproblemResult out;
  out.step = Vector::Zero(g.size());
  if (gnorm == 0.0) return out;
  const double gbg = model.curvature(g);
  double alpha = delta / gnorm;
  if (gbg > 0.0) alpha = std::min(alpha, g.squaredNorm() / gbg);
  out.on_boundary = alpha * gnorm >= delta * (1.0 - 1e-14);
  out.step = -alpha * g;
  out.predicted_decrease = model.decrease(out.step);
  return out;
}

namespace detail {

/// Largest tau >= 0 with |s + tau p| = delta.
inline double boundary_tau(const Vector& s, const Vector& p, double delta) {
  const double pp = p.squaredNorm();
  const double sp = s.dot(p);
  const double ss = s.squaredNorm();
  const double disc = std::max(0.0, sp * sp + pp * (delta * delta - ss));
  // Stable root of pp tau^2 + 2 sp tau + (ss - delta^2) = 0.
  if (sp > 0.0) return (delta * delta - ss) / (sp + std::sqrt(disc));
  return (-sp + std::sqrt(disc)) / pp;
}

}  // namespace detail

/// Steihaug-Toint truncated CG for min m(s) s.t. |s| <= delta. The first CG
/// iterate is the Cauchy point, so the returned decrease dominates it; this is
/// re-checked and the Cauchy point is returned if rounding ever breaks it.
inline SubproblemResult steihaug_cg(const ReducedModel& model, double delta, double rel_tol = 1e-8,
                                    int max_iter = -1) {
  if (!(delta > 0.0)) throw ParameterError("trust-region radius must be positive");
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw ParameterError("CG tolerance must lie in (0, 1)");
  const Index l = model.dimension();
  if (max_iter < 0) max_iter = static_cast<int>(2 * l);
  if (max_iter < 1) throw ParameterError("CG needs max_iter >= 1");

  const Vector& g = model.gradient();
  const double gnorm = g.norm();
  SubproblemResult out;
  out.step = Vector::Zero(l);
  if (gnorm == 0.0) return out;

  Vector s = Vector::Zero(l);
  Vector r = g;  // r = B s + g
  Vector p = -r;
  double rr = r.squaredNorm();
  const double stop = rel_tol * gnorm;
  bool boundary = false;
  int it = 0;
  while (it < max_iter) {
    ++it;
    const Vector bp = model.apply_b(p);
    const double kappa = p.dot(bp);
    if (!(kappa > std::numeric_limits<double>::epsilon() * p.squaredNorm()) ||
        !std::isfinite(kappa)) {
      s += detail::boundary_tau(s, p, delta) * p;
      boundary = true;
      break;
    }
    const double alpha = rr / kappa;
    const Vector trial = s + alpha * p;
    if (trial.norm() >= delta) {
      s += detail::boundary_tau(s, p, delta) * p;
      boundary = true;
      break;
    }
    s = trial;
    r += alpha * bp;
    const double rr_next = r.squaredNorm();
    if (std::sqrt(rr_next) <= stop) break;
    p = -r + (rr_next / rr) * p;
    rr = rr_next;
  }

  out.step = std::move(s);
  out.predicted_decrease = model.decrease(out.step);
  out.on_boundary = boundary;
  out.cg_iterations = it;

  const SubproblemResult cauchy = cauchy_point(model, delta);
  if (!std::isfinite(out.predicted_decrease) ||
      out.predicted_decrease < cauchy.predicted_decrease ||
      out.step.norm() > delta * (1.0 + 1e-10)) {
    SubproblemResult fallback = cauchy;
    fallback.cg_iterations = it;
    return fallback;
  }
  return out;
}

/// CG solve of (B + sigma I) s = -g; the decrease is measured on m alone.
inline SubproblemResult regularized_solve(const ReducedModel& model, double sigma,
                                          double rel_tol = 1e-8, int max_iter = -1) {
  if (!(sigma > 0.0)) throw ParameterError("regularisation weight must be positive");
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw ParameterError("CG tolerance must lie in (0, 1)");
  const Index l = model.dimension();
  if (max_iter < 0) max_iter = static_cast<int>(2 * l);
  if (max_iter < 1) throw ParameterError("CG needs max_iter >= 1");

  const Vector& g = model.gradient();
  const double gnorm = g.norm();
  SubproblemResult out;
  out.step = Vector::Zero(l);
  if (gnorm == 0.0) return out;

  Vector s = Vector::Zero(l);
  Vector r = g;
  Vector p = -r;
  double rr = r.squaredNorm();
  const double stop = rel_tol * gnorm;
  int it = 0;
  while (it < max_iter && std::sqrt(rr) > stop) {
    ++it;
    const Vector ap = model.apply_b(p) + sigma * p;
    const double kappa = p.dot(ap);
    if (!(kappa > 0.0) || !std::isfinite(kappa)) break;
    const double alpha = rr / kappa;
    s += alpha * p;
    r += alpha * ap;
    const double rr_next = r.squaredNorm();
    p = -r + (rr_next / rr) * p;
    rr = rr_next;
  }
  out.step = std::move(s);
  out.predicted_decrease = model.decrease(out.step);
  out.cg_iterations = it;
  return out;
}

/// Checks m(0) - m(s) >= c1 |g| min(delta, |g| / |B|) with 1e-12 absolute slack.
inline bool verify_cauchy(const ReducedModel& model, double delta, const Vector& s, double c1) {
  if (!(c1 > 0.0 && c1 <= 1.0)) throw ParameterError("c1 must lie in (0, 1]");
  const double gnorm = model.gradient().norm();
  const double bnorm = model.b_norm_estimate();
  const double reach = bnorm > 0.0 ? std::min(delta, gnorm / bnorm) : delta;
  return model.decrease(s) >= c1 * gnorm * reach - 1e-12;
}

}  // namespace rsgn
