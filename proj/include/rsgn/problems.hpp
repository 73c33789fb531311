#pragma once

// Nonlinear least-squares problems f(x) = 1/2 |r(x)|^2 with matrix-free
// Jacobian actions, plus builders for the problems shipped with the library.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

#include "rsgn/core.hpp"
#include "rsgn/sketch.hpp"

namespace rsgn {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor>;

/// Central-difference step used by the derivative fallbacks.
inline double central_difference_step(const Vector& x) {
  const double scale = x.size() ? 1.0 + x.lpNorm<Eigen::Infinity>() : 1.0;
  return std::cbrt(std::numeric_limits<double>::epsilon()) * scale;
}

/// Residual evaluator plus Jacobian actions. Only `residual` is mandatory;
/// without `jvp`, Jacobian actions use central differences. The rest are fast
/// paths the solver uses when present.
struct ProblemEvaluators {
  std::function<Vector(const Vector& x)> residual;
  /// (x, v) -> J(x) v
  std::function<Vector(const Vector& x, const Vector& v)> jvp;
  /// (x, cols) -> the selected columns of J(x)
  std::function<Matrix(const Vector& x, std::span<const Index> cols)> columns;
  /// (x, V) -> J(x) V for a d x k block of directions
  std::function<Matrix(const Vector& x, const Matrix& v)> block_jvp;
  /// x -> J(x)^T r(x)
  std::function<Vector(const Vector& x)> gradient;
};

class NlsProblem {
 public:
  NlsProblem(std::string name, Index dimension, Index residual_count, ProblemEvaluators eval)
      : name_(std::move(name)), d_(dimension), n_(residual_count), eval_(std::move(eval)) {
    if (d_ < 1 || n_ < 1) throw DimensionError("problem dimensions must be positive");
    if (!eval_.residual) throw ParameterError("problem needs a residual evaluator");
    start_ = Vector::Zero(d_);
  }

  const std::string& name() const { return name_; }
  Index dimension() const { return d_; }
  Index residual_count() const { return n_; }

  /// r(x); throws EvaluationError naming the first non-finite component.
  Vector residual(const Vector& x) const {
    require_size(x.size(), d_, "residual argument");
    Vector r = eval_.residual(x);
    require_size(r.size(), n_, "residual value");
    for (Index i = 0; i < r.size(); ++i) {
      if (!std::isfinite(r[i])) throw EvaluationError("non-finite residual", i);
    }
    return r;
  }

  Vector jvp(const Vector& x, const Vector& v) const {
    require_size(x.size(), d_, "jvp point");
    require_size(v.size(), d_, "jvp direction");
    if (eval_.jvp) return eval_.jvp(x, v);
    const double vnorm = v.norm();
    if (vnorm == 0.0) return Vector::Zero(n_);
    const double h = central_difference_step(x);
    const Vector u = (h / vnorm) * v;
    return (residual(x + u) - residual(x - u)) * (vnorm / (2.0 * h));
  }

  bool has_analytic_jvp() const { return static_cast<bool>(eval_.jvp); }

  bool has_columns() const { return static_cast<bool>(eval_.columns); }

  /// Selected Jacobian columns; falls back to basis-vector jvps.
  Matrix columns(const Vector& x, std::span<const Index> cols) const {
    require_size(x.size(), d_, "column extraction point");
    for (Index c : cols) {
      if (c < 0 || c >= d_) throw DimensionError("column index out of range");
    }
    if (eval_.columns) return eval_.columns(x, cols);
    Matrix out(n_, static_cast<Index>(cols.size()));
    Vector e = Vector::Zero(d_);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      e[cols[k]] = 1.0;
      out.col(static_cast<Index>(k)) = jvp(x, e);
      e[cols[k]] = 0.0;
    }
    return out;
  }

  /// J(x) V, column by column unless a block evaluator exists.
  Matrix jacobian_times(const Vector& x, const Matrix& v) const {
    require_size(x.size(), d_, "block jvp point");
    require_size(v.rows(), d_, "block jvp directions");
    if (eval_.block_jvp) return eval_.block_jvp(x, v);
    Matrix out(n_, v.cols());
    for (Index k = 0; k < v.cols(); ++k) out.col(k) = jvp(x, v.col(k));
    return out;
  }

  bool has_analytic_gradient() const { return static_cast<bool>(eval_.gradient); }
  std::optional<Vector> analytic_gradient(const Vector& x) const {
    if (!eval_.gradient) return std::nullopt;
    require_size(x.size(), d_, "gradient point");
    return eval_.gradient(x);
  }

  /// Conventional starting point, if the problem has one (else zeros).
  const Vector& standard_start() const { return start_; }
  void set_standard_start(Vector x0) {
    require_size(x0.size(), d_, "standard start");
    start_ = std::move(x0);
  }

  std::optional<double> known_minimum() const { return fstar_; }
  void set_known_minimum(double f) { fstar_ = f; }

 private:
  std::string name_;
  Index d_;
  Index n_;
  ProblemEvaluators eval_;
  Vector start_;
  std::optional<double> fstar_;
};

/// f(x) = 1/2 |r(x)|^2
inline double eval_objective(const NlsProblem& p, const Vector& x) {
  return 0.5 * p.residual(x).squaredNorm();
}

/// J(x) S^T, the n x l Jacobian restricted to the sketched subspace.
struct SketchedJacobian {
  Matrix js;
};

inline SketchedJacobian eval_sketched_jacobian(const NlsProblem& p, const Vector& x,
                                               const SketchOperator& s) {
  require_size(x.size(), p.dimension(), "sketched jacobian point");
  require_size(s.cols(), p.dimension(), "sketch column count");
  if (auto support = s.column_support()) {
    Matrix js = p.columns(x, *support);
    if (s.kind().family != SketchKind::Family::Identity) js *= s.selection_scale();
    return {std::move(js)};
  }
  return {p.jacobian_times(x, s.transpose_dense())};
}

struct GradientEvaluation {
  Vector gradient;
  /// True when no analytic gradient existed and d Jacobian actions (finite
  /// differences if the problem has no jvp) were spent instead.
  bool used_fallback = false;
};

/// Full gradient J(x)^T r(x). Diagnostic only; the solver never needs it.
inline GradientEvaluation eval_full_gradient(const NlsProblem& p, const Vector& x) {
  if (auto g = p.analytic_gradient(x)) return {std::move(*g), false};
  const Vector r = p.residual(x);
  Vector g(p.dimension());
  Vector e = Vector::Zero(p.dimension());
  for (Index j = 0; j < p.dimension(); ++j) {
    e[j] = 1.0;
    g[j] = p.jvp(x, e).dot(r);
    e[j] = 0.0;
  }
  return {std::move(g), true};
}

// ---------------------------------------------------------------------------
// Builders

/// r(x) = A x - b
inline NlsProblem build_linear(Matrix a, Vector b) {
  if (a.rows() != b.size()) throw DimensionError("linear problem: A rows must match b");
  if (a.rows() < 1 || a.cols() < 1) throw DimensionError("linear problem: empty A");
  auto data = std::make_shared<const std::pair<Matrix, Vector>>(std::move(a), std::move(b));
  const Index n = data->first.rows();
  const Index d = data->first.cols();
  ProblemEvaluators ev;
  ev.residual = [data](const Vector& x) -> Vector { return data->first * x - data->second; };
  ev.jvp = [data](const Vector&, const Vector& v) -> Vector { return data->first * v; };
  ev.columns = [data](const Vector&, std::span<const Index> cols) {
    Matrix out(data->first.rows(), static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k)
      out.col(static_cast<Index>(k)) = data->first.col(cols[k]);
    return out;
  };
  ev.block_jvp = [data](const Vector&, const Matrix& v) -> Matrix { return data->first * v; };
  ev.gradient = [data](const Vector& x) -> Vector {
    return data->first.transpose() * (data->first * x - data->second);
  };
  return NlsProblem("linear", d, n, std::move(ev));
}

namespace detail {

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

template <typename Obs>
Matrix gather_columns(const Obs& a, std::span<const Index> cols) {
  Matrix out(a.rows(), static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Index>(k)) = a.col(cols[k]);
  return out;
}

}  // namespace detail

struct LogisticOptions {
  double lambda = 0.0;
  /// Append a constant feature so the model has an intercept.
  bool intercept = false;
};

/// Logistic regression as least squares: r_i(x) = log(1 + exp(-y_i a_i^T x)) for
/// each observation, followed, when lambda > 0, by d residuals sqrt(2 lambda) x_j
/// whose half sum of squares is exactly lambda |x|^2.
///
/// `Obs` is Matrix or SparseMatrix (n x d, one observation per row).
template <typename Obs>
  requires std::is_same_v<Obs, Matrix> || std::is_same_v<Obs, SparseMatrix>
NlsProblem build_logistic_from(Obs observations, const Vector& labels, LogisticOptions opts) {
  if (observations.rows() != labels.size()) {
    throw DimensionError("logistic problem: observation rows must match label count");
  }
  if (observations.rows() < 1 || observations.cols() < 1) {
    throw DimensionError("logistic problem: empty observation matrix");
  }
  if (!(opts.lambda >= 0.0) || !std::isfinite(opts.lambda)) {
    throw ParameterError("logistic problem: lambda must be finite and nonnegative");
  }
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1.0 && labels[i] != -1.0) {
      throw ValidationError("logistic problem: label " + std::to_string(i) + " is not +-1");
    }
  }
  if (opts.intercept) {
    const Index n = observations.rows();
    const Index d = observations.cols();
    Obs widened(n, d + 1);
    if constexpr (std::is_same_v<Obs, SparseMatrix>) {
      std::vector<Eigen::Triplet<double>> trips;
      trips.reserve(static_cast<std::size_t>(observations.nonZeros() + n));
      for (Index j = 0; j < d; ++j)
        for (typename Obs::InnerIterator it(observations, j); it; ++it)
          trips.emplace_back(it.row(), j, it.value());
      for (Index i = 0; i < n; ++i) trips.emplace_back(i, d, 1.0);
      widened.setFromTriplets(trips.begin(), trips.end());
    } else {
      widened.leftCols(d) = observations;
      widened.col(d).setOnes();
    }
    observations = std::move(widened);
  }

  struct Data {
    Obs a;
    Vector y;
    double reg;  // sqrt(2 lambda)
    double lambda;
  };
  auto data = std::make_shared<const Data>(
      Data{std::move(observations), labels, std::sqrt(2.0 * opts.lambda), opts.lambda});
  const Index n = data->a.rows();
  const Index d = data->a.cols();
  const bool regularized = opts.lambda > 0.0;
  const Index residuals = regularized ? n + d : n;

  // margins z_i = y_i a_i^T x
  auto margins = [data](const Vector& x) -> Vector {
    return (data->a * x).cwiseProduct(data->y);
  };
  // dr_i/d(a_i^T x) = -y_i sigma(-z_i)
  auto weights = [data, margins](const Vector& x) -> Vector {
    const Vector z = margins(x);
    Vector w(z.size());
    for (Index i = 0; i < z.size(); ++i) w[i] = -data->y[i] * detail::sigmoid(-z[i]);
    return w;
  };

  ProblemEvaluators ev;
  ev.residual = [data, margins, regularized, n, d](const Vector& x) -> Vector {
    const Vector z = margins(x);
    Vector r(regularized ? n + d : n);
    for (Index i = 0; i < n; ++i) r[i] = detail::softplus(-z[i]);
    if (regularized) r.tail(d) = data->reg * x;
    return r;
  };
  ev.jvp = [data, weights, regularized, n, d](const Vector& x, const Vector& v) -> Vector {
    Vector out(regularized ? n + d : n);
    out.head(n) = weights(x).cwiseProduct(data->a * v);
    if (regularized) out.tail(d) = data->reg * v;
    return out;
  };
  ev.columns = [data, weights, regularized, n](const Vector& x, std::span<const Index> cols) {
    const Vector w = weights(x);
    const Index k = static_cast<Index>(cols.size());
    Matrix out = Matrix::Zero(regularized ? n + data->a.cols() : n, k);
    out.topRows(n) = w.asDiagonal() * detail::gather_columns(data->a, cols);
    if (regularized) {
      for (Index c = 0; c < k; ++c) out(n + cols[static_cast<std::size_t>(c)], c) = data->reg;
    }
    return out;
  };
  ev.block_jvp = [data, weights, regularized, n, d](const Vector& x, const Matrix& v) -> Matrix {
    Matrix out(regularized ? n + d : n, v.cols());
    out.topRows(n) = weights(x).asDiagonal() * (data->a * v);
    if (regularized) out.bottomRows(d) = data->reg * v;
    return out;
  };
  ev.gradient = [data, weights, margins, n](const Vector& x) -> Vector {
    const Vector z = margins(x);
    Vector rw(n);
    const Vector w = weights(x);
    for (Index i = 0; i < n; ++i) rw[i] = detail::softplus(-z[i]) * w[i];
    Vector g = data->a.transpose() * rw;
    if (data->lambda > 0.0) g += 2.0 * data->lambda * x;
    return g;
  };
  NlsProblem p("logistic", d, residuals, std::move(ev));
  p.set_standard_start(Vector::Zero(d));
  return p;
}

inline NlsProblem build_logistic(Matrix observations, const Vector& labels,
                                 LogisticOptions opts = {}) {
  return build_logistic_from(std::move(observations), labels, opts);
}

inline NlsProblem build_logistic(SparseMatrix observations, const Vector& labels,
                                 LogisticOptions opts = {}) {
  return build_logistic_from(std::move(observations), labels, opts);
}

/// Linearly separable synthetic classification data: Gaussian observations,
/// labels from a random hyperplane, each point pushed `margin` away from it.
struct SyntheticData {
  Matrix observations;
  Vector labels;
};

inline SyntheticData make_separable_data(Index n, Index d, double margin, std::uint64_t seed) {
  if (n < 1 || d < 1) throw DimensionError("synthetic data needs n, d >= 1");
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Vector w(d);
  for (Index j = 0; j < d; ++j) w[j] = normal(rng);
  w.normalize();
  Matrix a(n, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < n; ++i) a(i, j) = normal(rng) / std::sqrt(static_cast<double>(d));
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    const double side = a.row(i).dot(w);
    y[i] = side >= 0.0 ? 1.0 : -1.0;
    a.row(i) += (y[i] * margin) * w.transpose();
  }
  return {std::move(a), std::move(y)};
}

/// Extended Rosenbrock: r_{2i} = 10 (x_{2i+1} - x_{2i}^2), r_{2i+1} = 1 - x_{2i}.
inline NlsProblem build_extended_rosenbrock(Index d) {
  if (d < 2 || d % 2 != 0) throw ParameterError("extended_rosenbrock needs even d >= 2");
  ProblemEvaluators ev;
  ev.residual = [d](const Vector& x) -> Vector {
    Vector r(d);
    for (Index i = 0; i < d; i += 2) {
      r[i] = 10.0 * (x[i + 1] - x[i] * x[i]);
      r[i + 1] = 1.0 - x[i];
    }
    return r;
  };
  ev.jvp = [d](const Vector& x, const Vector& v) -> Vector {
    Vector out(d);
    for (Index i = 0; i < d; i += 2) {
      out[i] = 10.0 * (v[i + 1] - 2.0 * x[i] * v[i]);
      out[i + 1] = -v[i];
    }
    return out;
  };
  ev.columns = [d](const Vector& x, std::span<const Index> cols) {
    Matrix out = Matrix::Zero(d, static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const Index j = cols[k];
      const Index c = static_cast<Index>(k);
      if (j % 2 == 0) {
        out(j, c) = -20.0 * x[j];
        out(j + 1, c) = -1.0;
      } else {
        out(j - 1, c) = 10.0;
      }
    }
    return out;
  };
  NlsProblem p("extended_rosenbrock", d, d, std::move(ev));
  Vector x0(d);
  for (Index i = 0; i < d; i += 2) {
    x0[i] = -1.2;
    x0[i + 1] = 1.0;
  }
  p.set_standard_start(std::move(x0));
  p.set_known_minimum(0.0);
  return p;
}

/// Broyden tridiagonal: r_i = (3 - 2 x_i) x_i - x_{i-1} - 2 x_{i+1} + 1, x_{-1} = x_d = 0.
inline NlsProblem build_broyden_tridiagonal(Index d) {
  if (d < 1) throw ParameterError("broyden_tridiagonal needs d >= 1");
  ProblemEvaluators ev;
  ev.residual = [d](const Vector& x) -> Vector {
    Vector r(d);
    for (Index i = 0; i < d; ++i) {
      const double left = i > 0 ? x[i - 1] : 0.0;
      const double right = i + 1 < d ? x[i + 1] : 0.0;
      r[i] = (3.0 - 2.0 * x[i]) * x[i] - left - 2.0 * right + 1.0;
    }
    return r;
  };
  ev.jvp = [d](const Vector& x, const Vector& v) -> Vector {
    Vector out(d);
    for (Index i = 0; i < d; ++i) {
      const double left = i > 0 ? v[i - 1] : 0.0;
      const double right = i + 1 < d ? v[i + 1] : 0.0;
      out[i] = (3.0 - 4.0 * x[i]) * v[i] - left - 2.0 * right;
    }
    return out;
  };
  ev.columns = [d](const Vector& x, std::span<const Index> cols) {
    Matrix out = Matrix::Zero(d, static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const Index j = cols[k];
      const Index c = static_cast<Index>(k);
      out(j, c) = 3.0 - 4.0 * x[j];
      if (j + 1 < d) out(j + 1, c) = -1.0;
      if (j > 0) out(j - 1, c) = -2.0;
    }
    return out;
  };
  NlsProblem p("broyden_tridiagonal", d, d, std::move(ev));
  p.set_standard_start(Vector::Constant(d, -1.0));
  p.set_known_minimum(0.0);
  return p;
}

/// Chained singular (chained Powell) function: for each i = 0, 2, 4, ..., d-4
///   x_i + 10 x_{i+1},  sqrt(5) (x_{i+2} - x_{i+3}),
///   (x_{i+1} - 2 x_{i+2})^2,  sqrt(10) (x_i - 10 x_{i+3})^2.
inline NlsProblem build_chained_singular(Index d) {
  if (d < 4 || d % 2 != 0) throw ParameterError("chained_singular needs even d >= 4");
  const Index blocks = (d - 2) / 2;
  const Index n = 4 * blocks;
  const double s5 = std::sqrt(5.0);
  const double s10 = std::sqrt(10.0);
  ProblemEvaluators ev;
  ev.residual = [=](const Vector& x) -> Vector {
    Vector r(n);
    for (Index b = 0; b < blocks; ++b) {
      const Index i = 2 * b;
      const double u = x[i + 1] - 2.0 * x[i + 2];
      const double w = x[i] - 10.0 * x[i + 3];
      r[4 * b] = x[i] + 10.0 * x[i + 1];
      r[4 * b + 1] = s5 * (x[i + 2] - x[i + 3]);
      r[4 * b + 2] = u * u;
      r[4 * b + 3] = s10 * w * w;
    }
    return r;
  };
  ev.jvp = [=](const Vector& x, const Vector& v) -> Vector {
    Vector out(n);
    for (Index b = 0; b < blocks; ++b) {
      const Index i = 2 * b;
      const double u = x[i + 1] - 2.0 * x[i + 2];
      const double w = x[i] - 10.0 * x[i + 3];
      out[4 * b] = v[i] + 10.0 * v[i + 1];
      out[4 * b + 1] = s5 * (v[i + 2] - v[i + 3]);
      out[4 * b + 2] = 2.0 * u * (v[i + 1] - 2.0 * v[i + 2]);
      out[4 * b + 3] = 2.0 * s10 * w * (v[i] - 10.0 * v[i + 3]);
    }
    return out;
  };
  NlsProblem p("chained_singular", d, n, std::move(ev));
  Vector x0(d);
  const double pattern[4] = {3.0, -1.0, 0.0, 1.0};
  for (Index j = 0; j < d; ++j) x0[j] = pattern[j % 4];
  p.set_standard_start(std::move(x0));
  p.set_known_minimum(0.0);
  return p;
}

/// Named analytic test problem: extended_rosenbrock, broyden_tridiagonal or chained_singular.
inline NlsProblem build_test_problem(const std::string& name, Index d) {
  if (name == "extended_rosenbrock") return build_extended_rosenbrock(d);
  if (name == "broyden_tridiagonal") return build_broyden_tridiagonal(d);
  if (name == "chained_singular") return build_chained_singular(d);
  throw ParameterError("unknown test problem '" + name + "'");
}

}  // namespace rsgn
