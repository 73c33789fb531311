#pragma once

// Randomised subspace Gauss-Newton outer iterations.
//
// Every iteration draws a fresh sketch S_k, builds the reduced model from
// J(x_k) S_k^T, computes a step s_k in R^l and tests the trial point
// x_k + S_k^T s_k with the ratio of actual to predicted decrease. Two step
// control schemes are provided: a trust region (rsgn_tr) and quadratic
// regularisation (rsgn_qr).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rsgn/core.hpp"
#include "rsgn/problems.hpp"
#include "rsgn/sketch.hpp"
#include "rsgn/subproblem.hpp"

namespace rsgn {

/// Parameters shared by both step-control schemes.
struct OuterConfig {
  double eta = 0.1;
  double gamma1 = 0.5;
  int c = 1;
  /// Expansion factor; derived as gamma1^{-c} when unset.
  std::optional<double> gamma2;
  /// Sketch dimension l.
  Index l = 1;
  SketchKind sketch = SketchKind::sampling();
  double c1 = 0.5;
  int max_iters = 100;
  std::optional<double> f_target;
  /// Evaluate the full gradient every this many iterations (0 = never).
  int grad_diag_every = 0;
  std::uint64_t seed = 0;
  double cg_rel_tol = 1e-8;
  /// CG iteration cap; 2 l when unset.
  std::optional<int> cg_max_iter;
  /// Starting point; zero when unset.
  std::optional<Vector> x0;
  /// Store x_{k+1} after every iteration in RunTrace::iterates.
  bool keep_iterates = false;

  double expansion() const { return gamma2.value_or(std::pow(gamma1, -c)); }
};

struct TrConfig : OuterConfig {
  double delta0 = 1.0;
  /// Radius cap; 1e6 * delta0 when unset.
  std::optional<double> delta_max;
  /// Radius floor; falling below ends the run with numerical_failure.
  double delta_min = 1e-16;
};

struct QrConfig : OuterConfig {
  double sigma0 = 1.0;
  double sigma_min = 1e-16;
  /// Regularisation ceiling; exceeding it ends the run with numerical_failure.
  double sigma_max = 1e16;
};

enum class Termination { BudgetExhausted, FTargetReached, NumericalFailure };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::BudgetExhausted: return "budget_exhausted";
    case Termination::FTargetReached: return "f_target_reached";
    case Termination::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

struct IterRecord {
  int k = 0;
  /// f(x_{k+1}), i.e. the objective after this iteration's accept/reject.
  double f_value = 0.0;
  double rho = 0.0;
  /// Radius (TR) or regularisation weight (QR) used to compute this step.
  double delta_or_sigma = 0.0;
  bool accepted = false;
  double predicted_decrease = 0.0;
  double step_norm = 0.0;
  std::uint64_t sketch_seed = 0;
  double wall_clock_ms = 0.0;
  /// |grad f(x_{k+1})|, when the diagnostic ran ((k + 1) divisible by grad_diag_every).
  std::optional<double> full_gradient_norm;
  /// Whether the step met the sufficient-decrease test against the Cauchy bound.
  bool cauchy_ok = true;
  int cg_iterations = 0;
};

struct RunTrace {
  OuterConfig config;
  std::string variant;  ///< "tr" or "qr"
  double initial_value = 0.0;
  double initial_radius = 0.0;
  std::optional<double> initial_gradient_norm;
  std::vector<IterRecord> records;
  /// x_{k+1} per record, only with keep_iterates.
  std::vector<Vector> iterates;
  Vector x;
  Termination termination = Termination::BudgetExhausted;
};

/// Ratio of actual to predicted decrease. Vanishing predicted decrease or a
/// non-finite trial value yields -inf, which forces rejection.
inline double compute_rho(double f_current, double f_trial, double model_decrease) {
  constexpr double kDenominatorGuard = 1e-15;
  if (!std::isfinite(f_trial)) return -std::numeric_limits<double>::infinity();
  if (!(model_decrease > kDenominatorGuard * std::max(1.0, f_current))) {
    return -std::numeric_limits<double>::infinity();
  }
  return (f_current - f_trial) / model_decrease;
}

struct ConfigReport {
  /// (c + 2) / (2c + 2): the success probability the sketch must exceed.
  double c2 = 0.0;
  std::vector<std::string> warnings;
};

/// Structural checks on the outer parameters; throws ParameterError on violations.
inline ConfigReport validate_config(const OuterConfig& cfg, Index d) {
  if (!(cfg.eta > 0.0 && cfg.eta < 1.0)) throw ParameterError("eta must lie in (0, 1)");
  if (!(cfg.gamma1 > 0.0 && cfg.gamma1 < 1.0)) throw ParameterError("gamma1 must lie in (0, 1)");
  if (cfg.c < 1) throw ParameterError("c must be a positive integer");
  const double expected = std::pow(cfg.gamma1, -cfg.c);
  const double g2 = cfg.expansion();
  if (!(g2 > 1.0) || std::abs(g2 - expected) > 1e-12 * expected) {
    throw ParameterError("gamma2 must equal gamma1^-c (" + std::to_string(expected) + ")");
  }
  if (cfg.l < 1 || cfg.l > d) throw ParameterError("sketch dimension must satisfy 1 <= l <= d");
  if (cfg.sketch.family == SketchKind::Family::Identity && cfg.l != d) {
    throw ParameterError("identity sketch requires l == d");
  }
  if (cfg.sketch.family == SketchKind::Family::Hashing &&
      (cfg.sketch.nnz_per_column < 1 || cfg.sketch.nnz_per_column > cfg.l)) {
    throw ParameterError("hashing sketch requires 1 <= s <= l");
  }
  if (!(cfg.c1 > 0.0 && cfg.c1 <= 1.0)) throw ParameterError("c1 must lie in (0, 1]");
  if (cfg.max_iters < 0) throw ParameterError("iteration budget must be nonnegative");
  if (cfg.grad_diag_every < 0) throw ParameterError("grad_diag_every must be nonnegative");
  if (!(cfg.cg_rel_tol > 0.0 && cfg.cg_rel_tol < 1.0)) {
    throw ParameterError("cg_rel_tol must lie in (0, 1)");
  }
  if (cfg.cg_max_iter && *cfg.cg_max_iter < 1) throw ParameterError("cg_max_iter must be >= 1");
  if (cfg.x0) require_size(cfg.x0->size(), d, "starting point");

  ConfigReport report;
  report.c2 = (cfg.c + 2.0) / (2.0 * cfg.c + 2.0);
  report.warnings.push_back("c2 = " + std::to_string(report.c2) +
                            ": convergence theory needs the sketch to preserve the gradient "
                            "norm with probability above c2; this is not checked");
  if (cfg.c1 > 0.5) {
    report.warnings.push_back("c1 > 0.5 is stronger than the Cauchy point guarantees");
  }
  return report;
}

inline ConfigReport validate_config(const TrConfig& cfg, Index d) {
  if (!(cfg.delta0 > 0.0)) throw ParameterError("delta0 must be positive");
  if (cfg.delta_max && !(*cfg.delta_max >= cfg.delta0)) {
    throw ParameterError("delta_max must be at least delta0");
  }
  return validate_config(static_cast<const OuterConfig&>(cfg), d);
}

inline ConfigReport validate_config(const QrConfig& cfg, Index d) {
  if (!(cfg.sigma0 > 0.0)) throw ParameterError("sigma0 must be positive");
  if (!(cfg.sigma_min > 0.0)) throw ParameterError("sigma_min must be positive");
  return validate_config(static_cast<const OuterConfig&>(cfg), d);
}

namespace detail {

inline bool step_is_null(const SubproblemResult& s) {
  return s.step.size() == 0 || s.step.isZero(0.0);
}

/// Shared outer loop. `solve` maps (model, parameter) to a step; `radius`
/// gives the ball the Cauchy test is measured in; `update` maps
/// (parameter, accepted) to the next parameter; `out_of_range` flags a
/// parameter that should end the run.
template <typename Solve, typename Radius, typename Update, typename OutOfRange>
RunTrace run_outer(const NlsProblem& problem, const OuterConfig& cfg, double param0,
                   const char* variant, Solve&& solve, Radius&& radius, Update&& update,
                   OutOfRange&& out_of_range) {
  using clock = std::chrono::steady_clock;
  const Index d = problem.dimension();

  RunTrace trace;
  trace.config = cfg;
  trace.variant = variant;
  trace.initial_radius = param0;

  Vector x = cfg.x0 ? *cfg.x0 : Vector::Zero(d);
  trace.x = x;
  Vector r;
  double f = 0.0;
  try {
    r = problem.residual(x);
    f = 0.5 * r.squaredNorm();
  } catch (const EvaluationError&) {
    trace.initial_value = std::numeric_limits<double>::quiet_NaN();
    trace.termination = Termination::NumericalFailure;
    return trace;
  }
  trace.initial_value = f;
  if (!std::isfinite(f)) {
    trace.termination = Termination::NumericalFailure;
    return trace;
  }
  if (cfg.grad_diag_every > 0) {
    trace.initial_gradient_norm = eval_full_gradient(problem, x).gradient.norm();
  }

  double param = param0;
  for (int k = 0; k < cfg.max_iters; ++k) {
    if (cfg.f_target && f <= *cfg.f_target) {
      trace.termination = Termination::FTargetReached;
      break;
    }
    const auto start = clock::now();
    IterRecord rec;
    rec.k = k;
    rec.delta_or_sigma = param;

    rec.sketch_seed = derive_seed(cfg.seed, k);
    Rng rng(rec.sketch_seed);
    const SketchOperator sketch = draw_sketch(cfg.sketch, cfg.l, d, rng);
    SketchedJacobian js = eval_sketched_jacobian(problem, x, sketch);
    const ReducedModel model = ReducedModel::from_sketched_jacobian(f, std::move(js.js), r);

    const SubproblemResult step = solve(model, param);
    rec.predicted_decrease = step.predicted_decrease;
    rec.step_norm = step.step.norm();
    rec.cg_iterations = step.cg_iterations;
    rec.cauchy_ok =
        step_is_null(step) || verify_cauchy(model, radius(param, step), step.step, cfg.c1);

    double f_trial = std::numeric_limits<double>::infinity();
    Vector x_trial;
    Vector r_trial;
    if (!step_is_null(step)) {
      x_trial = x + sketch.apply_transpose(step.step);
      try {
        r_trial = problem.residual(x_trial);
        f_trial = 0.5 * r_trial.squaredNorm();
      } catch (const EvaluationError&) {
        f_trial = std::numeric_limits<double>::quiet_NaN();
      }
    }
    rec.rho = compute_rho(f, f_trial, step.predicted_decrease);
    rec.accepted = rec.rho >= cfg.eta;
    if (rec.accepted) {
      x = std::move(x_trial);
      r = std::move(r_trial);
      f = f_trial;
    }
    param = update(param, rec.accepted);
    rec.f_value = f;
    rec.wall_clock_ms =
        std::chrono::duration<double, std::milli>(clock::now() - start).count();
    // Diagnostic, kept out of the timing.
    if (cfg.grad_diag_every > 0 && (k + 1) % cfg.grad_diag_every == 0) {
      rec.full_gradient_norm = eval_full_gradient(problem, x).gradient.norm();
    }
    trace.records.push_back(std::move(rec));
    if (cfg.keep_iterates) trace.iterates.push_back(x);
    if (out_of_range(param)) {
      trace.termination = Termination::NumericalFailure;
      break;
    }
  }
  if (trace.termination == Termination::BudgetExhausted && cfg.f_target && f <= *cfg.f_target) {
    trace.termination = Termination::FTargetReached;
  }
  trace.x = std::move(x);
  return trace;
}

}  // namespace detail

/// Trust-region variant: accept iff rho >= eta, then delta *= gamma2,
/// otherwise delta *= gamma1.
inline RunTrace rsgn_tr(const NlsProblem& problem, const TrConfig& cfg) {
  validate_config(cfg, problem.dimension());
  const double gamma2 = cfg.expansion();
  const double delta_max = cfg.delta_max.value_or(1e6 * cfg.delta0);
  const int cg_max = cfg.cg_max_iter.value_or(static_cast<int>(2 * cfg.l));
  return detail::run_outer(
      problem, cfg, cfg.delta0, "tr",
      [&](const ReducedModel& m, double delta) {
        return steihaug_cg(m, delta, cfg.cg_rel_tol, cg_max);
      },
      [](double delta, const SubproblemResult&) { return delta; },
      [&](double delta, bool accepted) {
        return accepted ? std::min(delta_max, gamma2 * delta) : cfg.gamma1 * delta;
      },
      [&](double delta) { return delta < cfg.delta_min; });
}

/// Quadratic-regularisation variant: the step minimises m(s) + sigma/2 |s|^2;
/// accept iff rho >= eta, then sigma = max(sigma_min, sigma / gamma2),
/// otherwise sigma /= gamma1.
inline RunTrace rsgn_qr(const NlsProblem& problem, const QrConfig& cfg) {
  validate_config(cfg, problem.dimension());
  const double gamma2 = cfg.expansion();
  const int cg_max = cfg.cg_max_iter.value_or(static_cast<int>(2 * cfg.l));
  return detail::run_outer(
      problem, cfg, cfg.sigma0, "qr",
      [&](const ReducedModel& m, double sigma) {
        return regularized_solve(m, sigma, cfg.cg_rel_tol, cg_max);
      },
      // The regularised step minimises m over the ball of its own length.
      [](double, const SubproblemResult& s) { return s.step.norm(); },
      [&](double sigma, bool accepted) {
        return accepted ? std::max(cfg.sigma_min, sigma / gamma2) : sigma / cfg.gamma1;
      },
      [&](double sigma) { return !(sigma <= cfg.sigma_max); });
}

}  // namespace rsgn
