// Block-coordinate Gauss-Newton on a synthetic separable logistic regression,
// comparing a 10% block against the full block.

#include <cstdio>

#include "rsgn/rsgn.hpp"

int main() {
  const auto data = rsgn::make_separable_data(500, 200, 0.5, 7);
  rsgn::LogisticOptions opts;
  opts.lambda = 1e-10;
  const rsgn::NlsProblem problem = rsgn::build_logistic(data.observations, data.labels, opts);

  for (double fraction : {0.1, 1.0}) {
    rsgn::TrConfig cfg;
    cfg.sketch = rsgn::SketchKind::sampling();
    cfg.l = rsgn::block_size(fraction, problem.dimension());
    cfg.max_iters = 100;
    cfg.f_target = 1e-5;
    cfg.seed = 42;
    const rsgn::RunTrace trace = rsgn::rsgn_tr(problem, cfg);

    double ms = 0.0;
    for (const auto& rec : trace.records) ms += rec.wall_clock_ms;
    const double f_final = trace.records.empty() ? trace.initial_value : trace.records.back().f_value;
    std::printf("l = %4ld: %3zu iterations, f = %.3e, %s, %.1f ms\n",
                static_cast<long>(cfg.l), trace.records.size(), f_final,
                rsgn::to_string(trace.termination), ms);
  }
  return 0;
}
