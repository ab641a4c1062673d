"""
Checking the guarantees on a two-point problem
==============================================

Two copies of ``x = 1`` with opposite labels give a logistic risk whose
minimizer is exactly 0 with ``f* = log 2`` and curvature ``1/4``.  Because
every quantity is known in closed form, Monte-Carlo estimates can be held
against the analytic bounds with no slack for solver error.
"""

from avgsgd import (DataGenSpec, LossModel, RunConfig, SampledSource, StepSchedule, bound_sweep,
                    generate_dataset, solve_batch)

data = generate_dataset(DataGenSpec("TwoPointToy"))
model = LossModel.for_dataset("logistic", data)
cert = solve_batch(model, data)
print(f"theta* = {cert.theta_star[0]}, f* = {cert.f_star:.16f}, mu = {cert.mu}")


def config(N):
    return RunConfig(model, StepSchedule.constant(model.radius, N), SampledSource(data), N, seed=1)


reports = bound_sweep(config, [10, 100, 1000], cert, m=2000)
print(f"{'bound':>22} {'N':>5} {'param':>5} {'estimate':>11} {'bound':>11}")
for r in reports:
    param = "" if r.param is None else r.param
    print(f"{r.bound_name:>22} {r.horizon:>5} {param!s:>5} {r.tested_value:11.3e} {r.analytic_value:11.3e}"
          + ("  VIOLATED" if r.violated else ""))
