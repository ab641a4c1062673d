import math

import numpy as np
import pytest

from avgsgd import (Dataset, LossModel, NonFiniteError, RunConfig, SampledSource,
                    SequentialSource, StepSchedule, StreamExhaustedError, run, run_many,
                    sgd_step, solve_batch, step_size, update_average)
from avgsgd.sgd import ScheduleKind, make_generator, simulate, step_sizes
from scipy.special import expit


def test_sgd_step_examples():
    np.testing.assert_array_equal(sgd_step([1.0, 1.0], [1.0, 0.0], 0.5), [0.5, 1.0])
    np.testing.assert_array_equal(sgd_step([1.0, 2.0], [0.0, 0.0], 0.3), [1.0, 2.0])
    g = np.array([0.3, -0.7])
    two = sgd_step(sgd_step([0.2, 0.1], g, 0.1), g, 0.1)
    np.testing.assert_allclose(two, sgd_step([0.2, 0.1], g, 0.2), atol=1e-15)


def test_sgd_step_errors():
    with pytest.raises(NonFiniteError):
        sgd_step([np.inf], [0.0], 0.1)
    with pytest.raises(ValueError):
        sgd_step([1.0], [1.0, 2.0], 0.1)
    with pytest.raises(ValueError):
        sgd_step([1.0], [1.0], 0.0)


def test_update_average_examples(rng):
    np.testing.assert_array_equal(update_average(np.array([99.0]), np.array([2.0]), 1), [2.0])
    a = update_average(None, np.array([0.0]), 1)
    np.testing.assert_array_equal(update_average(a, np.array([2.0]), 2), [1.0])
    with pytest.raises(ValueError):
        update_average(a, np.array([1.0]), 0)
    thetas = rng.standard_normal((1000, 3))
    avg = None
    for n, t in enumerate(thetas, start=1):
        avg = update_average(avg, t, n)
    np.testing.assert_allclose(avg, thetas.mean(axis=0), rtol=1e-12, atol=1e-15)


def test_step_sizes():
    c = StepSchedule.constant(1.0, 100)
    assert all(step_size(c, n) == 0.05 for n in (1, 50, 100))
    with pytest.raises(ValueError):
        step_size(c, 101)
    assert step_size(StepSchedule("decaying", 1.0), 4) == 0.25
    dbl = StepSchedule("doubling", 1.0)
    assert step_size(dbl, 3) == pytest.approx(0.25)
    assert step_size(dbl, 1) == pytest.approx(0.5)
    assert step_size(dbl, 2) == pytest.approx(1 / (2 * math.sqrt(2)))
    low = StepSchedule("doubling", 1.0, doubling_base="lower")
    assert step_size(low, 3) == pytest.approx(1 / (2 * math.sqrt(2)))


@pytest.mark.parametrize("k", [6, 10, 14])
def test_doubling_total_step_within_factor_four_of_constant(k):
    N = 2 ** k
    total_dbl = step_sizes(StepSchedule("doubling", 1.0), N).sum()
    total_const = step_sizes(StepSchedule.constant(1.0, N), N).sum()
    assert 0.25 <= total_dbl / total_const <= 4


def one_point_config(N=1, gamma_horizon=100, **kw):
    data = Dataset([[1.0]], [1.0])
    model = LossModel("logistic", 1.0, 1)
    return RunConfig(model, StepSchedule.constant(1.0, gamma_horizon), SampledSource(data), N, **kw)


def test_single_step_value():
    traj = run(one_point_config())
    np.testing.assert_allclose(traj.final_theta, [0.025], rtol=1e-15)
    np.testing.assert_array_equal(traj.final_average, [0.0])


def test_determinism_and_distinct_replicates(rng):
    X = rng.standard_normal((30, 2)) / 2
    data = Dataset(X, rng.choice([-1.0, 1.0], 30))
    model = LossModel.for_dataset("logistic", data)
    cfg = RunConfig(model, StepSchedule.constant(model.radius, 200), SampledSource(data), 200, seed=9)
    a, b = run(cfg), run(cfg)
    np.testing.assert_array_equal(a.iterates, b.iterates)
    np.testing.assert_array_equal(a.averages, b.averages)
    reps = run_many(cfg, 3)
    assert not np.array_equal(reps[0].final_theta, reps[1].final_theta)
    np.testing.assert_array_equal(reps[1].final_theta, run(cfg.replicate(1)).final_theta)


def reference_loop(X, y, idx, gamma, N, d):
    # straight-line logistic recursion
    theta = np.zeros(d)
    total = np.zeros(d)
    iterates, avgs = [], []
    for n in range(N):
        total = total + theta
        avgs.append(total / (n + 1))
        x, lab = X[idx[n]], y[idx[n]]
        theta = theta + gamma * lab * x / (1.0 + math.exp(lab * float(x @ theta)))
        iterates.append(theta.copy())
    return np.array(iterates), np.array(avgs)


def test_matches_reference_loop(rng):
    X = rng.standard_normal((10, 2)) / 2
    y = rng.choice([-1.0, 1.0], 10)
    data = Dataset(X, y)
    model = LossModel.for_dataset("logistic", data)
    N = 10
    cfg = RunConfig(model, StepSchedule.constant(model.radius, N), SampledSource(data), N, seed=4)
    traj = run(cfg)
    u = make_generator(4).random(1024)
    idx = np.searchsorted(np.cumsum(np.full(10, 0.1)), u, side="right")
    it, av = reference_loop(X, y, idx, step_size(cfg.schedule, 1), N, 2)
    assert np.max(np.abs(traj.iterates - it)) <= 1e-12
    assert np.max(np.abs(traj.averages - av)) <= 1e-12


def test_averages_equal_direct_mean(rng):
    data = Dataset(rng.standard_normal((20, 3)) / 3, rng.choice([-1.0, 1.0], 20))
    model = LossModel.for_dataset("sqrt_binary", data)
    cfg = RunConfig(model, StepSchedule("decaying", model.radius), SampledSource(data), 50,
                    theta0=[0.5, -0.5, 0.1])
    traj = run(cfg)
    thetas = np.vstack([cfg.theta0, traj.iterates])
    for k, n in enumerate(traj.steps):
        np.testing.assert_allclose(traj.averages[k], thetas[:n].mean(axis=0), rtol=1e-12, atol=1e-15)


def test_record_stride():
    cfg = one_point_config(N=10, gamma_horizon=10, record_stride=4)
    traj = run(cfg)
    np.testing.assert_array_equal(traj.steps, [4, 8, 10])


def test_sequential_stream_exhaustion():
    data = Dataset([[1.0], [0.5]], [1.0, -1.0])
    model = LossModel("logistic", 1.0, 1)
    cfg = RunConfig(model, StepSchedule("decaying", 1.0), SequentialSource(data), 5)
    with pytest.raises(StreamExhaustedError) as exc:
        run(cfg)
    assert exc.value.step == 3
    ok = run(RunConfig(model, StepSchedule("decaying", 1.0), SequentialSource(data), 2))
    assert ok.steps[-1] == 2


def test_trace_invariants(rng):
    X = rng.standard_normal((40, 2))
    X /= np.linalg.norm(X, axis=1).max()
    theta_true = np.array([0.5, -0.3])
    y = np.where(rng.random(40) < expit(X @ theta_true), 1.0, -1.0)
    data = Dataset(X, y)
    model = LossModel.for_dataset("logistic", data)
    cert = solve_batch(model, data)
    N = 500
    cfg = RunConfig(model, StepSchedule.constant(model.radius, N), SampledSource(data), N,
                    certificate=cert, trace=True)
    tr = run(cfg).trace
    assert np.all(tr.descent_slack() >= -1e-10)
    assert np.all(tr.potential >= 0)
    assert np.all(tr.potential <= tr.almost_sure_bound())
    assert np.all(np.sqrt(tr.dist_sq) <= tr.excursion_bound() + 1e-12)


def test_trajectory_csv_and_json(tmp_path, rng):
    data = Dataset(rng.standard_normal((10, 2)) / 2, rng.choice([-1.0, 1.0], 10))
    model = LossModel.for_dataset("logistic", data)
    cert = solve_batch(model, data)
    cfg = RunConfig(model, StepSchedule.constant(model.radius, 20), SampledSource(data), 20,
                    record_stride=5, certificate=cert)
    traj = run(cfg)
    p = traj.to_csv(tmp_path / "t.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "step,theta_0,theta_1,avg_0,avg_1,f_gap,grad_norm"
    assert len(lines) == 5
    assert float(lines[-1].split(",")[1]) == traj.final_theta[0]
    traj.to_csv(tmp_path / "n.csv", components=False)
    assert (tmp_path / "n.csv").read_text().startswith("step,theta_norm,avg_norm,f_gap,grad_norm")
    traj.to_json(tmp_path / "t.json")
    import json
    d = json.loads((tmp_path / "t.json").read_text())
    assert d["final_theta"] == traj.final_theta.tolist()


def test_simulate_lockstep_independent_of_batch(rng):
    data = Dataset(rng.standard_normal((15, 3)) / 2, rng.choice([-1.0, 1.0], 15))
    model = LossModel.for_dataset("logistic", data)
    cfg = RunConfig(model, StepSchedule.constant(model.radius, 300), SampledSource(data), 300, seed=2)
    both = simulate(cfg, [(0,), (1,)], record=False)
    alone = simulate(cfg, [(1,)], record=False)
    np.testing.assert_allclose(both.final_theta[1], alone.final_theta[0], rtol=0, atol=1e-15)


def test_config_validation():
    data = Dataset([[1.0]], [1.0])
    model = LossModel("logistic", 1.0, 1)
    with pytest.raises(ValueError):
        RunConfig(model, StepSchedule.constant(1.0, 5), SampledSource(data), 0)
    with pytest.raises(ValueError):
        RunConfig(model, StepSchedule.constant(1.0, 5), SampledSource(data), 5, theta0=[0.0, 1.0])
    with pytest.raises(ValueError):
        RunConfig(model, StepSchedule.constant(1.0, 5), SampledSource(data), 5, trace=True)
    with pytest.raises(ValueError):
        StepSchedule(ScheduleKind.CONSTANT_HORIZON, 1.0)
