import numpy as np
import pytest

from zsmftg import (
    ConfigError,
    LeftStabilizingSet,
    PolicyProfile,
    SimSpec,
    TrainSpec,
    train,
)
from zsmftg.optimize import ExactGradient, IterateLog, IterateRecord, SampledGradient


def test_gda_converges(table1, table1_saddle):
    log = train(table1, TrainSpec(method="gda", iters=2000), reference=table1_saddle.value)
    assert len(log) == 2000
    assert [r.iter for r in log][:3] == [1, 2, 3]
    assert log.final.rel_error < 1e-3
    assert np.allclose(log.final.theta.as_vector(), table1_saddle.theta_star.as_vector(), atol=1e-4)


def test_ag_converges(table1, table1_saddle):
    spec = TrainSpec(method="ag", n1max=10, n2max=200)
    log = train(table1, spec, reference=table1_saddle.value)
    assert len(log) == spec.total_iterations == 2000
    assert log.final.rel_error < 1e-2


def test_ag_moves_second_player_only_at_outer_steps(table1):
    log = train(table1, TrainSpec(method="ag", n1max=5, n2max=3))
    assert log.column("cost").shape == (15,)
    K2 = np.concatenate([[0.0], log.params()[:, 2]])
    changed = [log[i].iter for i in np.flatnonzero(np.diff(K2) != 0)]
    # the record at a multiple of n1max already carries player 2's step
    assert changed == [5, 10, 15]


def test_log_every(table1):
    log = train(table1, TrainSpec(iters=10, log_every=4))
    assert [r.iter for r in log] == [4, 8, 10]


def test_exact_mode_aborts_outside_theta(table1):
    spec = TrainSpec(iters=50, eta1=50.0, eta2=50.0)
    with pytest.raises(LeftStabilizingSet) as info:
        train(table1, spec)
    assert info.value.log is not None
    assert not info.value.log.final.in_Theta


def test_start_outside_theta(table1):
    spec = TrainSpec(theta0=PolicyProfile([[-5.0]], [[0.0]], [[0.0]], [[0.0]]))
    with pytest.raises(LeftStabilizingSet):
        train(table1, spec)


def test_bad_spec():
    with pytest.raises(ConfigError):
        TrainSpec(method="sgd")
    with pytest.raises(ConfigError):
        TrainSpec(eta1=0.0)
    with pytest.raises(ConfigError):
        TrainSpec(n1max=0)


def test_custom_gradient_source(table1):
    calls = []

    class Counting(ExactGradient):
        def both(self, theta, m, iteration):
            calls.append(iteration)
            return super().both(theta, m, iteration)

    train(table1, TrainSpec(iters=7), Counting())
    assert calls == list(range(1, 8))


def test_sampled_mode_reproducible(table1):
    est = SimSpec(horizon=20, n_perturbations=500, seed=4)
    spec = TrainSpec(mode="sampled", iters=5, estimator=est)
    a = train(table1, spec).params()
    b = train(table1, spec).params()
    assert np.array_equal(a, b)
    c = train(table1, TrainSpec(mode="sampled", iters=5, estimator=est, replication=1)).params()
    assert not np.array_equal(a, c)


def test_sampled_gradient_streams_differ_per_iteration(table1):
    src = SampledGradient(SimSpec(horizon=10, n_perturbations=200))
    theta = PolicyProfile.zeros(1, 1)
    assert not np.array_equal(src(theta, table1, 1, 1)[0], src(theta, table1, 2, 1)[0])


def test_log_rejects_non_increasing():
    log = IterateLog()
    rec = IterateRecord(1, PolicyProfile.zeros(1, 1), 0.0, None, 0.0, True)
    log.append(rec)
    with pytest.raises(ValueError):
        log.append(rec)
