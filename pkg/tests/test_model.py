import numpy as np
import pytest

from relayq.errors import GridError
from relayq.model import (
    ModelParams,
    balance_residuals,
    classify_region,
    drift_vectors,
    is_stable,
    lambda_for_load,
    load,
    max_interior_residual,
    transform_state,
    transformed_transition_distribution,
    transition_distribution,
)
from conftest import random_params, random_stable_params


def test_params_reject_boundaries():
    for lam, a in [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.0), (-0.1, 0.5), (0.5, 1.5)]:
        with pytest.raises(ValueError):
            ModelParams(lam=lam, a=a)
    ModelParams(lam=1e-9, a=1 - 1e-9)  # strictly interior values are fine


def test_load_examples():
    assert load(ModelParams(lam=0.3, a=0.5)) == pytest.approx(3 / 7, abs=1e-15)
    assert load(ModelParams(lam=1e-12, a=0.37)) < 1e-9
    # invert lam = rho/(1+rho) at a = 1/2 for rho = 0.1
    assert load(ModelParams(lam=1 / 11, a=0.5)) == pytest.approx(0.1, abs=1e-15)


def test_lambda_for_load_roundtrip():
    rng = np.random.default_rng(7)
    for _ in range(200):
        rho = rng.uniform(0.01, 0.99)
        a = rng.uniform(0.05, 0.95)
        lam = lambda_for_load(rho, a)
        assert load(ModelParams(lam=lam, a=a)) == pytest.approx(rho, rel=1e-13)


def test_is_stable_examples():
    rep = is_stable(ModelParams(lam=0.5, a=0.5))
    assert not rep.stable and rep.margin == pytest.approx(0.0, abs=1e-15)
    rep = is_stable(ModelParams(lam=0.3, a=0.5))
    assert rep.stable and rep.margin == pytest.approx(-0.2, abs=1e-15)
    rep = is_stable(ModelParams(lam=0.3, a=0.05))
    assert not rep.stable and rep.margin == pytest.approx(0.205, abs=1e-15)


def test_stability_matches_load_criterion():
    rng = np.random.default_rng(11)
    for p in random_params(rng, 1000):
        assert is_stable(p).stable == (load(p) < 1.0)


def test_drift_vectors():
    rng = np.random.default_rng(3)
    assert drift_vectors(ModelParams(lam=0.3, a=0.5)).h[1] == pytest.approx(0.05, abs=1e-15)
    for p in random_params(rng, 1000):
        d = drift_vectors(p)
        assert d.h[0] == pytest.approx(-p.a * p.abar, abs=1e-15)
        # diagonal drift is the half-sum of the two angle drifts
        assert d.d[0] == pytest.approx((d.h[0] + d.v[0]) / 2, abs=1e-14)
        assert d.d[1] == pytest.approx((d.h[1] + d.v[1]) / 2, abs=1e-14)
        margin = p.lam - 2 * p.a * p.abar
        assert d.h[0] + d.h[1] == pytest.approx(margin, abs=1e-14)
        assert d.v[0] + d.v[1] == pytest.approx(margin, abs=1e-14)


def test_classify_region():
    assert classify_region(0, 0) == "O"
    assert classify_region(2, 2) == "D"
    assert classify_region(3, 0) == "Hp"
    assert classify_region(0, 4) == "Vp"
    assert classify_region(3, 1) == "H"
    assert classify_region(1, 3) == "V"


def test_transition_distribution_origin():
    p = ModelParams(lam=0.3, a=0.5)
    steps = dict(((di, dj), pr) for di, dj, pr in transition_distribution((0, 0), p).steps)
    assert steps[(0, 1)] == pytest.approx(p.lam * p.abar / 2, abs=1e-15)
    assert steps[(1, 0)] == pytest.approx(p.lam * p.abar / 2, abs=1e-15)
    assert steps[(0, 0)] == pytest.approx(p.lbar + p.lam * p.a, abs=1e-15)
    assert len(steps) == 3


def test_transition_distribution_angle():
    p = ModelParams(lam=0.3, a=0.5)
    rs = transition_distribution((3, 1), p)
    assert rs.region == "H"
    steps = dict(((di, dj), pr) for di, dj, pr in rs.steps)
    assert steps[(0, 1)] == pytest.approx(p.lam * (p.abar**2 + p.a**2), abs=1e-15)
    assert steps[(0, -1)] == pytest.approx(p.lbar * p.a * p.abar, abs=1e-15)
    assert steps[(-1, 0)] == pytest.approx(p.lbar * p.a * p.abar, abs=1e-15)
    assert steps[(-1, 1)] == pytest.approx(p.lam * p.a * p.abar, abs=1e-15)
    assert steps[(0, 0)] == pytest.approx(
        p.lbar * (p.abar**2 + p.a**2) + p.lam * p.a * p.abar, abs=1e-15
    )


def test_transition_rows_stochastic_and_nonnegative():
    rng = np.random.default_rng(5)
    states = [(0, 0), (1, 0), (0, 1), (2, 2), (4, 1), (1, 4), (7, 0), (0, 9), (3, 3)]
    for p in random_params(rng, 1000):
        for s in states:
            steps = transition_distribution(s, p).steps
            assert sum(pr for _, _, pr in steps) == pytest.approx(1.0, abs=1e-14)
            for di, dj, pr in steps:
                assert 0.0 <= pr <= 1.0
                assert s[0] + di >= 0 and s[1] + dj >= 0


def test_transformed_rows_stochastic():
    rng = np.random.default_rng(6)
    states = [(0, 0), (0, 1), (0, 5), (1, 0), (4, 0), (2, 1), (3, 6), (1, 2)]
    for p in random_params(rng, 300):
        for s in states:
            steps = transformed_transition_distribution(s, p)
            assert sum(pr for _, _, pr in steps) == pytest.approx(1.0, abs=1e-14)


def test_transformed_law_is_lumped_original_law():
    """Pushing the original one-step law through (min, diff) gives the
    transformed law at every representative state; this is the lumping that
    justifies working with the transformed chain at all."""
    rng = np.random.default_rng(9)
    originals = [(0, 0), (2, 3), (3, 2), (2, 2), (3, 0), (0, 3), (1, 1), (5, 2), (0, 1)]
    for p in random_params(rng, 50):
        for (i, j) in originals:
            lumped: dict = {}
            for di, dj, pr in transition_distribution((i, j), p).steps:
                key = transform_state(i + di, j + dj)
                lumped[key] = lumped.get(key, 0.0) + pr
            k, l = transform_state(i, j)
            law: dict = {}
            for dk, dl, pr in transformed_transition_distribution((k, l), p):
                law[(k + dk, l + dl)] = law.get((k + dk, l + dl), 0.0) + pr
            assert set(lumped) == set(law)
            for key in law:
                assert lumped[key] == pytest.approx(law[key], abs=1e-14)


def test_transform_state():
    assert transform_state(5, 2) == (2, 3)
    assert transform_state(4, 4) == (4, 0)
    assert transform_state(0, 7) == (0, 7)


def test_balance_residuals_zero_grid(base_params):
    res = balance_residuals(np.zeros((12, 12)), base_params)
    assert np.nanmax(res) == 0.0


def test_balance_residuals_reject_small(base_params):
    with pytest.raises(GridError):
        balance_residuals(np.zeros((3, 3)), base_params)


def test_balance_residuals_oracle_grid(base_params, oracle_base):
    assert max_interior_residual(oracle_base.values, base_params) < 1e-10


def test_balance_residuals_compensation_grid(params_rho04, ca_rho04):
    assert max_interior_residual(ca_rho04.grid.values, params_rho04) < 1e-9
