import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from magvp.core import InitialData, PhaseEnsemble, init_from_grid
from magvp.transport import (
    CouplingPlan,
    TransportError,
    transport,
    wasserstein_p,
    wasserstein_p_positions,
)


def _cloud(x, v=None, w=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = np.stack([x, np.zeros_like(x)], axis=1)
    v = np.zeros_like(x) if v is None else np.asarray(v, dtype=float).reshape(x.shape)
    w = np.full(len(x), 1.0 / len(x)) if w is None else np.asarray(w, dtype=float)
    return PhaseEnsemble(x, v, w, np.ones(len(x)))


def brute_force(e1, e2, p):
    """Minimum over all permutations of the mean pairing cost |x - y|^p + |v - w|^p."""
    n = e1.n_markers
    cost = [
        [math.dist(e1.positions[i], e2.positions[j]) ** p + math.dist(e1.velocities[i], e2.velocities[j]) ** p for j in range(n)]
        for i in range(n)
    ]
    best, arg = math.inf, None
    for perm in itertools.permutations(range(n)):
        c = math.fsum(cost[i][perm[i]] for i in range(n)) / n
        if c < best:
            best, arg = c, perm
    return best, arg


def test_identical_ensembles():
    ens = init_from_grid(InitialData(), 2, 2, 2)
    res = wasserstein_p(ens, ens.copy(), 2)
    assert res.W == 0.0


def test_single_pair_distance():
    r = 0.37
    e1 = PhaseEnsemble(np.zeros((1, 2)), np.zeros((1, 2)), np.ones(1), np.ones(1))
    e2 = PhaseEnsemble(np.array([[0.0, r]]), np.zeros((1, 2)), np.ones(1), np.ones(1))
    for p in (1, 2, 3):
        assert wasserstein_p(e1, e2, p).W == pytest.approx(r, rel=1e-15)


def test_monotone_matching_on_a_line():
    res = wasserstein_p(_cloud([0.0, 2.0]), _cloud([1.0, 3.0]), 2)
    # both assignments: (0-1)^2 + (2-3)^2 = 2 and (0-3)^2 + (2-1)^2 = 10, weights 1/2
    assert res.Wpp == pytest.approx(1.0, rel=1e-15)
    assert res.method == "assignment"


@pytest.mark.parametrize("p", [1, 2])
def test_agrees_with_brute_force_enumeration(p):
    rng = np.random.default_rng(11 + p)
    for _ in range(100):
        n = int(rng.integers(1, 7))
        d = int(rng.integers(2, 4))
        e1 = _cloud(rng.normal(size=(n, d)), rng.normal(size=(n, d)))
        e2 = _cloud(rng.normal(size=(n, d)), rng.normal(size=(n, d)))
        best, perm = brute_force(e1, e2, p)
        res = wasserstein_p(e1, e2, p)
        order = np.argsort(res.plan.rows)
        assert tuple(res.plan.cols[order]) == perm
        assert res.Wpp == pytest.approx(best, rel=1e-14)


def test_weighted_split_uses_linear_program():
    e1 = _cloud([0.0], w=[1.0])
    e2 = _cloud([1.0, -2.0], w=[0.5, 0.5])
    res = wasserstein_p(e1, e2, 2)
    assert res.method == "network-simplex"
    assert res.Wpp == pytest.approx(0.5 * 1 + 0.5 * 4, rel=1e-10)
    assert res.plan.marginal_error(e1.weights, e2.weights) < 1e-12


def lp_oracle(C, w1, w2):
    """Transport linear program solved by HiGHS: an independent route to the optimum."""
    n1, n2 = C.shape
    A = np.vstack([np.kron(np.eye(n1), np.ones(n2)), np.kron(np.ones(n1), np.eye(n2))])
    res = linprog(C.ravel(), A_eq=A, b_eq=np.r_[w1, w2], bounds=(0, None), method="highs")
    return res.fun


def test_weighted_clouds_match_linear_program():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n1, n2 = rng.integers(1, 9, size=2)
        w1, w2 = rng.random(n1), rng.random(n2)
        w1, w2 = w1 / w1.sum(), w2 / w2.sum()
        e1 = PhaseEnsemble(rng.normal(size=(n1, 2)), rng.normal(size=(n1, 2)), w1, np.ones(n1))
        e2 = PhaseEnsemble(rng.normal(size=(n2, 2)), rng.normal(size=(n2, 2)), w2, np.ones(n2))
        C = cdist(e1.positions, e2.positions) ** 2 + cdist(e1.velocities, e2.velocities) ** 2
        res = wasserstein_p(e1, e2, 2)
        assert res.Wpp == pytest.approx(lp_oracle(C, w1, w2), rel=1e-9)
        assert res.plan.marginal_error(w1, w2) < 1e-12


def test_unequal_weights_same_size():
    e1 = _cloud([0.0, 1.0], w=[0.25, 0.75])
    e2 = _cloud([0.0, 1.0], w=[0.75, 0.25])
    res = wasserstein_p(e1, e2, 1)
    assert res.Wpp == pytest.approx(0.5, rel=1e-10)


def test_mass_mismatch():
    with pytest.raises(TransportError, match="mass mismatch"):
        wasserstein_p(_cloud([0.0], w=[1.0]), _cloud([0.0], w=[1.1]))


def test_size_cap():
    e = _cloud(np.arange(10.0))
    with pytest.raises(TransportError, match="exceeds the cap"):
        wasserstein_p(e, e, 2, cap=50)


def test_p_below_one_rejected():
    with pytest.raises(TransportError):
        transport((np.zeros((1, 1)),), [1.0], (np.zeros((1, 1)),), [1.0], 0.5)


def test_position_marginal_translation():
    ens = init_from_grid(InitialData(), 2, 3, 3)
    shifted = PhaseEnsemble(ens.positions + [0.02, 0.0], ens.velocities, ens.weights, ens.fvalues)
    res = wasserstein_p_positions(ens, shifted, 2)
    # unnormalised cost: translating total mass M by delta costs M delta^p
    assert res.Wpp == pytest.approx(ens.mass * 0.02**2, rel=1e-8)


def test_identity_plan():
    plan = CouplingPlan.identity(np.array([0.2, 0.8]))
    assert plan.marginal_error(np.array([0.2, 0.8]), np.array([0.2, 0.8])) == 0.0


points = st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=4, max_size=4)


@given(a=points, b=points, c=points, p=st.sampled_from([1, 2]))
def test_metric_properties(a, b, c, p):
    ea, eb, ec = _cloud(np.array(a)), _cloud(np.array(b)), _cloud(np.array(c))
    ab = wasserstein_p(ea, eb, p).W
    assert ab == wasserstein_p(eb, ea, p).W
    assert wasserstein_p(ea, ec, p).W <= ab + wasserstein_p(eb, ec, p).W + 1e-9
