import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magvp.core import GridDensity, InitialData, PhaseEnsemble, init_from_grid
from magvp.diagnostics import (
    DensityError,
    DiagnosticsSeries,
    deposit_density,
    lp_norm_density,
    moment_eulerian,
    moment_v,
    moment_x,
    partial_moment_density,
)
from magvp.dynamics import simulate
from magvp.fields import MagneticFieldSpec
from magvp.kernels import KernelSpec

from .conftest import DATA


def _one(x, v, w=1.0, t=0.0):
    return PhaseEnsemble(np.array([x], float), np.array([v], float), np.array([w]), np.array([1.0]), t)


def test_velocity_moment_examples():
    assert moment_v(_one([0, 0, 0], [1, 1, 1], w=2.0), 2) == pytest.approx(6.0, rel=1e-15)
    ens = init_from_grid(InitialData(), 2, 4, 4)
    assert moment_v(ens, 0) == ens.mass


def test_gaussian_second_velocity_moment():
    ens = init_from_grid(InitialData(), 2, 12, 12)
    assert moment_v(ens, 2) == pytest.approx(2.0, abs=1e-3)


def test_eulerian_moment_examples():
    ens = init_from_grid(InitialData(), 2, 4, 4)
    assert moment_eulerian(ens, 3) == moment_x(ens, 3)
    assert moment_eulerian(_one([3, 0], [1, 0], t=1.0), 4) == 16.0


def test_free_streaming_keeps_eulerian_moments():
    ens = init_from_grid(InitialData(), 2, 4, 4)
    r = simulate(ens, KernelSpec(2, 1, coupling=0.0), MagneticFieldSpec("zero"), 0.01, 1.0, output_every=10, orders=(2, 4))
    for n in (2, 4):
        L = r.series.array("L", n)
        np.testing.assert_allclose(L, L[0], rtol=1e-10)


def test_single_marker_at_cell_centre():
    h = 0.3
    g = deposit_density(_one([0.2, -0.1], [0, 0]), h)
    assert g.occupied_cells() == 1
    assert g.values.max() == pytest.approx(1 / h**2, rel=1e-14)


def test_uniform_ensemble_deposits_evenly():
    data = InitialData(family="uniform-box", value=1.0, box_lo=0, box_hi=1, vbox_lo=0, vbox_hi=1)
    ens = init_from_grid(data, 2, 2, 2)
    g = deposit_density(ens, 0.5)
    vals = g.values[g.values > 0]
    np.testing.assert_allclose(vals, vals[0], rtol=1e-12)


def test_gaussian_density_peak():
    sigma = 1.0
    ens = init_from_grid(InitialData(sigma_x=sigma), 2, 41, 9)
    g = deposit_density(ens, sigma / 4)
    assert g.values.max() == pytest.approx(1 / (2 * math.pi * sigma**2), rel=0.1)


def test_deposition_conserves_mass():
    ens = init_from_grid(InitialData(), 3, 5, 3)
    g = deposit_density(ens, 0.37)
    assert g.mass == pytest.approx(ens.mass, rel=1e-12)
    assert lp_norm_density(g, 1) == g.mass


def test_lp_norm_examples():
    g = GridDensity(np.zeros(2), 0.5, np.zeros((3, 3)))
    g.values[1, 1] = 2.0
    assert lp_norm_density(g, 3) == pytest.approx(2.0 * 0.5 ** (2 / 3), rel=1e-15)
    unit = GridDensity(np.zeros(2), 0.25, np.ones((4, 4)))
    assert lp_norm_density(unit, 2) == pytest.approx(1.0, abs=1e-12)
    assert lp_norm_density(unit, math.inf) == 1.0


def test_partial_moment_density_examples():
    ens = init_from_grid(InitialData(), 2, 4, 4)
    a = partial_moment_density(ens, 0, 0.8)
    b = deposit_density(ens, 0.8)
    np.testing.assert_array_equal(a.values, b.values)
    h = 0.5
    g = partial_moment_density(_one([0, 0, 0], [0, 2, 0]), 3, h)
    assert g.values.max() == pytest.approx(8 / h**3, rel=1e-14)


def test_grid_cap():
    ens = init_from_grid(InitialData(), 2, 4, 4)
    with pytest.raises(DensityError, match="exceeds the cap"):
        deposit_density(ens, 1e-4)


def test_series_csv_round_trip(tmp_path, reference_run):
    s = reference_run.series
    s.to_csv(tmp_path / "s.csv", "h123")
    back, chash = DiagnosticsSeries.from_csv(tmp_path / "s.csv")
    assert chash == "h123"
    assert back.orders == s.orders
    assert back.M[3] == s.M[3]
    assert back.rho[math.inf] == s.rho[math.inf]


def test_series_header_golden(tmp_path, reference_run, reference_cfg):
    reference_run.series.to_csv(tmp_path / "s.csv", reference_cfg.hash)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    golden = (DATA / "series_header.txt").read_text().splitlines()
    assert lines[:2] == golden


@given(
    pts=st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=30),
    h=st.floats(0.05, 2.0),
)
def test_deposition_mass_property(pts, h):
    x = np.array(pts)
    ens = PhaseEnsemble(x, np.zeros_like(x), np.full(len(x), 0.5), np.ones(len(x)))
    g = deposit_density(ens, h)
    assert np.all(g.values >= 0)
    assert g.mass == pytest.approx(ens.mass, rel=1e-12)


@given(n=st.floats(0.5, 6.0), k=st.floats(0.0, 6.0))
def test_moments_are_log_convex_in_order(n, k):
    # Hoelder: M_m^2 <= M_{m-d} M_{m+d}
    ens = init_from_grid(InitialData(), 2, 3, 5)
    lo, hi = min(n, k), max(n, k)
    mid = 0.5 * (lo + hi)
    assert moment_v(ens, mid) ** 2 <= moment_v(ens, lo) * moment_v(ens, hi) * (1 + 1e-12)
