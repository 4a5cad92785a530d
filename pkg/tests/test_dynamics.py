import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magvp._pairsum import configure_threads
from magvp.core import InitialData, PhaseEnsemble, init_from_grid
from magvp.dynamics import (
    NumericalError,
    boris_velocity,
    electric_field,
    field_from_sources,
    force_at,
    simulate,
    step_boris,
    step_schedule,
)
from magvp.fields import MagneticFieldSpec
from magvp.kernels import KernelSpec, grad_K


def _single(dim=2, v=None):
    v = np.array([v if v is not None else [0.3, -0.4, 0.5][:dim]], dtype=float)
    return PhaseEnsemble(np.zeros((1, dim)), v, np.ones(1), np.ones(1))


def test_single_marker_field_example():
    ens = _single()
    np.testing.assert_allclose(force_at(ens, KernelSpec(2, 1), [1.0, 0.0]), [1 / (2 * math.pi), 0.0], rtol=1e-15)


def test_zero_coupling_field_is_zero():
    ens = init_from_grid(InitialData(), 2, 3, 3)
    np.testing.assert_array_equal(electric_field(ens, KernelSpec(2, 1, coupling=0.0)), 0.0)


def test_symmetric_pair_cancels():
    src = np.array([[1.0, 0.5], [-1.0, -0.5]])
    E = field_from_sources(KernelSpec(2, -1), src, np.ones(2), np.zeros((1, 2)))
    np.testing.assert_allclose(E, 0.0, atol=1e-17)


def test_pair_sum_matches_kernel_gradient():
    rng = np.random.default_rng(3)
    src = rng.normal(size=(7, 3))
    w = rng.random(7)
    tgt = rng.normal(size=(4, 3)) + 5.0
    spec = KernelSpec(3, -1, kappa=0.7)
    ref = sum(w[j] * grad_K(spec, tgt - src[j]) for j in range(7))
    np.testing.assert_allclose(field_from_sources(spec, src, w, tgt), ref, rtol=1e-13)


def test_parallel_matches_serial_bitwise():
    ens = init_from_grid(InitialData(), 2, 4, 4)
    spec = KernelSpec(2, 1)
    a = electric_field(ens, spec, parallel=False)
    b = electric_field(ens, spec, parallel=True)
    assert a.tobytes() == b.tobytes()


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv("MAGVP_NUM_THREADS", "1")
    assert configure_threads() == 1


def test_free_streaming_step_is_exact_drift():
    ens = init_from_grid(InitialData(), 2, 3, 3)
    out = step_boris(ens, KernelSpec(2, 1, coupling=0.0), MagneticFieldSpec("zero"), 0.01)
    np.testing.assert_array_equal(out.velocities, ens.velocities)
    np.testing.assert_array_equal(out.positions, ens.positions + 0.01 * ens.velocities)


@pytest.mark.parametrize(
    "field",
    [
        MagneticFieldSpec("uniform", dim=2, amplitude=3.0),
        MagneticFieldSpec("decaying-bump", dim=2, B0=2.0, radius=0.5),
        MagneticFieldSpec("custom-analytic", dim=2, expression="sin(t) * x0 + cos(x1)"),
    ],
)
def test_single_marker_speed_is_preserved(field):
    ens = _single()
    s0 = np.linalg.norm(ens.velocities)
    for _ in range(200):
        ens = step_boris(ens, KernelSpec(2, 1), field, 0.05)
    assert np.linalg.norm(ens.velocities) == pytest.approx(s0, rel=1e-14)


def test_single_marker_speed_is_preserved_3d():
    field = MagneticFieldSpec("uniform", dim=3, amplitude=2.0, direction=(1.0, 2.0, 0.5))
    ens = _single(3)
    s0 = np.linalg.norm(ens.velocities)
    for _ in range(200):
        ens = step_boris(ens, KernelSpec(3, 1), field, 0.05)
    assert np.linalg.norm(ens.velocities) == pytest.approx(s0, rel=1e-14)


def test_magnetic_field_is_sampled_at_half_step():
    # B(t) = t: the rotation of one step from t = 0 uses B(dt/2)
    field = MagneticFieldSpec("custom-analytic", dim=2, expression="t")
    dt = 0.4
    out = step_boris(_single(v=[1.0, 0.0]), KernelSpec(2, 1, coupling=0.0), field, dt)
    angle = 2 * math.atan(0.5 * dt * (0.5 * dt))
    # V' = -V ^ B with V ^ B = (v2 B, -v1 B) rotates counter-clockwise
    np.testing.assert_allclose(out.velocities[0], [math.cos(angle), math.sin(angle)], rtol=1e-14, atol=1e-15)


def test_gyration_converges_at_second_order():
    # uniform B, no electric field: exact motion is a circle of angular speed B
    field = MagneticFieldSpec("uniform", dim=2, amplitude=1.0)
    spec = KernelSpec(2, 1, coupling=0.0)
    T = 2.0

    def error(dt):
        r = simulate(_single(v=[1.0, 0.0]), spec, field, dt, T, output_every=10**6, orders=(2,))
        exact = np.array([math.cos(T), math.sin(T)])
        return np.linalg.norm(r.final.velocities[0] - exact)

    e1, e2 = error(0.02), error(0.01)
    assert e1 / e2 == pytest.approx(4.0, rel=0.05)


def test_boris_kick_only_without_field():
    v = np.array([[1.0, 2.0]])
    E = np.array([[0.5, -1.0]])
    np.testing.assert_allclose(boris_velocity(v, E, np.zeros(1), 0.1), v + 0.1 * E, rtol=1e-15)


def test_step_schedule_trims_last_step():
    steps = step_schedule(0.3, 1.0)
    assert len(steps) == 4
    assert math.fsum(steps) == pytest.approx(1.0, abs=1e-15)
    assert step_schedule(0.1, 0.0) == []


def test_zero_horizon_emits_initial_frame_only():
    ens = init_from_grid(InitialData(), 2, 3, 3)
    r = simulate(ens, KernelSpec(2, 1), MagneticFieldSpec("zero"), 0.1, 0.0)
    assert r.series.times == [0.0]
    assert r.n_steps == 0


def test_mass_and_fvalues_are_invariant():
    ens = init_from_grid(InitialData(), 2, 4, 4)
    w, f = ens.weights.tobytes(), ens.fvalues.tobytes()
    r = simulate(ens, KernelSpec(2, 1), MagneticFieldSpec("uniform", amplitude=1.0), 0.05, 0.5, orders=(2,))
    assert r.final.weights.tobytes() == w
    assert r.final.fvalues.tobytes() == f
    assert len(set(r.series.mass)) == 1


def test_non_finite_state_raises():
    ens = PhaseEnsemble(np.array([[np.nan, 0.0]]), np.zeros((1, 2)), np.ones(1), np.ones(1))
    with pytest.raises(NumericalError, match="frame 0"):
        simulate(ens, KernelSpec(2, 1), MagneticFieldSpec("zero"), 0.1, 0.2, orders=(2,), h=1.0)


@given(
    v=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    B=st.floats(-20, 20),
    dt=st.floats(1e-4, 1.0),
)
def test_rotation_preserves_norm_property(v, B, dt):
    v = np.array([v])
    out = boris_velocity(v, np.zeros((1, 2)), np.array([B]), dt)
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(v), rel=1e-14, abs=1e-300)


@given(
    v=st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    B=st.lists(st.floats(-20, 20), min_size=3, max_size=3),
    dt=st.floats(1e-4, 1.0),
)
def test_rotation_preserves_norm_property_3d(v, B, dt):
    v = np.array([v])
    out = boris_velocity(v, np.zeros((1, 3)), np.array([B]), dt)
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(v), rel=1e-14, abs=1e-300)


def test_expression_rejects_coordinates_beyond_dimension():
    from magvp.fields import FieldError

    with pytest.raises(FieldError, match="unknown name 'x2'"):
        MagneticFieldSpec("custom-analytic", dim=2, expression="x2")


def test_time_reversal_error_is_second_order():
    # E is frozen at the pre-step positions, so a forward then backward step returns within O(dt^2)
    ens = init_from_grid(InitialData(), 2, 3, 3)
    spec = KernelSpec(2, 1, softening=0.5)
    field = MagneticFieldSpec("uniform", amplitude=1.0)

    def error(dt):
        back = step_boris(step_boris(ens, spec, field, dt), spec, field, -dt)
        return np.max(np.abs(back.positions - ens.positions)) + np.max(np.abs(back.velocities - ens.velocities))

    e1, e2 = error(1e-2), error(5e-3)
    assert e1 > 0
    assert e1 / e2 == pytest.approx(4.0, rel=0.05)
