import numpy as np
import pytest
from hypothesis import assume, given

from conftest import random_system, seeds, yb_ground
from zefoz.hamiltonian import (
    DegenerateLevelsError,
    SpinSystem,
    TransitionId,
    label_zero_field_states,
    labeled_transition,
    solve,
)
from zefoz.sensitivity import (
    LevelTrackingError,
    closed_form_gradient,
    cluster_slopes,
    curvature,
    curvature_perturbation,
    curvatures_batch,
    first_order_sensitivity,
    gradient_finite_difference,
    gradient_hellmann_feynman,
    gradients_batch,
    in_bohr_units,
    optical_sensitivity,
    transition_sensitivity,
)
from zefoz.spin_core import MU_B_OVER_H, EulerAngles, HalfInteger, TensorSpec, spherical_field


def well_separated(sysm, b, t, gap=5.0):
    e = solve(sysm, b).energies
    return np.diff(e).min() > gap


@given(seeds)
def test_zero_field_gradient_vanishes(seed):
    rng = np.random.default_rng(seed)
    I = float(rng.choice([0.5, 1.5, 2.5]))
    sysm = random_system(rng, I=I, with_q=I > 0.5)
    sol = solve(sysm, np.zeros(3))
    for i in range(sol.dim):
        for j in range(i + 1, sol.dim):
            g = gradient_hellmann_feynman(sysm, np.zeros(3), TransitionId(i, j), sol)
            assert np.linalg.norm(g) <= 1e-6 * MU_B_OVER_H


def test_linear_zeeman_gradient_and_curvature():
    # A = 0: levels are m_S g mu_B |g.B| -+ nuclear Zeeman, an exactly solvable case
    g = np.array([1.0, 2.0, 3.0])
    sysm = SpinSystem(A=TensorSpec((0.0, 0.0, 0.0)), g=TensorSpec(tuple(g)), g_n=1.0)
    b = np.array([0.0, 0.0, 0.1])
    sol = solve(sysm, b)
    # top and bottom levels differ by one electron flip and one nuclear flip
    t = TransitionId(0, 3)
    g_hf = gradient_hellmann_feynman(sysm, b, t, sol)
    assert np.allclose(g_hf, gradient_finite_difference(sysm, b, t), rtol=1e-9, atol=1e-6)
    assert np.isclose(g_hf[2], 3.0 * MU_B_OVER_H + 7.6225932, rtol=1e-12)
    # electron and nuclear flips: curvature along B vanishes, transverse follows |g.B|
    pert = curvature_perturbation(sysm, b, t, sol)
    ne = 7.6225932
    transverse = g[:2] ** 2 * MU_B_OVER_H / (g[2] * 0.1) + ne / 0.1
    assert abs(pert[2, 2]) < 1e-6
    assert np.allclose(np.diag(pert)[:2], transverse, rtol=1e-9)
    assert np.allclose(curvature(sysm, b, t), pert, rtol=1e-4, atol=1e-3)


@given(seeds)
def test_hellmann_feynman_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    sysm = random_system(rng, I=float(rng.choice([0.5, 1.5])))
    b = spherical_field(rng.uniform(1e-3, 2e-2), rng.uniform(-90, 90), rng.uniform(-180, 180))
    assume(well_separated(sysm, b, None))
    t = TransitionId(*sorted(rng.choice(sysm.dim, 2, replace=False)))
    hf = gradient_hellmann_feynman(sysm, b, t)
    fd = gradient_finite_difference(sysm, b, t)
    assert np.linalg.norm(hf - fd) <= max(1e-4 * np.linalg.norm(hf), 1e-3)


@given(seeds)
def test_curvature_routes_agree(seed):
    rng = np.random.default_rng(seed)
    sysm = random_system(rng)
    b = spherical_field(rng.uniform(1e-3, 1e-2), rng.uniform(-90, 90), rng.uniform(-180, 180))
    assume(well_separated(sysm, b, None, gap=50.0))
    t = TransitionId(*sorted(rng.choice(4, 2, replace=False)))
    pert = curvature_perturbation(sysm, b, t)
    num = curvature(sysm, b, t)
    assert np.abs(pert - pert.T).max() <= 1e-6 * np.abs(pert).max()
    assert np.abs(pert - num).max() <= 1e-3 * np.abs(pert).max()
    batch = curvatures_batch(sysm, b[None], t)[0]
    assert np.allclose(batch, pert, rtol=1e-9, atol=1e-9 * np.abs(pert).max())


@given(seeds)
def test_gradient_odd_in_field(seed):
    rng = np.random.default_rng(seed)
    sysm = random_system(rng)
    b = spherical_field(rng.uniform(1e-4, 5e-3), rng.uniform(-90, 90), rng.uniform(-180, 180))
    assume(well_separated(sysm, b, None))
    t = TransitionId(0, 3)
    gp, gm = gradient_hellmann_feynman(sysm, b, t), gradient_hellmann_feynman(sysm, -b, t)
    assert np.linalg.norm(gp + gm) <= 1e-6 * max(np.linalg.norm(gp), 1e-6)


def test_batched_gradients_match_scalar(ground, psi):
    rng = np.random.default_rng(3)
    fields = rng.normal(0, 3e-3, (50, 3))
    g, nu = gradients_batch(ground, fields, psi)
    for k in range(50):
        assert np.allclose(g[k], gradient_hellmann_feynman(ground, fields[k], psi), atol=1e-8)


def test_degenerate_level_rejected():
    sysm = SpinSystem(A=TensorSpec((8.0, 8.0, 8.0)), g=TensorSpec((2.0, 2.0, 2.0)))
    with pytest.raises(DegenerateLevelsError, match="cluster"):
        gradient_hellmann_feynman(sysm, np.zeros(3), TransitionId(0, 1))
    g, _ = gradients_batch(sysm, np.zeros((1, 3)), TransitionId(0, 1))
    assert np.all(np.isnan(g))


def test_tracking_failure_on_crossing():
    # isotropic A with tiny field: triplet sublevels almost cross within a large stencil
    sysm = SpinSystem(A=TensorSpec((8.0, 8.0, 8.0)), g=TensorSpec((2.0, 2.0, 2.0)))
    b = np.array([0.0, 0.0, 1e-6])
    with pytest.raises(LevelTrackingError, match="smaller step"):
        gradient_finite_difference(sysm, b, TransitionId(1, 3), step=1e-3)


def test_worst_direction_is_electronic_scale(ground, psi):
    grads = [
        np.linalg.norm(gradient_hellmann_feynman(ground, spherical_field(5e-3, th, ph), psi))
        for th in range(-90, 91, 15)
        for ph in range(-180, 180, 30)
    ]
    worst = max(grads)
    scale = 6.06 * MU_B_OVER_H
    assert worst >= 1e4
    assert scale / 3 <= worst <= scale * 3


def test_isotropic_avoided_crossing_curvature():
    a, g = 1000.0, 2.0
    sysm = SpinSystem(A=TensorSpec((a, a, a)), g=TensorSpec((g, g, g)))
    b = np.array([0.0, 0.0, 1e-3])
    sol = solve(sysm, b)
    singlet, t0 = 0, 2  # T0 sits between T- and T+ for small Bz
    hz = curvature(sysm, b, TransitionId(singlet, t0))[2, 2]
    x = g * MU_B_OVER_H * 1e-3
    exact = (g * MU_B_OVER_H) ** 2 * a**2 / (a**2 + x**2) ** 1.5
    assert np.isclose(hz, exact, rtol=1e-3)
    assert np.isclose(hz, (g * MU_B_OVER_H) ** 2 / a, rtol=1e-2)


def test_example_zero_field_curvature_gives_ten_ms_order(ground, psi):
    ts = transition_sensitivity(ground, np.zeros(3), psi)
    db = 3e-6
    rate_hz = 1e6 * db**2 * ts.curvature_max
    t2 = 1 / (np.pi * rate_hz)
    assert 1e-3 <= t2 <= 1e-1
    assert np.allclose(curvature(ground, np.zeros(3), psi), ts.S2, rtol=1e-3, atol=1e-3 * ts.curvature_max)


def test_bohr_units():
    assert np.isclose(in_bohr_units(MU_B_OVER_H), 1.0)


def test_closed_form_z_term_and_singular_denominator():
    cf = closed_form_gradient((1183, -127, 5000), (0.13, 1.5, 6.06), [0, 0, 1e-4])
    assert np.isclose(cf.general, 2 * MU_B_OVER_H**2 * 1e-4 * 6.06**2 / abs(1183 - 127))
    assert cf.planar is None
    with pytest.raises(ValueError, match="singular"):
        closed_form_gradient((5000, 100, 5000), (1, 1, 1), [1e-3, 0, 0])


def test_closed_form_in_plane_examples():
    sysm = yb_ground(g_n=0.0)
    t = labeled_transition(sysm, "psi-", "psi+")
    for phi, expected in ((0.0, 0.17), (90.0, 2.1e2)):
        b = spherical_field(5e-3, 0.0, phi)
        cf = closed_form_gradient((1183, -127, 5000), (0.13, 1.5, 6.06), b)
        assert np.isclose(cf.planar, expected, rtol=0.05)
        fd = np.linalg.norm(gradient_finite_difference(sysm, b, t))
        assert abs(fd - cf.general) <= 0.1 * cf.general


@given(seeds)
def test_planar_form_matches_general_for_dominant_az(seed):
    rng = np.random.default_rng(seed)
    ax, ay = rng.uniform(-1000, 1000, 2)
    az = rng.choice([-1, 1]) * rng.uniform(10, 50) * max(abs(ax), abs(ay))
    g = rng.uniform(0.1, 6, 3)
    b = spherical_field(rng.uniform(1e-4, 1e-2), 0.0, rng.uniform(-180, 180))
    cf = closed_form_gradient((ax, ay, az), g, b)
    assert abs(cf.planar - cf.general) <= 0.01 * cf.general


def test_closed_form_psi_pair_z_term():
    sysm = yb_ground(g_n=0.0)
    t = labeled_transition(sysm, "psi-", "psi+")
    b = np.array([0.0, 0.0, 5e-5])
    cf = closed_form_gradient((1183, -127, 5000), (0.13, 1.5, 6.06), b, pair="psi")
    assert np.isclose(np.linalg.norm(gradient_hellmann_feynman(sysm, b, t)), cf.general, rtol=0.01)


def test_optical_zero_field_and_cancellation(ground):
    excited = SpinSystem(
        A=TensorSpec((-4800.0, 3370.0, 1200.0)),
        g=TensorSpec((1.45, 0.32, 2.52), EulerAngles.from_degrees(4, 3, 0)),
        g_n=0.987,
    )
    for i in range(4):
        for j in range(4):
            ts = optical_sensitivity(ground, excited, np.zeros(3), i, j, offset=3.059e8)
            assert ts.gradient_norm <= 1e-6 * MU_B_OVER_H
    b = spherical_field(5e-3, 12, -33)
    for k in range(4):
        assert optical_sensitivity(ground, ground, b, k, k).gradient_norm < 1e-9


def test_optical_gradient_flatter_than_spin_gradient(ground, psi):
    excited = SpinSystem(
        A=TensorSpec((-4800.0, 3370.0, 1200.0)),
        g=TensorSpec((1.45, 0.32, 2.52), EulerAngles.from_degrees(4, 3, 0)),
        g_n=0.987,
    )
    labels = label_zero_field_states(ground)
    thetas = np.linspace(-3, 3, 13)
    spin = [np.linalg.norm(gradient_hellmann_feynman(ground, spherical_field(5e-3, th, 0.0), psi)) for th in thetas]
    opt = [
        optical_sensitivity(ground, excited, spherical_field(5e-3, th, 0.0), labels["psi+"], 3).gradient_norm
        for th in thetas
    ]
    # relative variation over +-3 degrees
    assert (max(opt) / min(opt)) < (max(spin) / min(spin))


def test_first_order_slopes_for_kramers_doublets():
    # integer I: zero-field levels come in degenerate pairs that split linearly
    sysm = SpinSystem(
        A=TensorSpec((300.0, -800.0, 2000.0)),
        g=TensorSpec((1.0, 2.0, 3.0)),
        I=HalfInteger(2),
        Q=TensorSpec((10.0, 25.0, -35.0), EulerAngles.from_degrees(30, 40, 50)),
    )
    sol = solve(sysm, np.zeros(3))
    assert all(len(c) == 2 for c in sol.clusters())
    slopes = first_order_sensitivity(sysm, np.zeros(3), TransitionId(0, 2), sol)
    assert np.linalg.norm(slopes) > 1.0
