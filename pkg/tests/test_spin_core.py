import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import euler, principal
from zefoz.spin_core import (
    Constants,
    EulerAngles,
    HalfInteger,
    TensorSpec,
    angular_momentum_operators,
    direction_unit_vector,
    embed_operators,
    field_angles,
    rotation_from_euler,
    spherical_field,
    spin_rotation,
    tensor_to_lab,
)

spins = st.integers(1, 7).map(HalfInteger)


def test_half_integer_parsing():
    assert HalfInteger.parse("3/2") == HalfInteger(3)
    assert HalfInteger.parse(0.5) == HalfInteger(1)
    assert HalfInteger.parse(2) == HalfInteger(4)
    assert HalfInteger(3).dim == 4 and not HalfInteger(3).is_integer
    with pytest.raises(ValueError):
        HalfInteger.parse("1/3")
    with pytest.raises(ValueError):
        HalfInteger(0)


def test_spin_half_operators_are_halved_paulis():
    jx, jy, jz = angular_momentum_operators(HalfInteger(1))
    assert np.allclose(jz, np.diag([0.5, -0.5]))
    assert np.allclose(jx, 0.5 * np.array([[0, 1], [1, 0]]))
    assert np.allclose(jy, 0.5 * np.array([[0, -1j], [1j, 0]]))


def test_spin_three_halves_jz():
    *_, jz = angular_momentum_operators(HalfInteger(3))
    assert np.allclose(jz, np.diag([1.5, 0.5, -0.5, -1.5]))


@given(spins)
def test_casimir_hermiticity_and_commutator(j):
    jx, jy, jz = angular_momentum_operators(j)
    d = j.dim
    jj = j.value * (j.value + 1)
    assert np.abs(jx @ jx + jy @ jy + jz @ jz - jj * np.eye(d)).max() < 1e-12
    for op in (jx, jy, jz):
        assert np.abs(op - op.conj().T).max() < 1e-12
    assert np.abs(jx @ jy - jy @ jx - 1j * jz).max() < 1e-12


def test_rotation_special_cases():
    assert np.allclose(rotation_from_euler(EulerAngles()), np.eye(3))
    assert np.allclose(rotation_from_euler(EulerAngles(0, np.pi, 0)), np.diag([-1, 1, -1]))


@given(euler)
def test_rotation_is_proper(e):
    r = rotation_from_euler(e)
    assert np.abs(r.T @ r - np.eye(3)).max() < 1e-12
    assert abs(np.linalg.det(r) - 1) < 1e-12


def test_tensor_to_lab_examples():
    assert np.allclose(tensor_to_lab(TensorSpec((1.0, 2.0, 3.0))), np.diag([1, 2, 3]))
    t = TensorSpec((1.0, 2.0, 3.0), EulerAngles(0, np.pi / 2, 0))
    assert np.allclose(tensor_to_lab(t), np.diag([3, 2, 1]), atol=1e-12)


@given(principal, euler)
def test_tensor_to_lab_symmetric_and_spectrum_preserved(v, e):
    lab = tensor_to_lab(TensorSpec(v, e))
    scale = max(1.0, max(abs(x) for x in v))
    assert np.abs(lab - lab.T).max() <= 1e-12 * scale
    assert np.allclose(np.linalg.eigvalsh(lab), sorted(v), rtol=1e-9, atol=1e-9 * scale)


def test_tensor_rejects_bad_values():
    with pytest.raises(ValueError):
        TensorSpec((1.0, float("nan"), 2.0))
    with pytest.raises(ValueError):
        TensorSpec((1.0, 2.0))


@given(spins, euler)
def test_spin_rotation_rotates_vector_operators(j, e):
    # U^dag J_p U = sum_q R_pq J_q
    u = spin_rotation(j, e)
    r = rotation_from_euler(e)
    ops = angular_momentum_operators(j)
    for p in range(3):
        rotated = sum(r[p, q] * ops[q] for q in range(3))
        assert np.abs(u.conj().T @ ops[p] @ u - rotated).max() < 1e-10


def test_embedded_operators():
    ops = embed_operators(HalfInteger(1), HalfInteger(1))
    assert ops.dim == 4
    sx, iy = ops.S[0], ops.I[1]
    assert np.array_equal(sx @ iy - iy @ sx, np.zeros((4, 4)))
    assert embed_operators(HalfInteger(1), HalfInteger(3)).dim == 8


@given(spins, spins)
def test_embedded_operators_traceless_and_commuting(s, i):
    ops = embed_operators(s, i)
    for a in ops.S + ops.I:
        assert abs(np.trace(a)) < 1e-12
        assert np.abs(a - a.conj().T).max() < 1e-12
    for a in ops.S:
        for b in ops.I:
            assert np.abs(a @ b - b @ a).max() < 1e-12


def test_direction_examples():
    assert np.allclose(direction_unit_vector(np.pi / 2, 1.234), [0, 0, 1])
    assert np.allclose(direction_unit_vector(0.0, 0.0), [1, 0, 0])


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_direction_unit_norm_and_periodic(th, ph):
    v = direction_unit_vector(th, ph)
    assert abs(np.linalg.norm(v) - 1) < 1e-12
    assert np.abs(v - direction_unit_vector(th, ph + 2 * np.pi)).max() < 1e-12


@given(st.floats(1e-6, 1.0), st.floats(-89, 89), st.floats(-179, 179))
def test_field_angles_round_trip(mag, th, ph):
    m, t, p = field_angles(spherical_field(mag, th, ph))
    assert np.isclose(m, mag, rtol=1e-12)
    assert np.isclose(t, th, atol=1e-9) and np.isclose(p, ph, atol=1e-9)


def test_constants_positive():
    with pytest.raises(ValueError):
        Constants(mu_B_over_h=-1.0)
