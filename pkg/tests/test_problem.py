import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sipk.exceptions import InstanceError
from sipk.generate import generate_instance
from sipk.problem import a_matrix, a_vector, eval_G, lift_point, lift_Q, make_instance, validate_instance


def t1_doc():
    return {
        "name": "T1",
        "objective": {"P": [[1.0]], "c": [-1.0], "const": 0.5},
        "X": {"lo": [-2.0], "hi": [2.0]},
        "separation": {"Q": [[[0.0]]], "q": [[1.0]], "b": [0.0]},
        "Y": {"Qj": [[[0.0]], [[0.0]]], "qj": [[-1.0], [1.0]], "bj": [0.0, -1.0], "rho": 1.0},
    }


def test_t1_derived_quantities(T1):
    assert T1.m == 1 and T1.n == 1 and T1.r == 2
    assert T1.mu == 1.0
    assert T1.diam == 4.0
    # |grad F| = |x - 1| is largest at x = -2
    assert T1.C_F == 3.0
    assert T1.lower_level_convex
    assert T1.qj_psd == (True, True)
    assert T1.objective([1.0]) == 0.0
    assert T1.objective([0.0]) == 0.5


def test_t2_nonconvex_flag(T2):
    # Q(x) = x1 is negative on part of the box
    assert not T2.lower_level_convex
    assert T2.qj_psd == (True,)


def test_document_round_trip(T1):
    again = validate_instance(json.loads(T1.to_json()))
    assert again.to_json() == T1.to_json()
    assert validate_instance(t1_doc()).to_json() == T1.to_json()


@pytest.mark.parametrize("patch, message", [
    (lambda d: d["X"].update(hi=[-2.0]), "degenerate box"),
    (lambda d: d["X"].update(hi=[float("inf")]), "unbounded box"),
    (lambda d: d["objective"].update(P=[[-1.0]]), "not convex"),
    (lambda d: d["separation"].update(b=[0.0, 1.0]), "separation.b"),
    (lambda d: d["Y"].update(rho=0.5), "not contained"),
    (lambda d: d["objective"].update(P=[[1.0, 2.0], [0.0, 1.0]], c=[0.0, 0.0]), "objective.P"),
])
def test_rejections(patch, message):
    doc = t1_doc()
    patch(doc)
    with pytest.raises(InstanceError, match=message):
        validate_instance(doc)


def test_strong_convexity_required():
    doc = t1_doc()
    doc["objective"]["P"] = [[0.0]]
    assert validate_instance(doc).mu == 0.0
    with pytest.raises(InstanceError, match="mu"):
        validate_instance(doc, require_strong_convexity=True)


def test_slater_certificate_checked():
    doc = t1_doc()
    doc["slater"] = {"x": [-1.0], "margin": 0.5}
    # max_y G(-1, y) = 0 over [0, 1], so no margin is available
    with pytest.raises(InstanceError, match="Slater"):
        validate_instance(doc)


def test_eval_and_a_vector(T1, T2):
    assert eval_G(T1, [1.0], [1.0]) == 1.0
    assert eval_G(T2, [1.0, 0.0], [1.0]) == -0.5
    np.testing.assert_allclose(a_vector(T1, [0.5]), [0.5])
    np.testing.assert_allclose(a_vector(T2, [1.0]), [-0.5, 1.0])
    np.testing.assert_allclose(a_vector(T2, [0.0]), [0.0, 0.0])


def test_lifted_matrices(T1, T2):
    np.testing.assert_allclose(lift_Q(T2, [1.0, 0.0]), 0.5 * np.array([[-1.0, 0.0], [0.0, 0.0]]))
    np.testing.assert_allclose(lift_Q(T1, [1.0]), 0.5 * np.array([[0.0, 1.0], [1.0, 0.0]]))


@given(seed=st.integers(0, 2 ** 16))
def test_dual_form_consistency(seed):
    inst = generate_instance(m=3, n=2, r=2, nonconvex=True, seed=seed % 7)
    rng = np.random.default_rng(seed)
    x = rng.uniform(inst.lo, inst.hi)
    Y = rng.normal(size=(5, inst.n))
    A = a_matrix(inst, Y)
    for y, a in zip(Y, A):
        g = eval_G(inst, x, y)
        assert abs(g - x @ a_vector(inst, y)) <= 1e-12 * (1 + abs(g))
        assert abs(g - x @ a) <= 1e-12 * (1 + abs(g))
        # G(x, y) = <Q(x), [y; 1][y; 1]'>
        assert abs(g - np.sum(lift_Q(inst, x) * lift_point(y))) <= 1e-12 * (1 + abs(g))


def test_instance_is_immutable(T1):
    with pytest.raises(ValueError):
        T1.P[0, 0] = 3.0


def test_make_instance_equality_constraints():
    inst = make_instance(P=np.eye(2), c=[0.0, 0.0], lo=[-1, -1], hi=[1, 1], Q=np.zeros((2, 1, 1)), q=[[1.0], [0.0]],
                         b=[0.0, 0.0], Qj=[[[2.0]]], qj=[[0.0]], bj=[-1.0], rho=1.0, A=[[1.0, 1.0]], d=[1.0])
    assert inst.A.shape == (1, 2)
    assert not inst.in_X([1.0, 1.0])
    assert inst.in_X([0.5, 0.5])
