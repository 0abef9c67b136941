import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sipk.generate import generate_instance
from sipk.grid import brute_force_bracket
from sipk.instances import shor_gap
from sipk.shor import (certified_dual_bound, dsdp_slater_point, dual_lmi_matrix, solve_dsdp_x,
                       solve_sdp_x)


def test_t1_relaxation_is_tight(T1):
    assert solve_sdp_x(T1, [1.0]).value == pytest.approx(1.0, abs=1e-7)
    d = solve_dsdp_x(T1, [1.0])
    assert d.value == pytest.approx(1.0, abs=1e-6)


def test_t2_trust_region_tight(T2):
    sol = solve_sdp_x(T2, [-1.0, 0.0])
    assert sol.value == pytest.approx(0.5, abs=1e-7)


def test_gap_instance_only_upper_bounds():
    inst = shor_gap()
    v = solve_sdp_x(inst, [1.0]).value
    br = brute_force_bracket(inst, [1.0], 1e-3, refine_tol=1e-8)
    assert v >= br.hi
    assert v - br.hi > 0.5


@given(seed=st.integers(0, 200), nonconvex=st.booleans())
def test_slater_point_strictly_feasible(seed, nonconvex):
    inst = generate_instance(m=2, n=2, r=2, nonconvex=nonconvex, seed=seed % 11)
    x = np.random.default_rng(seed).uniform(inst.lo, inst.hi)
    lam, alpha, beta, slack = dsdp_slater_point(inst, x)
    assert np.all(lam > 0) and alpha > 0
    assert slack >= 1.0 - 1e-9


@given(seed=st.integers(0, 200))
def test_certified_bound_dominates_phi(seed):
    inst = generate_instance(m=2, n=2, r=2, nonconvex=True, seed=seed % 5)
    rng = np.random.default_rng(seed)
    x = rng.uniform(inst.lo, inst.hi)
    d = solve_dsdp_x(inst, x)
    # perturb the dual point; the repaired bound must still dominate phi
    lam = d.lam + rng.normal(scale=0.1, size=inst.r)
    ub = certified_dual_bound(inst, x, lam, d.alpha + rng.normal(scale=0.1), d.beta)
    br = brute_force_bracket(inst, x, 0.05)
    assert ub >= br.lo - 1e-12


def test_dual_lmi_matrix_at_optimum(T1):
    d = solve_dsdp_x(T1, [1.0])
    S = dual_lmi_matrix(T1, [1.0], d.lam, d.alpha, d.beta)
    assert np.linalg.eigvalsh(S)[0] >= -1e-7
