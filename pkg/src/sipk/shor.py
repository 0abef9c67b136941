"""Shor lifting of the lower-level QCQP and its conic dual.

Primal (max form), with Y the (n+1)x(n+1) moment matrix [[yy', y], [y', 1]]:

    max <Q(x), Y>  s.t.  <Q^j, Y> <= 0,  tr Y <= 1 + rho^2,  Y[n, n] = 1,  Y >= 0.

Dual:

    min alpha (1 + rho^2) + beta
    s.t. sum_j lam_j Q^j + alpha I + beta E - Q(x) >= 0,  lam >= 0, alpha >= 0.
"""

from dataclasses import dataclass

import numpy as np

from .conic import ConicProgram, min_eig
from .problem import lift_Q


@dataclass
class SdpValue:
    value: float
    Y: np.ndarray
    solution: object


@dataclass
class DualValue:
    value: float
    lam: np.ndarray
    alpha: float
    beta: float
    solution: object


def build_sdp_x(inst, x):
    n1 = inst.n + 1
    p = ConicProgram("SDP_x")
    Yidx = p.add_psd_variable(n1, "Y")
    for j in range(inst.r):
        p.add_constraint(p.inner(inst.lifted_Qj[j], Yidx), "<=", 0.0, name=f"con{j}")
    p.add_constraint(p.inner(np.eye(n1), Yidx), "<=", 1.0 + inst.rho ** 2, name="trace")
    p.add_constraint({int(Yidx[-1, -1]): 1.0}, "==", 1.0, name="corner")
    p.set_objective(p.inner(lift_Q(inst, x), Yidx), sense="max")
    return p, Yidx


def solve_sdp_x(inst, x, **tol):
    p, Yidx = build_sdp_x(inst, x)
    sol = p.solve(**tol)
    return SdpValue(sol.primal_objective, sol.x[Yidx] if sol.ok else None, sol)


def add_dual_lmi(p, inst, target_terms, cuts=(), target_const=None, name="dual"):
    """Add lam, zeta, alpha, beta and the LMI

        sum lam_j Q^j + sum zeta_l Q(x^l) + alpha I + beta E - [target] >= 0,

    where the target is ``target_const`` plus sum_i v_i Q_i over
    ``target_terms`` = list of (variable index, coefficient) pairs.
    Returns the index arrays and the linear functional of the value
    alpha (1 + rho^2) + beta + sum zeta_l v_l.
    """
    n1 = inst.n + 1
    lam = p.add_variables(inst.r, "nonneg", f"{name}.lam")
    zeta = p.add_variables(len(cuts), "nonneg", f"{name}.zeta")
    alpha = p.add_variables(1, "nonneg", f"{name}.alpha")[0]
    beta = p.add_variables(1, "free", f"{name}.beta")[0]
    terms = [(lam[j], inst.lifted_Qj[j]) for j in range(inst.r)]
    for k, (xl, _) in enumerate(cuts):
        terms.append((zeta[k], lift_Q(inst, xl)))
    terms.append((alpha, np.eye(n1)))
    terms.append((beta, inst.E))
    for idx, coef in target_terms:
        terms.append((idx, -np.asarray(coef)))
    const = np.zeros((n1, n1)) if target_const is None else -np.asarray(target_const, dtype=float)
    p.add_lmi(const, terms, name=f"{name}.lmi")
    value = {int(alpha): 1.0 + inst.rho ** 2, int(beta): 1.0}
    for k, (_, vl) in enumerate(cuts):
        value[int(zeta[k])] = float(vl)
    return {"lam": lam, "zeta": zeta, "alpha": alpha, "beta": beta}, value


def build_dsdp_x(inst, x):
    p = ConicProgram("DSDP_x")
    idx, value = add_dual_lmi(p, inst, [], target_const=lift_Q(inst, x))
    p.set_objective(value, sense="min")
    return p, idx


def solve_dsdp_x(inst, x, **tol):
    p, idx = build_dsdp_x(inst, x)
    sol = p.solve(**tol)
    v = sol.x
    return DualValue(sol.primal_objective, v[idx["lam"]], float(v[idx["alpha"]]), float(v[idx["beta"]]), sol)


def dual_lmi_matrix(inst, x, lam, alpha, beta, cuts=(), zeta=()):
    M = np.tensordot(np.asarray(lam, dtype=float), inst.lifted_Qj, axes=1) if inst.r else 0.0
    for (xl, _), z in zip(cuts, zeta):
        M = M + z * lift_Q(inst, xl)
    return M + alpha * np.eye(inst.n + 1) + beta * inst.E - lift_Q(inst, x)


def dsdp_slater_point(inst, x):
    """Strictly feasible dual point: lam = 1, beta = 0, alpha = max(1 + m_x, 1).

    m_x is the largest eigenvalue of Q(x) - sum_j Q^j, so the LMI slack has
    smallest eigenvalue alpha - m_x >= 1.
    """
    lam = np.ones(inst.r)
    S = lift_Q(inst, x) - inst.lifted_Qj.sum(axis=0)
    m_x = float(np.linalg.eigvalsh(S)[-1])
    alpha = max(1.0 + m_x, 1.0)
    slack = min_eig(dual_lmi_matrix(inst, x, lam, alpha, 0.0))
    return lam, alpha, 0.0, slack


def certified_dual_bound(inst, x, lam, alpha, beta):
    """Rigorous upper bound on val(SDP_x) >= phi(x) from an approximate dual point.

    Negative multipliers are clipped and alpha is raised by any negative
    eigenvalue of the LMI slack, which makes the point exactly feasible.
    """
    lam = np.maximum(np.asarray(lam, dtype=float), 0.0)
    alpha = max(float(alpha), 0.0)
    e = min_eig(dual_lmi_matrix(inst, x, lam, alpha, beta))
    if e < 0:
        alpha += -e * (1 + 1e-12) + 1e-15
    return alpha * (1.0 + inst.rho ** 2) + float(beta)
