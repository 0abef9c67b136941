"""Inner-outer approximation built on the dualized lifted lower level.

The conic restriction (solved once) is

    min F(x)  s.t.  alpha (1 + rho^2) + beta <= 0,
                    sum_j lam_j Q^j + alpha I + beta E - Q(x) >= 0,  lam, alpha >= 0.

Every feasible x is feasible for the semi-infinite problem.  The iteration
keeps an outer discretization Y_k (linear cuts G(x, y) <= 0) and an inner
set R^k, which extends the restriction with the oracle data (x^l, v_l):

    alpha (1 + rho^2) + beta + sum_l zeta_l v_l <= 0,
    sum_j lam_j Q^j + sum_l zeta_l Q(x^l) + alpha I + beta E >= Q(x_hat).

A proximal term couples the outer iterate x and the inner iterate x_hat.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .conic import INFEASIBLE, MAXITER, OPTIMAL, UNBOUNDED, ConicProgram, min_eig
from .exceptions import InnerSetEmpty, RestrictionInfeasible, SolverError
from .oracle import Oracle, make_oracle
from .problem import a_vector, eval_G
from .shor import add_dual_lmi, dual_lmi_matrix

logger = logging.getLogger(__name__)

PSD_STRICT_TOL = 1e-7
STALL_FEAS_TOL = 1e-8
STALL_GAP_TOL = 1e-5
DUPLICATE_TOL = 1e-9
PSD_TOL = 1e-9
CERTIFIED = "CertifiedOptimal"
INCONCLUSIVE = "Inconclusive"


def _add_box(p, inst, idx):
    for i in range(inst.m):
        p.add_constraint({int(idx[i]): 1.0}, "<=", inst.hi[i])
        p.add_constraint({int(idx[i]): -1.0}, "<=", -inst.lo[i])
    for row, di in zip(inst.A, inst.d):
        p.add_constraint((idx, row), "<=", di)


def rk_membership_program(p, inst, cuts, xhat_idx=None, xhat=None, name="R"):
    """Add the inner-set system to ``p``, for variable x_hat (indices) or a fixed point.

    Returns the dual-variable indices and the value functional, constrained <= 0
    only when ``xhat_idx`` is given (for a fixed point the caller minimizes it).
    """
    if xhat_idx is not None:
        terms = [(int(xhat_idx[i]), inst.lifted_Q[i]) for i in range(inst.m)]
        idx, value = add_dual_lmi(p, inst, terms, cuts=cuts, name=name)
        p.add_constraint(value, "<=", 0.0, name=f"{name}.value")
    else:
        target = np.tensordot(np.asarray(xhat, dtype=float), inst.lifted_Q, axes=1)
        idx, value = add_dual_lmi(p, inst, [], cuts=cuts, target_const=target, name=name)
    return idx, value


def inner_set_margin(inst, cuts, xhat):
    """min over the inner-set certificates of alpha(1+rho^2) + beta + sum zeta v; x_hat is in R^k iff <= 0."""
    p = ConicProgram("R^k membership")
    _, value = rk_membership_program(p, inst, cuts, xhat=xhat)
    p.set_objective(value, "min")
    sol = p.solve()
    if sol.status == UNBOUNDED:
        return -np.inf
    if sol.status == INFEASIBLE:
        return np.inf
    return sol.primal_objective


@dataclass
class SiprSolution:
    x_bar: np.ndarray
    lam: np.ndarray
    alpha: float
    beta: float
    value: float
    lmi_min_eig: float
    status: str

    @property
    def restriction_value(self):
        """alpha (1 + rho^2) + beta, which must be <= 0."""
        return self.alpha * (1.0 + self._rho2) + self.beta

    _rho2: float = 0.0


def _quadratic_objective(p, inst, xi):
    p.add_quadratic(xi, inst.P)
    return {int(xi[i]): float(inst.c[i]) for i in range(inst.m)}


def solve_sipr(inst, **tol):
    """Solve the conic restriction; raises RestrictionInfeasible when it has no point."""
    p = ConicProgram("SIPR")
    xi = p.add_variables(inst.m, "free", "x")
    _add_box(p, inst, xi)
    idx, _ = rk_membership_program(p, inst, (), xhat_idx=xi)
    p.set_objective(_quadratic_objective(p, inst, xi))
    sol = p.solve(**tol)
    if sol.status == INFEASIBLE:
        raise RestrictionInfeasible("restriction infeasible: no x admits a dual certificate")
    if sol.status != OPTIMAL:
        raise SolverError(f"SIPR solve ended with status {sol.status}", solution=sol)
    v = sol.x
    x = v[xi]
    lam, alpha, beta = v[idx["lam"]], float(v[idx["alpha"]]), float(v[idx["beta"]])
    e = min_eig(dual_lmi_matrix(inst, x, lam, alpha, beta))
    return SiprSolution(x, lam, alpha, beta, inst.objective(x), e, sol.status, inst.rho ** 2)


def check_sufficient_condition(inst, x_bar, strict_tol=PSD_STRICT_TOL, psd_tol=PSD_TOL):
    """CertifiedOptimal iff Q(x_bar) is positive definite and every Q^j is PSD."""
    if any(min_eig(M) < -psd_tol for M in inst.Qj):
        return INCONCLUSIVE
    if min_eig(inst.Q_of(x_bar)) > strict_tol:
        return CERTIFIED
    return INCONCLUSIVE


@dataclass
class IoaState:
    k: int = 0
    Y: list = field(default_factory=list)
    cuts: list = field(default_factory=list)
    mu: float = 1.0
    x: np.ndarray = None
    xhat: np.ndarray = None
    nu1: float = np.inf
    nu2: float = np.inf


@dataclass
class IoaIterate:
    k: int
    x: np.ndarray
    xhat: np.ndarray  # None while the inner set is empty
    F_x: float
    F_xhat: float
    nu1: float
    nu2: float
    y: np.ndarray
    v: float
    n_Y: int
    n_cuts: int
    mu: float
    oracle: object
    master_objective: float


@dataclass
class IoaTrace:
    iterates: list = field(default_factory=list)
    sipr: SiprSolution = None
    verdict: str = INCONCLUSIVE
    restriction_infeasible: bool = False
    termination: str = ""
    eps1: float = 0.0
    eps2: float = 0.0
    mu_final: float = 1.0
    inst: object = None

    @property
    def xhat(self):
        """Final inner (feasible) iterate."""
        for it in reversed(self.iterates):
            if it.xhat is not None:
                return it.xhat
        return None if self.sipr is None else self.sipr.x_bar

    @property
    def objective(self):
        xh = self.xhat
        return None if xh is None else self.inst.objective(xh)

    def oracle_results(self):
        return [it.oracle for it in self.iterates]


def solve_ioa_master(inst, state, **tol):
    """Joint proximal master; returns (x, x_hat, objective) or raises InnerSetEmpty."""
    m = inst.m
    mu = state.mu
    p = ConicProgram("IOA master")
    xi = p.add_variables(m, "free", "x")
    hi = p.add_variables(m, "free", "xhat")
    _add_box(p, inst, xi)
    _add_box(p, inst, hi)
    for y in state.Y:
        p.add_constraint((xi, a_vector(inst, y)), "<=", 0.0)
    rk_membership_program(p, inst, state.cuts, xhat_idx=hi)
    H = np.block([[inst.P + mu * np.eye(m), -mu * np.eye(m)], [-mu * np.eye(m), inst.P + mu * np.eye(m)]])
    both = np.concatenate([xi, hi])
    p.add_quadratic(both, H)
    p.set_objective((both, np.concatenate([inst.c, inst.c])))
    sol = p.solve(**tol)
    if sol.status == INFEASIBLE:
        raise InnerSetEmpty("inner set empty; run CP instead")
    if sol.status != OPTIMAL:
        # a stalled but primal-feasible iterate keeps x_hat inside the inner set
        if sol.status == MAXITER and sol.primal_residual <= STALL_FEAS_TOL and sol.gap <= STALL_GAP_TOL:
            logger.info("IOA master stalled (gap %.2e); using the feasible iterate", sol.gap)
        else:
            raise SolverError(f"IOA master ended with status {sol.status}", solution=sol)
    return sol.x[xi], sol.x[hi], sol.primal_objective + 2 * inst.f0


def _outer_only_master(inst, Y):
    from .cutting_planes import solve_master_Rk

    atoms = np.array([a_vector(inst, y) for y in Y]).reshape(-1, inst.m)
    return solve_master_Rk(inst, atoms).x


def mu_schedule(k, mu_lo, mu_hi, schedule="constant"):
    if schedule == "constant":
        return mu_lo
    if schedule == "ladder":
        return min(mu_lo * 2.0 ** k, mu_hi)
    raise ValueError(f"unknown mu schedule {schedule!r}")


def run_ioa(inst, oracle, eps1=1e-4, eps2=1e-4, mu_lo=1.0, mu_hi=None, max_iter=200, schedule="constant"):
    """Inner-outer approximation; see module docstring."""
    if eps1 < 0 or eps2 < 0:
        raise ValueError("eps1 and eps2 must be nonnegative")
    mu_hi = mu_lo if mu_hi is None else mu_hi
    if not 0 < mu_lo <= mu_hi:
        raise ValueError("need 0 < mu_lo <= mu_hi")
    trace = IoaTrace(eps1=eps1, eps2=eps2, inst=inst, mu_final=mu_lo)
    try:
        trace.sipr = solve_sipr(inst)
        trace.verdict = check_sufficient_condition(inst, trace.sipr.x_bar)
        if trace.verdict == CERTIFIED:
            trace.termination = "certified"
            return trace
    except RestrictionInfeasible:
        trace.restriction_infeasible = True
        logger.warning("restriction infeasible; inner iterates unavailable until the inner set grows")
    state = IoaState(mu=mu_lo)
    for k in range(max_iter):
        state.k = k
        state.mu = mu_schedule(k, mu_lo, mu_hi, schedule)
        try:
            x, xh, mval = solve_ioa_master(inst, state)
        except InnerSetEmpty:
            if not trace.restriction_infeasible:
                raise
            x, xh, mval = _outer_only_master(inst, state.Y), None, np.nan
        try:
            res = oracle.separate(inst, x)
        except Exception as exc:
            raise type(exc)(f"iteration {k}: {exc}") from exc
        nu1 = eval_G(inst, x, res.y_hat)
        nu2 = float(np.linalg.norm(x - xh)) if xh is not None else np.inf
        state.x, state.xhat, state.nu1, state.nu2 = x, xh, nu1, nu2
        trace.iterates.append(IoaIterate(
            k, x, xh, inst.objective(x), inst.objective(xh) if xh is not None else np.nan, nu1, nu2,
            res.y_hat, res.v_hat, len(state.Y), len(state.cuts), state.mu, res, mval))
        trace.mu_final = state.mu
        logger.debug("ioa k=%d nu1=%.3e nu2=%.3e", k, nu1, nu2)
        if nu1 <= eps1 and nu2 <= eps2:
            trace.termination = "converged"
            return trace
        # repeated data leaves both approximations unchanged but degrades the conic solves
        if not any(np.linalg.norm(res.y_hat - y) <= DUPLICATE_TOL * (1 + np.linalg.norm(y)) for y in state.Y):
            state.Y.append(res.y_hat)
        if not any(np.linalg.norm(x - xl) <= DUPLICATE_TOL * (1 + np.linalg.norm(xl)) for xl, _ in state.cuts):
            state.cuts.append((x, res.v_hat))
    trace.termination = "max_iter"
    return trace


def gap_bound(trace):
    """eps2 (mu_K diam(X) + C_F): optimality gap of the final inner iterate."""
    inst = trace.inst
    return trace.eps2 * (trace.mu_final * inst.diam + inst.C_F)


class InnerOuterSolver(BaseEstimator):
    """Estimator wrapper around :func:`run_ioa`."""

    def __init__(self, oracle="sdp+grid:0.0", eps1=1e-4, eps2=1e-4, mu_lo=1.0, mu_hi=None, max_iter=200,
                 schedule="constant", resolution=1e-3, seed=0):
        self.oracle = oracle
        self.eps1 = eps1
        self.eps2 = eps2
        self.mu_lo = mu_lo
        self.mu_hi = mu_hi
        self.max_iter = max_iter
        self.schedule = schedule
        self.resolution = resolution
        self.seed = seed

    def fit(self, inst, y=None):
        oracle = self.oracle if isinstance(self.oracle, Oracle) else make_oracle(
            self.oracle, inst, resolution=self.resolution, seed=self.seed)
        self.trace_ = run_ioa(inst, oracle, self.eps1, self.eps2, self.mu_lo, self.mu_hi, self.max_iter,
                              self.schedule)
        self.x_ = self.trace_.xhat
        self.objective_ = self.trace_.objective
        self.n_iter_ = len(self.trace_.iterates)
        self.termination_ = self.trace_.termination
        self.verdict_ = self.trace_.verdict
        self.gap_bound_ = gap_bound(self.trace_)
        return self
