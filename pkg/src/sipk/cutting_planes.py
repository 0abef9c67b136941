"""Cutting planes with constraint management, the dual function, and rate audits.

Each iteration solves the relaxation

    min F(x)  s.t.  x in X,  x'z <= 0 for every atom z,

reads the dual iterate z_k = sum_z lam_z z from the atom multipliers, asks
the oracle for a cut xi = a(y_k) at x_k, and stops once nu_k = xi'x_k <= eps.
Before the new cut is appended the atom set may be pruned or aggregated as
long as z_k stays in the cone it generates.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, nnls
from sklearn.base import BaseEstimator

from .conic import solve_qp
from .exceptions import ConeMembershipFailed, InstanceError, SolverError
from .grid import brute_force_bracket, grid_candidates
from .oracle import GridOracle, Oracle, make_oracle
from .problem import a_vector

logger = logging.getLogger(__name__)

ACTIVITY_TOL = 1e-8
CONE_TOL = 1e-7
KKT_TOL = 1e-7


# -- strategies ----------------------------------------------------------------

@dataclass(frozen=True)
class Strategy:
    kind: str  # keepall | dropinactive | aggregate | ttl
    param: int = 0

    def __post_init__(self):
        if self.kind not in ("keepall", "dropinactive", "aggregate", "ttl"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.kind in ("aggregate", "ttl") and self.param < 1:
            raise ValueError(f"{self.kind} needs a parameter >= 1")

    def __str__(self):
        return self.kind if self.kind in ("keepall", "dropinactive") else f"{self.kind}:{self.param}"


def parse_strategy(spec):
    if isinstance(spec, Strategy):
        return spec
    name, _, arg = str(spec).strip().lower().partition(":")
    name = name.replace("_", "").replace("-", "")
    if name in ("aggregate", "ttl"):
        default = 1 if name == "aggregate" else 3
        return Strategy(name, int(arg) if arg else default)
    return Strategy(name)


# -- master problem and dual function -----------------------------------------

@dataclass
class MasterResult:
    x: np.ndarray
    lam: np.ndarray
    objective: float
    kkt_residual: float


def _box_rows(inst):
    m = inst.m
    G = np.vstack([np.eye(m), -np.eye(m), inst.A])
    h = np.concatenate([inst.hi, -inst.lo, inst.d])
    return G, h


def solve_master_Rk(inst, atoms):
    """min F over X intersected with {x'z <= 0 : z in atoms}; returns x and atom multipliers."""
    atoms = np.asarray(atoms, dtype=float).reshape(-1, inst.m)
    Gx, hx = _box_rows(inst)
    G = np.vstack([atoms, Gx])
    h = np.concatenate([np.zeros(atoms.shape[0]), hx])
    try:
        res = solve_qp(inst.P, inst.c, G, h)
    except SolverError as exc:
        raise InstanceError(f"relaxed master could not be solved: {exc}") from exc
    if res.kkt_residual > 1e-5:
        raise InstanceError(f"relaxed master infeasible or ill-posed (KKT residual {res.kkt_residual:.2e})")
    k = atoms.shape[0]
    return MasterResult(res.x, res.z[:k].copy(), res.objective + inst.f0, res.kkt_residual)


def theta_eval(inst, z):
    """theta(z) = min_{x in X} F(x) + x'z and its gradient, the unique minimizer."""
    z = np.asarray(z, dtype=float)
    G, h = _box_rows(inst)
    res = solve_qp(inst.P, inst.c + z, G, h)
    return float(res.objective) + inst.f0, res.x


# -- constraint management ----------------------------------------------------

def cone_residual(B, z):
    B = np.asarray(B, dtype=float).reshape(-1, z.shape[0])
    if B.shape[0] == 0:
        return float(np.linalg.norm(z))
    _, rnorm = nnls(B.T, z)
    return float(rnorm)


def manage_constraints(atoms, lam, z, strategy, idle=None, activity_tol=ACTIVITY_TOL):
    """Choose B_k within conv(atoms) with z in cone(B_k).

    Returns (B_k, idle_counts_for_B_k).  ``idle`` holds, per atom, the number
    of consecutive iterations it has been inactive (used by the ttl rule).
    """
    strategy = parse_strategy(strategy)
    atoms = np.asarray(atoms, dtype=float).reshape(-1, z.shape[0])
    lam = np.asarray(lam, dtype=float)
    k = atoms.shape[0]
    idle = np.zeros(k, dtype=int) if idle is None else np.asarray(idle, dtype=int)
    active = lam > activity_tol
    idle = np.where(active, 0, idle + 1)
    if strategy.kind == "keepall":
        B, newidle = atoms, idle
    elif strategy.kind == "dropinactive":
        B, newidle = atoms[active], idle[active]
    elif strategy.kind == "ttl":
        keep = idle < strategy.param
        B, newidle = atoms[keep], idle[keep]
    else:
        order = sorted(np.flatnonzero(active), key=lambda i: (-lam[i], i))
        head = sorted(order[: strategy.param - 1])
        rest = order[strategy.param - 1:]
        B = [atoms[i] for i in head]
        newidle = [0] * len(head)
        mass = float(lam[rest].sum()) if rest else 0.0
        if rest and mass > activity_tol:
            B.append(lam[rest] @ atoms[rest] / mass)
            newidle.append(0)
        B = np.array(B).reshape(-1, atoms.shape[1])
        newidle = np.array(newidle, dtype=int)
    res = cone_residual(B, z)
    if res > CONE_TOL:
        raise ConeMembershipFailed(f"{strategy}: z_k not in cone(B_k), residual {res:.2e}")
    return B, newidle


# -- the algorithm -------------------------------------------------------------

@dataclass
class CpIterate:
    k: int
    x: np.ndarray
    objective: float
    atoms: np.ndarray
    lam: np.ndarray
    z: np.ndarray
    theta: float
    grad_theta: np.ndarray
    y: np.ndarray
    xi: np.ndarray
    nu: float
    oracle: object
    cone_residual: float
    kkt_residual: float

    @property
    def n_atoms(self):
        return self.atoms.shape[0]

    @property
    def duality_gap(self):
        return abs(self.objective - self.theta)

    @property
    def grad_gap(self):
        return float(np.linalg.norm(self.x - self.grad_theta))

    @property
    def ray_stationarity(self):
        return abs(float(self.grad_theta @ self.z))


@dataclass
class CpTrace:
    iterates: list = field(default_factory=list)
    termination: str = ""
    strategy: str = "keepall"
    epsilon: float = 0.0
    oracle: str = ""

    @property
    def x(self):
        return self.iterates[-1].x

    @property
    def objective(self):
        return self.iterates[-1].objective

    @property
    def n_master_solves(self):
        return len(self.iterates)

    def oracle_results(self):
        return [it.oracle for it in self.iterates]

    def invariant_report(self, tol=1e-6):
        worst = {
            "duality_gap": max((it.duality_gap for it in self.iterates), default=0.0),
            "grad_gap": max((it.grad_gap for it in self.iterates), default=0.0),
            "ray_stationarity": max((it.ray_stationarity for it in self.iterates), default=0.0),
            "cone_residual": max((it.cone_residual for it in self.iterates), default=0.0),
            "kkt_residual": max((it.kkt_residual for it in self.iterates), default=0.0),
        }
        ok = (worst["duality_gap"] <= tol and worst["grad_gap"] <= tol and worst["ray_stationarity"] <= tol
              and worst["cone_residual"] <= CONE_TOL and worst["kkt_residual"] <= KKT_TOL)
        return ok, worst


def run_cp(inst, oracle, epsilon=1e-6, strategy="keepall", max_iter=200, activity_tol=ACTIVITY_TOL):
    """Cutting planes with the given oracle and constraint-management rule."""
    strategy = parse_strategy(strategy)
    trace = CpTrace(strategy=str(strategy), epsilon=epsilon,
                    oracle=oracle.describe() if hasattr(oracle, "describe") else str(oracle))
    atoms = np.zeros((0, inst.m))
    idle = np.zeros(0, dtype=int)
    for k in range(max_iter):
        try:
            ms = solve_master_Rk(inst, atoms)
        except InstanceError as exc:
            raise InstanceError(f"iteration {k}: {exc}") from exc
        z = ms.lam @ atoms if atoms.shape[0] else np.zeros(inst.m)
        theta, grad = theta_eval(inst, z)
        try:
            res = oracle.separate(inst, ms.x)
        except Exception as exc:
            raise type(exc)(f"iteration {k}: {exc}") from exc
        xi = a_vector(inst, res.y_hat)
        nu = float(xi @ ms.x)
        it = CpIterate(k, ms.x, inst.objective(ms.x), atoms, ms.lam, z, theta, grad, res.y_hat, xi, nu, res,
                       cone_residual(atoms, z) if atoms.shape[0] else 0.0, ms.kkt_residual)
        trace.iterates.append(it)
        logger.debug("cp k=%d F=%.12g nu=%.3e atoms=%d", k, it.objective, nu, atoms.shape[0])
        if nu <= epsilon:
            trace.termination = "converged"
            return trace
        B, idle = manage_constraints(atoms, ms.lam, z, strategy, idle, activity_tol) if atoms.shape[0] else (atoms, idle)
        atoms = np.vstack([B, xi[None, :]])
        idle = np.append(idle, 0)
    trace.termination = "max_iter"
    return trace


class CuttingPlaneSolver(BaseEstimator):
    """Estimator wrapper around :func:`run_cp`.

    ``fit(instance)`` runs the method; results are exposed as ``x_``,
    ``objective_``, ``trace_``, ``n_iter_`` and ``termination_``.
    """

    def __init__(self, oracle="grid", epsilon=1e-6, strategy="keepall", max_iter=200, resolution=1e-3, seed=0):
        self.oracle = oracle
        self.epsilon = epsilon
        self.strategy = strategy
        self.max_iter = max_iter
        self.resolution = resolution
        self.seed = seed

    def _oracle(self, inst):
        if isinstance(self.oracle, Oracle):
            return self.oracle
        return make_oracle(self.oracle, inst, resolution=self.resolution, seed=self.seed)

    def fit(self, inst, y=None):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        self.trace_ = run_cp(inst, self._oracle(inst), self.epsilon, self.strategy, self.max_iter)
        self.x_ = self.trace_.x
        self.objective_ = self.trace_.objective
        self.n_iter_ = len(self.trace_.iterates)
        self.termination_ = self.trace_.termination
        return self


# -- rate certificates -----------------------------------------------------------

@dataclass
class RateCertificate:
    R: float
    tau_hat: float
    mu: float
    delta: float
    val_star: float
    gaps: np.ndarray  # val_star - F(x_k)
    phi_hi: np.ndarray
    bound_opt: np.ndarray
    bound_feas: np.ndarray
    pass_opt: np.ndarray
    pass_feas: np.ndarray  # True for k < 2 (not audited)
    opt_tol: float
    feas_slack: float

    @property
    def passed(self):
        return bool(np.all(self.pass_opt) and np.all(self.pass_feas))

    def to_dict(self):
        return {
            "R": self.R, "tau_hat": self.tau_hat, "mu": self.mu, "delta": self.delta, "val_star": self.val_star,
            "opt_tol": self.opt_tol, "feas_slack": self.feas_slack, "master_kkt_tol": KKT_TOL,
            "pass": self.passed, "n_opt_fail": int(np.sum(~self.pass_opt)), "n_feas_fail": int(np.sum(~self.pass_feas)),
        }


def rate_bounds(k, R, tau, mu, delta):
    k = np.asarray(k, dtype=float)
    den = mu * (1 - delta) ** 2 * (k + 2)
    return 2 * R ** 2 * tau ** 2 / den, 27 * R ** 2 * tau / (4 * den)


def estimate_R(inst, step, extra_atoms=()):
    _, A = grid_candidates(inst, step)
    rows = [A] + [np.asarray(extra_atoms, dtype=float).reshape(-1, inst.m)]
    A = np.vstack(rows)
    return float(np.max(np.linalg.norm(A, axis=1), initial=0.0))


def estimate_tau(inst, z_star, step, extra_atoms=(), penalty=1e6, tol=1e-8):
    """Smallest t with z_star in t * conv(atoms), atoms = grid a(y) plus ``extra_atoms``.

    Solved as the elastic LP min sum(w) + penalty * sum(s+ + s-) subject to
    A^T w + s+ - s- = z_star, which is always feasible; the answer is accepted
    when the elastic residual is below ``tol * (1 + ||z_star||)``.
    """
    z_star = np.asarray(z_star, dtype=float)
    if np.linalg.norm(z_star) <= 1e-12:
        return 0.0
    _, A = grid_candidates(inst, step)
    A = np.vstack([A, np.asarray(extra_atoms, dtype=float).reshape(-1, inst.m)])
    A = np.unique(np.round(A, 12), axis=0)
    m = inst.m
    cost = np.concatenate([np.ones(A.shape[0]), penalty * np.ones(2 * m)])
    Aeq = np.hstack([A.T, np.eye(m), -np.eye(m)])
    res = linprog(cost, A_eq=Aeq, b_eq=z_star, bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverError(f"tau estimate LP failed: {res.message}")
    w = res.x[:A.shape[0]]
    resid = np.linalg.norm(A.T @ w - z_star)
    if resid > tol * (1 + np.linalg.norm(z_star)):
        raise SolverError(f"z_star is not in the cone of the atoms (residual {resid:.2e})")
    return float(np.sum(w))


def trace_atoms(trace):
    return np.vstack([it.xi for it in trace.iterates] + [it.atoms for it in trace.iterates])


def effective_delta(trace, nominal=0.0):
    """Nominal delta, raised to the largest gap the oracle certified where phi > 0."""
    d = float(nominal)
    for res in trace.oracle_results():
        if res.phi_lo > 0:
            d = max(d, res.certified_delta)
    return d


def certify_rates(trace, val_star, R, tau_hat, mu, delta, phi_hi=None, inst=None, grid_step=1e-3,
                  opt_tol=1e-8, feas_slack=None):
    """Audit both rate bounds along a trace; failures are reported, not raised."""
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    if mu <= 0:
        raise ValueError("rate certificates need mu > 0")
    F = np.array([it.objective for it in trace.iterates])
    k = np.arange(F.shape[0])
    gaps = val_star - F
    bo, bf = rate_bounds(k, R, tau_hat, mu, delta)
    if phi_hi is None:
        if inst is None:
            raise ValueError("either phi_hi or inst is required")
        brs = [brute_force_bracket(inst, it.x, grid_step, refine_tol=1e-10) for it in trace.iterates]
        phi_hi = np.array([b.hi for b in brs])
        slack = max((b.width for b in brs), default=0.0)
    else:
        phi_hi = np.asarray(phi_hi, dtype=float)
        slack = 0.0
    if feas_slack is None:
        feas_slack = slack + 1e-9
    best = np.minimum.accumulate(np.maximum(phi_hi, -np.inf)) if phi_hi.size else phi_hi
    pass_opt = gaps <= bo + opt_tol
    pass_feas = (k < 2) | (best <= bf + feas_slack)
    return RateCertificate(R, tau_hat, mu, delta, val_star, gaps, phi_hi, bo, bf, pass_opt, pass_feas,
                           opt_tol, feas_slack)


def default_grid_oracle(resolution=1e-3):
    return GridOracle(resolution)
