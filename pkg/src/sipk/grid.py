"""Certified brute-force brackets for phi(x) = max_{y in Y} G(x, y).

The box [-rho, rho]^n is split dyadically.  For a cell with center ``c`` and
circumradius ``r`` the quadratic G(x, .) is bounded above by

    G(c) + ||grad_y G(c)|| r + 1/2 max(0, lambda_max(-Q(x))) r^2,

and a cell is discarded when some constraint of Y is provably positive on
it.  Bounds are inherited (minimum over ancestors), so refining the grid can
only lower the upper end.  Feasible grid vertices give the lower end, and an
optional local solve polishes it.  Cells whose bound still exceeds the lower
end by more than ``refine_tol`` are split further (branch and bound).
"""

import math
import weakref
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .exceptions import InfeasibleY, InstanceError

MAX_GRID_DIM = 4
MAX_CELLS = 400_000
MAX_VERTICES = 70_000
_cache = weakref.WeakKeyDictionary()


@dataclass(frozen=True)
class PhiBracket:
    """Certified enclosure lo <= phi(x) <= hi with the witness attaining lo."""

    lo: float
    hi: float
    y: np.ndarray
    grid_step: float
    lipschitz_bound: float
    n_cells: int = 0

    @property
    def width(self):
        return self.hi - self.lo

    def contains(self, value, tol=0.0):
        return self.lo - tol <= value <= self.hi + tol


def check_grid_dim(inst):
    if inst.n > MAX_GRID_DIM:
        raise InstanceError(f"grid dimension guard: n = {inst.n} > {MAX_GRID_DIM}")


def depth_for_step(inst, step):
    """Smallest dyadic depth whose cell side is <= step, capped so the uniform
    grid stays below MAX_VERTICES points (finer accuracy then comes from
    branch and bound)."""
    if step <= 0:
        raise ValueError("grid step must be positive")
    side = 2.0 * max(inst.rho, 1e-12)
    want = max(0, math.ceil(math.log2(side / step) - 1e-12))
    cap = int(math.floor(math.log2(MAX_VERTICES ** (1.0 / inst.n) - 1)))
    return min(want, cap)


def lipschitz_y(inst):
    """max over box corners of ||Q(x)||_2 rho + ||q(x)||, a bound on ||grad_y G||."""
    lo, hi = inst.lo, inst.hi
    m = inst.m
    if m <= 12:
        import itertools

        corners = np.array(list(itertools.product(*zip(lo, hi))))
    else:
        corners = np.vstack([lo, hi])
    best = 0.0
    for x in corners:
        Qx = np.tensordot(x, inst.Q, axes=1)
        best = max(best, np.linalg.norm(Qx, 2) * inst.rho + np.linalg.norm(x @ inst.q))
    return float(best)


class _Levels:
    """Per-instance cache of the dyadic cell hierarchy and vertex grids."""

    def __init__(self, inst):
        self.inst = inst
        n = inst.n
        self.neg_curv = np.array([max(0.0, -np.linalg.eigvalsh(M)[0]) for M in inst.Qj])
        root = np.zeros((1, n))
        self.levels = [(root, np.array([0], dtype=int), max(inst.rho, 1e-12))]
        self.vertices = {}
        self.lip = None

    def constraint_lower(self, C, half):
        inst = self.inst
        r = half * math.sqrt(inst.n)
        CQ = np.tensordot(C, inst.Qj, axes=([1], [1]))  # (p, r, n); Q^j symmetric so this is Q^j c
        vals = 0.5 * np.einsum("prk,pk->pr", CQ, C) + C @ inst.qj.T + inst.bj
        gn = np.linalg.norm(CQ + inst.qj[None, :, :], axis=2)
        return vals - gn * r - 0.5 * self.neg_curv[None, :] * r * r

    def level(self, L):
        """(centers, parent index, half side) of the surviving cells at depth L."""
        while len(self.levels) <= L:
            C, _, half = self.levels[-1]
            n = self.inst.n
            offs = np.array(np.meshgrid(*[[-0.5, 0.5]] * n, indexing="ij")).reshape(n, -1).T * half
            kids = (C[:, None, :] + offs[None, :, :]).reshape(-1, n)
            parent = np.repeat(np.arange(C.shape[0]), offs.shape[0])
            keep = np.all(self.constraint_lower(kids, half / 2) <= 0, axis=1)
            self.levels.append((kids[keep], parent[keep], half / 2))
        return self.levels[L]

    def vertex_grid(self, L):
        """Feasible vertices of the uniform grid at depth L and their a-vectors."""
        if L not in self.vertices:
            inst = self.inst
            n = inst.n
            k = 2 ** L + 1
            ax = np.linspace(-inst.rho, inst.rho, k)
            V = np.stack(np.meshgrid(*[ax] * n, indexing="ij"), axis=-1).reshape(-1, n)
            V = V[np.all(_constraint_values(inst, V) <= 0, axis=1)]
            A = -0.5 * np.einsum("pi,mik,pk->pm", V, inst.Q, V) + V @ inst.q.T + inst.b
            self.vertices[L] = (V, A)
        return self.vertices[L]


def _levels(inst):
    lv = _cache.get(inst)
    if lv is None:
        lv = _Levels(inst)
        _cache[inst] = lv
    return lv


def _constraint_values(inst, C):
    CQ = np.tensordot(C, inst.Qj, axes=([1], [1]))
    return 0.5 * np.einsum("prk,pk->pr", CQ, C) + C @ inst.qj.T + inst.bj


def _cell_upper(inst, x, C, half, curv):
    Qx = np.tensordot(x, inst.Q, axes=1)
    qx = x @ inst.q
    G = -0.5 * np.einsum("pi,ik,pk->p", C, Qx, C) + C @ qx + float(x @ inst.b)
    grad = qx[None, :] - C @ Qx
    r = half * math.sqrt(inst.n)
    return G + np.linalg.norm(grad, axis=1) * r + 0.5 * curv * r * r, G


def _feasible_toward(inst, y_in, y_out, iters=60):
    """Last feasible point on the segment from feasible y_in to y_out."""
    if inst.in_Y(y_out, tol=0.0):
        return y_out
    a, b = 0.0, 1.0
    for _ in range(iters):
        t = 0.5 * (a + b)
        if inst.in_Y(y_in + t * (y_out - y_in), tol=0.0):
            a = t
        else:
            b = t
    return y_in + a * (y_out - y_in)


def local_polish(inst, x, y0, maxiter=100):
    """Local ascent of G(x, .) over Y from a feasible start; result is feasible."""
    Qx = np.tensordot(x, inst.Q, axes=1)
    qx = x @ inst.q
    bx = float(x @ inst.b)

    def f(y):
        return 0.5 * y @ Qx @ y - qx @ y - bx

    def fg(y):
        return Qx @ y - qx

    cons = [{
        "type": "ineq",
        "fun": lambda y: -(0.5 * np.einsum("i,jik,k->j", y, inst.Qj, y) + inst.qj @ y + inst.bj),
        "jac": lambda y: -(np.einsum("jik,k->ji", inst.Qj, y) + inst.qj),
    }]
    try:
        res = minimize(f, y0, jac=fg, constraints=cons, method="SLSQP",
                       options={"maxiter": maxiter, "ftol": 1e-14})
        y1 = np.asarray(res.x, dtype=float)
    except (ValueError, np.linalg.LinAlgError):
        return y0
    if not np.all(np.isfinite(y1)):
        return y0
    y1 = _feasible_toward(inst, y0, y1)
    return y1 if -f(y1) >= -f(y0) else y0


def brute_force_bracket(inst, x, step, refine_tol=None, polish=True, max_cells=MAX_CELLS):
    """Certified bracket of phi(x) from the dyadic grid of side <= ``step``.

    With ``refine_tol`` set, cells whose upper bound exceeds the best
    feasible value by more than ``refine_tol`` are split until none remain
    or the cell budget is exhausted.
    """
    check_grid_dim(inst)
    x = np.asarray(x, dtype=float)
    lv = _levels(inst)
    if lv.lip is None:
        lv.lip = lipschitz_y(inst)
    L = depth_for_step(inst, step)
    Qx = np.tensordot(x, inst.Q, axes=1)
    curv = max(0.0, -np.linalg.eigvalsh(Qx)[0]) if inst.n else 0.0

    # vertex lower bound
    V, A = lv.vertex_grid(L)
    if V.shape[0]:
        g = A @ x
        i = int(np.argmax(g))
        lo, y_best = float(g[i]), V[i].copy()
    else:
        lo, y_best = -np.inf, None

    # inherited cell upper bounds down to depth L
    ub = None
    for ell in range(L + 1):
        C, parent, half = lv.level(ell)
        u, G = _cell_upper(inst, x, C, half, curv)
        if ub is not None:
            u = np.minimum(u, ub[parent])
        ub = u
        feas = np.all(_constraint_values(inst, C) <= 0, axis=1)
        if np.any(feas):
            j = int(np.argmax(np.where(feas, G, -np.inf)))
            if G[j] > lo:
                lo, y_best = float(G[j]), C[j].copy()
    C, _, half = lv.level(L)
    n_cells = C.shape[0]

    if polish and y_best is not None:
        y_pol = local_polish(inst, x, y_best)
        g_pol = float(-0.5 * y_pol @ Qx @ y_pol + (x @ inst.q) @ y_pol + x @ inst.b)
        if g_pol > lo:
            lo, y_best = g_pol, y_pol

    # branch and bound on the surviving cells
    if refine_tol is not None and C.shape[0]:
        n = inst.n
        offs = np.array(np.meshgrid(*[[-0.5, 0.5]] * n, indexing="ij")).reshape(n, -1).T
        keep = ub > lo + refine_tol
        done_hi = float(np.max(ub[~keep], initial=-np.inf))
        C, ub = C[keep], ub[keep]
        while C.shape[0]:
            if C.shape[0] * offs.shape[0] > max_cells:
                break
            kids = (C[:, None, :] + offs[None, :, :] * half).reshape(-1, n)
            pub = np.repeat(ub, offs.shape[0])
            half = half / 2
            alive = np.all(lv.constraint_lower(kids, half) <= 0, axis=1)
            kids, pub = kids[alive], pub[alive]
            u, G = _cell_upper(inst, x, kids, half, curv)
            u = np.minimum(u, pub)
            n_cells += kids.shape[0]
            if kids.shape[0]:
                feas = np.all(_constraint_values(inst, kids) <= 0, axis=1)
                if np.any(feas):
                    j = int(np.argmax(np.where(feas, G, -np.inf)))
                    if G[j] > lo:
                        lo, y_best = float(G[j]), kids[j].copy()
            keep = u > lo + refine_tol
            done_hi = max(done_hi, float(np.max(u[~keep], initial=-np.inf)))
            C, ub = kids[keep], u[keep]
            if half < 1e-14:
                break
        hi = max(done_hi, float(np.max(ub, initial=-np.inf)))
    else:
        hi = float(np.max(ub, initial=-np.inf))

    if y_best is None:
        if not np.isfinite(hi):
            raise InfeasibleY("Y has no point in any grid cell")
        raise InfeasibleY("no feasible grid point found in Y; refine the grid")
    hi = max(hi, lo)
    eff = 2.0 * max(inst.rho, 1e-12) / 2 ** L
    return PhiBracket(lo=lo, hi=hi, y=y_best, grid_step=eff, lipschitz_bound=lv.lip, n_cells=int(n_cells))


def grid_candidates(inst, step):
    """Feasible vertices of the uniform grid with side <= step, with their a-vectors."""
    check_grid_dim(inst)
    return _levels(inst).vertex_grid(depth_for_step(inst, step))


def estimate_R(inst, step):
    """max ||a(y)|| over feasible grid vertices (nondecreasing under refinement)."""
    _, A = grid_candidates(inst, step)
    return float(np.max(np.linalg.norm(A, axis=1), initial=0.0))
