"""Small dense conic programs: PSD blocks, nonnegative/free scalars, linear rows.

Programs are assembled incrementally with :class:`ConicProgram` and solved by
the primal-dual path-following method of CVXOPT (Nesterov-Todd scaling,
Mehrotra predictor-corrector).  Every returned solution is re-checked here:
the status ``Optimal`` is only reported when our own residuals meet the
requested tolerances.

Variables live in one flat vector ``v``.  A PSD matrix variable of order ``d``
is stored as its lower triangle; :meth:`ConicProgram.inner` turns a symmetric
coefficient matrix into the matching linear functional.  Linear matrix
inequalities are written ``F0 + sum_i v_i F_i >= 0`` in the PSD order.
"""

from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix as cvxmatrix
from cvxopt import solvers

from .exceptions import SolverError

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
MAXITER = "MaxIter"

DEFAULT_GAP_TOL = 1e-8
DEFAULT_FEAS_TOL = 1e-8
DEFAULT_MAX_ITER = 200


def min_eig(M):
    """Smallest eigenvalue of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"min_eig expects a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-10 * scale:
        raise ValueError("min_eig expects a symmetric matrix")
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


@dataclass
class _Lmi:
    const: np.ndarray
    terms: dict  # var index -> symmetric matrix
    name: str


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    ineq_duals: np.ndarray  # one per "<=" row, >= 0
    eq_duals: np.ndarray  # one per "==" row
    lmi_duals: list  # one PSD matrix per LMI
    primal_objective: float
    dual_objective: float
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    raw_status: str = ""
    names: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status == OPTIMAL

    def value(self, idx):
        return self.x[np.asarray(idx)]


class ConicProgram:
    """Incrementally assembled conic program (minimization or maximization)."""

    def __init__(self, name="program"):
        self.name = name
        self.n = 0
        self.kinds = []
        self.var_names = []
        self.ineq = []  # (coef dict, rhs, name)
        self.eq = []
        self.lmis = []
        self.c = {}
        self.P_terms = []  # (indices, matrix)
        self.sense = "min"

    # -- variables ---------------------------------------------------------
    def add_variables(self, count, kind="free", name="v"):
        if kind not in ("free", "nonneg"):
            raise ValueError(f"unknown variable kind {kind!r}")
        idx = np.arange(self.n, self.n + count)
        self.n += count
        self.kinds.extend([kind] * count)
        self.var_names.extend(f"{name}[{i}]" for i in range(count))
        return idx

    def add_psd_variable(self, dim, name="Y"):
        """Add a symmetric PSD matrix variable; returns a dim x dim index map."""
        idx = np.zeros((dim, dim), dtype=int)
        for i in range(dim):
            for j in range(i + 1):
                k = self.add_variables(1, "free", f"{name}[{i},{j}]")[0]
                idx[i, j] = idx[j, i] = k
        terms = {}
        for i in range(dim):
            for j in range(i + 1):
                M = np.zeros((dim, dim))
                M[i, j] = M[j, i] = 1.0
                terms[int(idx[i, j])] = M
        self.lmis.append(_Lmi(np.zeros((dim, dim)), terms, f"{name}>=0"))
        return idx

    @staticmethod
    def inner(C, idx):
        """Linear functional v -> <C, Y> for a PSD variable with index map ``idx``."""
        C = np.asarray(C, dtype=float)
        dim = idx.shape[0]
        coef = {}
        for i in range(dim):
            for j in range(i + 1):
                w = C[i, i] if i == j else C[i, j] + C[j, i]
                if w != 0.0:
                    coef[int(idx[i, j])] = coef.get(int(idx[i, j]), 0.0) + float(w)
        return coef

    @staticmethod
    def matrix_value(x, idx):
        return x[idx]

    # -- constraints -------------------------------------------------------
    @staticmethod
    def _as_coef(coef):
        if isinstance(coef, dict):
            return {int(k): float(v) for k, v in coef.items()}
        idx, vals = coef
        out = {}
        for k, v in zip(np.atleast_1d(idx), np.atleast_1d(vals)):
            out[int(k)] = out.get(int(k), 0.0) + float(v)
        return out

    def add_constraint(self, coef, relation, rhs, name=""):
        """Add ``sum coef_k v_k (<=|==) rhs``; returns the row position in its family."""
        coef = self._as_coef(coef)
        if relation == "<=":
            self.ineq.append((coef, float(rhs), name))
            return len(self.ineq) - 1
        if relation == ">=":
            self.ineq.append(({k: -v for k, v in coef.items()}, -float(rhs), name))
            return len(self.ineq) - 1
        if relation in ("=", "=="):
            self.eq.append((coef, float(rhs), name))
            return len(self.eq) - 1
        raise ValueError(f"unknown relation {relation!r}")

    def add_lmi(self, const, terms, name="lmi"):
        """Add ``const + sum_k v_k M_k >= 0`` with ``terms`` a list of (index, M_k)."""
        const = np.asarray(const, dtype=float)
        tdict = {}
        for k, M in terms:
            M = np.asarray(M, dtype=float)
            k = int(k)
            tdict[k] = tdict[k] + M if k in tdict else M.copy()
        self.lmis.append(_Lmi(0.5 * (const + const.T), tdict, name))
        return len(self.lmis) - 1

    # -- objective ---------------------------------------------------------
    def set_objective(self, coef=None, sense="min"):
        if sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        self.sense = sense
        self.c = self._as_coef(coef) if coef is not None else {}

    def add_quadratic(self, idx, M):
        """Add ``1/2 v[idx]' M v[idx]`` (M PSD) to a minimization objective."""
        self.P_terms.append((np.asarray(idx, dtype=int), np.asarray(M, dtype=float)))

    # -- assembly ----------------------------------------------------------
    def _dense(self):
        n = self.n
        c = np.zeros(n)
        for k, v in self.c.items():
            c[k] += v
        if self.sense == "max":
            c = -c
        P = None
        if self.P_terms:
            P = np.zeros((n, n))
            for idx, M in self.P_terms:
                P[np.ix_(idx, idx)] += M
        rows, h = [], []
        for coef, rhs, _ in self.ineq:
            row = np.zeros(n)
            for k, v in coef.items():
                row[k] += v
            rows.append(row)
            h.append(rhs)
        nonneg = [i for i, kind in enumerate(self.kinds) if kind == "nonneg"]
        for i in nonneg:
            row = np.zeros(n)
            row[i] = -1.0
            rows.append(row)
            h.append(0.0)
        Gl = np.array(rows).reshape(-1, n)
        hl = np.array(h, dtype=float)
        Gs, hs = [], []
        for lmi in self.lmis:
            dim = lmi.const.shape[0]
            G = np.zeros((dim * dim, n))
            for k, M in lmi.terms.items():
                G[:, k] -= M.flatten(order="F")
            Gs.append(G)
            hs.append(lmi.const.flatten(order="F"))
        Ae = np.zeros((len(self.eq), n))
        be = np.zeros(len(self.eq))
        for r, (coef, rhs, _) in enumerate(self.eq):
            for k, v in coef.items():
                Ae[r, k] += v
            be[r] = rhs
        return c, P, Gl, hl, Gs, hs, Ae, be

    def residuals(self, x):
        """Primal infeasibility of ``x``: worst row violation and worst LMI eigenvalue."""
        _, _, Gl, hl, Gs, hs, Ae, be = self._dense()
        worst = 0.0
        if Gl.shape[0]:
            worst = max(worst, float(np.max(Gl @ x - hl, initial=0.0)))
        if Ae.shape[0]:
            worst = max(worst, float(np.max(np.abs(Ae @ x - be))))
        for G, h, lmi in zip(Gs, hs, self.lmis):
            dim = lmi.const.shape[0]
            S = (h - G @ x).reshape(dim, dim, order="F")
            worst = max(worst, -min_eig(0.5 * (S + S.T)))
        return worst

    def objective_value(self, x):
        c, P, *_ = self._dense()
        val = float(c @ x) + (0.5 * float(x @ P @ x) if P is not None else 0.0)
        return -val if self.sense == "max" else val

    def solve(self, gap_tol=DEFAULT_GAP_TOL, feas_tol=DEFAULT_FEAS_TOL, max_iter=DEFAULT_MAX_ITER):
        return solve(self, gap_tol=gap_tol, feas_tol=feas_tol, max_iter=max_iter)

    def to_sdpa(self):
        return to_sdpa(self)


def _cvx(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return cvxmatrix(a.reshape(-1, 1).copy(), tc="d")
    return cvxmatrix(np.ascontiguousarray(a), tc="d")


def solve(p, gap_tol=DEFAULT_GAP_TOL, feas_tol=DEFAULT_FEAS_TOL, max_iter=DEFAULT_MAX_ITER):
    """Solve a :class:`ConicProgram`; see module docstring for conventions."""
    c, P, Gl, hl, Gs, hs, Ae, be = p._dense()
    n = p.n
    G = np.vstack([Gl] + Gs) if (Gl.shape[0] or Gs) else np.zeros((0, n))
    h = np.concatenate([hl] + hs) if G.shape[0] else np.zeros(0)
    dims = {"l": int(Gl.shape[0]), "q": [], "s": [lmi.const.shape[0] for lmi in p.lmis]}
    options = {
        "show_progress": False,
        "maxiters": int(max_iter),
        "abstol": gap_tol * 1e-2,
        "reltol": gap_tol * 1e-1,
        "feastol": feas_tol * 1e-1,
        "refinement": 2,
    }
    kwargs = dict(G=_cvx(G), h=_cvx(h), dims=dims, options=options)
    if Ae.shape[0]:
        kwargs.update(A=_cvx(Ae), b=_cvx(be))
    try:
        if P is None:
            sol = solvers.conelp(_cvx(c), **kwargs)
        else:
            sol = solvers.coneqp(_cvx(0.5 * (P + P.T)), _cvx(c), **kwargs)
    except (ValueError, ArithmeticError) as exc:
        raise SolverError(f"conic engine failed on {p.name}: {exc}") from exc

    raw = sol["status"]
    x = np.array(sol["x"]).ravel() if sol["x"] is not None else np.full(n, np.nan)
    z = np.array(sol["z"]).ravel() if sol["z"] is not None else np.zeros(G.shape[0])
    y = np.array(sol["y"]).ravel() if sol["y"] is not None else np.zeros(Ae.shape[0])
    nl = dims["l"]
    n_user = len(p.ineq)
    ineq_duals = z[:n_user].copy()
    lmi_duals = []
    off = nl
    for dim in dims["s"]:
        Z = z[off:off + dim * dim].reshape(dim, dim, order="F")
        lmi_duals.append(0.5 * (Z + Z.T))
        off += dim * dim
    lmi_duals = lmi_duals[: len(p.lmis)]

    if raw == "primal infeasible":
        status = INFEASIBLE
    elif raw == "dual infeasible":
        status = UNBOUNDED
    else:
        status = None

    if np.all(np.isfinite(x)):
        pres = p.residuals(x)
        grad = c + (P @ x if P is not None else 0.0) + G.T @ z + (Ae.T @ y if Ae.shape[0] else 0.0)
        dres = float(np.max(np.abs(grad), initial=0.0)) / (1.0 + float(np.max(np.abs(c), initial=0.0)))
        pobj = float(c @ x) + (0.5 * float(x @ P @ x) if P is not None else 0.0)
        # Lagrange dual value from (z, y); exact when stationarity holds.
        dobj = float(-h @ z - be @ y) - (0.5 * float(x @ P @ x) if P is not None else 0.0)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
    else:
        pres = dres = gap = np.inf
        pobj = dobj = np.nan
    if status is None:
        scale = 1.0 + float(np.max(np.abs(h), initial=0.0))
        ok = pres <= feas_tol * scale and dres <= feas_tol * 10 and gap <= gap_tol * 10
        status = OPTIMAL if (raw == "optimal" or ok) and np.isfinite(gap) and pres <= 1e3 * feas_tol * scale else MAXITER
    sign = -1.0 if p.sense == "max" else 1.0
    return ConicSolution(
        status=status, x=x, ineq_duals=ineq_duals, eq_duals=y, lmi_duals=lmi_duals,
        primal_objective=sign * pobj, dual_objective=sign * dobj, gap=gap,
        primal_residual=pres, dual_residual=dres, iterations=int(sol.get("iterations", 0) or 0),
        raw_status=raw,
    )


@dataclass
class QpResult:
    x: np.ndarray
    z: np.ndarray  # inequality multipliers, >= 0
    y: np.ndarray  # equality multipliers
    objective: float
    kkt_residual: float
    status: str
    polished: bool


def _kkt_residual(P, c, G, h, A, b, x, z, y):
    stat = P @ x + c + G.T @ z + (A.T @ y if A.shape[0] else 0.0)
    slack = h - G @ x
    r = float(np.max(np.abs(stat), initial=0.0))
    r = max(r, float(np.max(-slack, initial=0.0)), float(np.max(-z, initial=0.0)))
    r = max(r, float(np.max(np.abs(z * slack), initial=0.0)))
    if A.shape[0]:
        r = max(r, float(np.max(np.abs(A @ x - b))))
    return r


def _polish(P, c, G, h, A, b, x, z, max_rounds=8):
    """Active-set refinement of an interior-point QP solution.

    Solves the equality-constrained KKT system on a guessed active set and
    repairs the guess (add violated rows, drop negative multipliers) until
    the point satisfies the KKT conditions to rounding error.
    """
    n = x.shape[0]
    slack = h - G @ x
    scale = 1.0 + np.abs(h)
    active = (slack <= 1e-6 * scale) | (z > np.maximum(slack, 1e-12))
    for _ in range(max_rounds):
        Ga = G[active]
        k, p = Ga.shape[0], A.shape[0]
        K = np.zeros((n + k + p, n + k + p))
        K[:n, :n] = P
        K[:n, n:n + k] = Ga.T
        K[n:n + k, :n] = Ga
        if p:
            K[:n, n + k:] = A.T
            K[n + k:, :n] = A
        rhs = np.concatenate([-c, h[active], b])
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        xs = sol[:n]
        za = sol[n:n + k]
        ys = sol[n + k:]
        viol = G @ xs - h
        tol = 1e-11 * scale
        bad_primal = (~active) & (viol > tol)
        bad_dual = np.zeros_like(active)
        bad_dual[np.flatnonzero(active)] = za < -1e-11
        if not bad_primal.any() and not bad_dual.any():
            zs = np.zeros(G.shape[0])
            zs[active] = np.maximum(za, 0.0)
            return xs, zs, ys
        active = (active | bad_primal) & ~bad_dual
    return None


def solve_qp(P, c, G=None, h=None, A=None, b=None, polish=True, gap_tol=1e-10, feas_tol=1e-10, max_iter=DEFAULT_MAX_ITER):
    """min 1/2 x'Px + c'x  s.t.  Gx <= h, Ax = b, with KKT multipliers.

    The interior-point solution is polished by an active-set step so that
    primal values and multipliers are accurate to rounding error on the
    small dense problems solved here.
    """
    P = np.asarray(P, dtype=float)
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float).reshape(-1, n)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).ravel()
    A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float).reshape(-1, n)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
    options = {"show_progress": False, "maxiters": int(max_iter), "abstol": gap_tol,
               "reltol": gap_tol, "feastol": feas_tol, "refinement": 2}
    kwargs = {"options": options}
    if G.shape[0]:
        kwargs.update(G=_cvx(G), h=_cvx(h))
    if A.shape[0]:
        kwargs.update(A=_cvx(A), b=_cvx(b))
    try:
        sol = solvers.coneqp(_cvx(0.5 * (P + P.T)), _cvx(c), **kwargs)
    except (ValueError, ArithmeticError) as exc:
        raise SolverError(f"QP solve failed: {exc}") from exc
    if sol["x"] is None:
        raise SolverError(f"QP solve failed with status {sol['status']}")
    x = np.array(sol["x"]).ravel()
    z = np.array(sol["z"]).ravel() if G.shape[0] else np.zeros(0)
    y = np.array(sol["y"]).ravel() if A.shape[0] else np.zeros(0)
    polished = False
    if polish:
        out = _polish(P, c, G, h, A, b, x, z)
        if out is not None:
            xp, zp, yp = out
            obj_ipm = 0.5 * x @ P @ x + c @ x
            obj_pol = 0.5 * xp @ P @ xp + c @ xp
            if obj_pol <= obj_ipm + 1e-9 * (1 + abs(obj_ipm)):
                x, z, y, polished = xp, zp, yp, True
    res = _kkt_residual(P, c, G, h, A, b, x, z, y)
    status = OPTIMAL if (sol["status"] == "optimal" or polished or res <= 1e-7) else MAXITER
    return QpResult(x=x, z=z, y=y, objective=float(0.5 * x @ P @ x + c @ x), kkt_residual=res,
                    status=status, polished=polished)


def to_sdpa(p):
    """Plain-text SDPA-like dump of a program for external cross-checking.

    Layout: ``min c'v  s.t.  sum_k v_k F_k - F_0 >= 0`` with one diagonal block
    holding the linear rows (equalities as two opposite inequalities) and one
    dense block per LMI.  A quadratic objective is reported in a comment.
    """
    c, P, Gl, hl, Gs, hs, Ae, be = p._dense()
    lin_rows = np.vstack([Gl, Ae, -Ae]) if Ae.shape[0] else Gl
    lin_rhs = np.concatenate([hl, be, -be]) if Ae.shape[0] else hl
    blocks = []
    if lin_rows.shape[0]:
        blocks.append(-lin_rows.shape[0])
    blocks.extend(lmi.const.shape[0] for lmi in p.lmis)
    lines = [f'"{p.name}" ({p.sense}imization; objective negated when maximizing)']
    if P is not None:
        lines.append('"quadratic objective term present; not representable in SDPA"')
    lines.append(str(p.n))
    lines.append(str(len(blocks)))
    lines.append(" ".join(str(bk) for bk in blocks))
    lines.append(" ".join(repr(float(v)) for v in c))

    def emit(mat_no, blk, i, j, val):
        if val != 0.0:
            lines.append(f"{mat_no} {blk} {i + 1} {j + 1} {float(val)!r}")

    # F_0 then F_k; row form a'v <= h becomes h - a'v >= 0, i.e. F_k = -a_k, F_0 = -h.
    for mat_no in range(p.n + 1):
        blk = 1
        if lin_rows.shape[0]:
            for i in range(lin_rows.shape[0]):
                emit(mat_no, blk, i, i, -lin_rhs[i] if mat_no == 0 else -lin_rows[i, mat_no - 1])
            blk += 1
        for G, h, lmi in zip(Gs, hs, p.lmis):
            dim = lmi.const.shape[0]
            M = (-h if mat_no == 0 else -G[:, mat_no - 1]).reshape(dim, dim, order="F")
            for i in range(dim):
                for j in range(i, dim):
                    emit(mat_no, blk, i, j, M[i, j])
            blk += 1
    return "\n".join(lines) + "\n"
