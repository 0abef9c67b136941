"""Semi-infinite program instances: schema, validation and evaluation.

An instance describes

    min_{x in X}  F(x) = 1/2 x'Px + c'x
    s.t.          G(x, y) <= 0   for all y in Y,

with ``G(x, y) = -1/2 y'Q(x)y + q(x)'y + b(x)`` linear in ``x`` and ``Y`` cut
out by finitely many quadratic inequalities inside the ball ``B(0, rho)``.
"""

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InstanceError
from .validation import check_matrix, check_stack, check_symmetric, check_vector

logger = logging.getLogger(__name__)

PSD_TOL = 1e-9
BALL_TOL = 1e-6


@dataclass(frozen=True)
class SlaterCertificate:
    x: np.ndarray
    margin: float


@dataclass(frozen=True, eq=False)
class SipInstance:
    """Validated, immutable problem instance with derived quantities."""

    P: np.ndarray
    c: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    A: np.ndarray  # (p, m); p may be 0
    d: np.ndarray
    Q: np.ndarray  # (m, n, n)
    q: np.ndarray  # (m, n)
    b: np.ndarray  # (m,)
    Qj: np.ndarray  # (r, n, n)
    qj: np.ndarray  # (r, n)
    bj: np.ndarray  # (r,)
    rho: float
    slater: SlaterCertificate | None = None
    name: str = "instance"
    f0: float = 0.0  # constant term of F
    # derived
    mu: float = field(default=0.0)
    C_F: float = field(default=0.0)
    diam: float = field(default=0.0)
    lifted_Q: np.ndarray = field(default=None, repr=False)
    lifted_Qj: np.ndarray = field(default=None, repr=False)
    qj_psd: tuple = field(default=())
    lower_level_convex: bool = False

    @property
    def m(self):
        return self.c.shape[0]

    @property
    def n(self):
        return self.q.shape[1]

    @property
    def r(self):
        return self.bj.shape[0]

    @property
    def strongly_convex(self):
        return self.mu > 0

    @property
    def E(self):
        E = np.zeros((self.n + 1, self.n + 1))
        E[-1, -1] = 1.0
        return E

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.c @ x + self.f0)

    def objective_grad(self, x):
        return self.P @ np.asarray(x, dtype=float) + self.c

    def in_X(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        ok = np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol)
        if self.A.shape[0]:
            ok = ok and np.all(self.A @ x <= self.d + tol)
        return bool(ok)

    def Q_of(self, x):
        return np.tensordot(np.asarray(x, dtype=float), self.Q, axes=1)

    def q_of(self, x):
        return np.asarray(x, dtype=float) @ self.q

    def b_of(self, x):
        return float(np.asarray(x, dtype=float) @ self.b)

    def y_constraints(self, y):
        """Values of the r lower-level constraints at ``y`` (feasible iff all <= 0)."""
        y = np.asarray(y, dtype=float)
        return 0.5 * np.einsum("i,jik,k->j", y, self.Qj, y) + self.qj @ y + self.bj

    def in_Y(self, y, tol=1e-9):
        return bool(np.all(self.y_constraints(y) <= tol))

    def to_dict(self):
        doc = {
            "name": self.name,
            "objective": {"P": self.P.tolist(), "c": self.c.tolist(), "const": self.f0},
            "X": {"lo": self.lo.tolist(), "hi": self.hi.tolist()},
            "separation": {
                "Q": self.Q.tolist(),
                "q": self.q.tolist(),
                "b": self.b.tolist(),
            },
            "Y": {
                "Qj": self.Qj.tolist(),
                "qj": self.qj.tolist(),
                "bj": self.bj.tolist(),
                "rho": self.rho,
            },
        }
        if self.A.shape[0]:
            doc["X"]["A"] = self.A.tolist()
            doc["X"]["d"] = self.d.tolist()
        if self.slater is not None:
            doc["slater"] = {"x": self.slater.x.tolist(), "margin": self.slater.margin}
        return doc

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _get(doc, *path):
    cur = doc
    for key in path:
        if not isinstance(cur, dict) or key not in cur:
            raise InstanceError("missing field: " + ".".join(path))
        cur = cur[key]
    return cur


def _box_corners(lo, hi, limit=16):
    m = lo.shape[0]
    if m > limit:
        return None
    return np.array(list(itertools.product(*zip(lo, hi))), dtype=float)


def lift_matrices(Q, q, b):
    """Return the stacked (n+1)x(n+1) blocks 1/2 [[-Q_i, q_i], [q_i', 2 b_i]]."""
    k, n = q.shape
    out = np.zeros((k, n + 1, n + 1))
    out[:, :n, :n] = -Q
    out[:, :n, n] = q
    out[:, n, :n] = q
    out[:, n, n] = 2 * b
    return 0.5 * out


def lift_constraint_matrices(Qj, qj, bj):
    """Return the stacked blocks 1/2 [[Q^j, q^j], [q^j', 2 b_j]]."""
    r, n = qj.shape
    out = np.zeros((r, n + 1, n + 1))
    out[:, :n, :n] = Qj
    out[:, :n, n] = qj
    out[:, n, :n] = qj
    out[:, n, n] = 2 * bj
    return 0.5 * out


def _sample_Y_norms(Qj, qj, bj, rho, n):
    """Max of ||y|| over feasible samples of a box enclosing B(0, 2 rho + 1)."""
    half = 2 * rho + 1.0
    if n <= 4:
        per_dim = {1: 2001, 2: 201, 3: 41, 4: 21}[n]
        axes = [np.linspace(-half, half, per_dim)] * n
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    else:
        rng = np.random.default_rng(0)
        pts = rng.uniform(-half, half, size=(20000, n))
    vals = 0.5 * np.einsum("pi,jik,pk->pj", pts, Qj, pts) + pts @ qj.T + bj
    feas = np.all(vals <= 0, axis=1)
    if not np.any(feas):
        return None
    return float(np.max(np.linalg.norm(pts[feas], axis=1)))


def validate_instance(raw, require_strong_convexity=False, check_ball=True):
    """Parse and validate an instance document (dict or JSON string).

    Raises InstanceError on dimension mismatches, non-symmetric matrices,
    unbounded or degenerate boxes, missing strong convexity when it is
    required, and sampled points of Y outside the declared ball.
    """
    if isinstance(raw, SipInstance):
        raw = raw.to_dict()
    if isinstance(raw, (str, bytes)):
        raw = json.loads(raw)
    if not isinstance(raw, dict):
        raise InstanceError("instance document must be a mapping")

    c = check_vector(_get(raw, "objective", "c"), name="objective.c")
    m = c.shape[0]
    P = check_symmetric(_get(raw, "objective", "P"), size=m, name="objective.P")
    f0 = float(raw["objective"].get("const", 0.0) or 0.0)
    if not np.isfinite(f0):
        raise InstanceError("objective.const must be finite")

    lo_raw = np.asarray(_get(raw, "X", "lo"), dtype=float)
    hi_raw = np.asarray(_get(raw, "X", "hi"), dtype=float)
    if np.any(~np.isfinite(lo_raw)) or np.any(~np.isfinite(hi_raw)):
        raise InstanceError("unbounded box: X bounds must be finite")
    lo = check_vector(lo_raw, size=m, name="X.lo")
    hi = check_vector(hi_raw, size=m, name="X.hi")
    if np.any(hi <= lo):
        raise InstanceError("degenerate box: every coordinate needs lo < hi")
    Xdoc = raw["X"]
    if Xdoc.get("A") is not None and len(Xdoc.get("A")):
        A = check_matrix(Xdoc["A"], name="X.A")
        if A.shape[1] != m:
            raise InstanceError(f"dimension mismatch: X.A has {A.shape[1]} columns, expected {m}")
        d = check_vector(Xdoc.get("d"), size=A.shape[0], name="X.d")
    else:
        A, d = np.zeros((0, m)), np.zeros(0)

    q_raw = _get(raw, "separation", "q")
    if len(q_raw) != m:
        raise InstanceError(f"dimension mismatch: separation.q has {len(q_raw)} rows, expected {m}")
    q = check_matrix(np.atleast_2d(np.asarray(q_raw, dtype=float)), name="separation.q")
    if q.shape[0] != m:
        q = q.reshape(m, -1)
    n = q.shape[1]
    if n < 1:
        raise InstanceError("lower-level dimension n must be positive")
    Q = check_stack(_get(raw, "separation", "Q"), m, n, name="separation.Q")
    b = check_vector(_get(raw, "separation", "b"), size=m, name="separation.b")

    Ydoc = _get(raw, "Y")
    bj = check_vector(_get(raw, "Y", "bj"), name="Y.bj")
    r = bj.shape[0]
    if r < 1:
        raise InstanceError("Y needs at least one constraint to be compact")
    qj = np.asarray(_get(raw, "Y", "qj"), dtype=float).reshape(r, -1) if r else np.zeros((0, n))
    qj = check_matrix(qj, shape=(r, n), name="Y.qj")
    Qj = check_stack(_get(raw, "Y", "Qj"), r, n, name="Y.Qj")
    rho = float(_get(raw, "Y", "rho"))
    if not np.isfinite(rho) or rho < 0:
        raise InstanceError("Y.rho must be a finite nonnegative scalar")

    eigP = np.linalg.eigvalsh(P)
    mu = float(eigP[0])
    if mu < -PSD_TOL * max(1.0, abs(eigP[-1])):
        raise InstanceError(f"objective is not convex: lambda_min(P) = {mu:.3e}")
    mu = max(mu, 0.0)
    if require_strong_convexity and mu <= 0:
        raise InstanceError("rate certification requires mu = lambda_min(P) > 0")

    corners = _box_corners(lo, hi)
    if corners is not None:
        C_F = float(np.max(np.linalg.norm(corners @ P + c, axis=1)))
    else:
        C_F = float(eigP[-1] * np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))) + np.linalg.norm(c))
    diam = float(np.linalg.norm(hi - lo))

    qj_psd = tuple(bool(np.linalg.eigvalsh(M)[0] >= -PSD_TOL) for M in Qj)
    lower_convex = all(qj_psd)
    if lower_convex:
        if corners is not None:
            for x in corners:
                if np.linalg.eigvalsh(np.tensordot(x, Q, axes=1))[0] < -PSD_TOL:
                    lower_convex = False
                    break
        else:
            lower_convex = bool(np.all(Q == 0))

    if check_ball:
        ymax = _sample_Y_norms(Qj, qj, bj, rho, n)
        if ymax is not None and ymax > rho * (1 + BALL_TOL) + BALL_TOL:
            raise InstanceError(f"Y is not contained in B(0, rho): sampled ||y|| = {ymax:.6g} > rho = {rho:.6g}")
        if ymax is not None and rho > 0 and ymax < 0.1 * rho:
            logger.warning("rho=%.3g is loose (sampled max ||y|| = %.3g); the restriction may be poorly conditioned", rho, ymax)

    slater = None
    if raw.get("slater") is not None:
        xs = check_vector(_get(raw, "slater", "x"), size=m, name="slater.x")
        margin = float(_get(raw, "slater", "margin"))
        if margin <= 0:
            raise InstanceError("slater.margin must be positive")
        slater = SlaterCertificate(xs, margin)

    inst = SipInstance(
        P=P, c=c, lo=lo, hi=hi, A=A, d=d, Q=Q, q=q, b=b, Qj=Qj, qj=qj, bj=bj, rho=rho,
        slater=slater, name=str(raw.get("name", "instance")), f0=f0, mu=mu, C_F=C_F, diam=diam,
        lifted_Q=lift_matrices(Q, q, b), lifted_Qj=lift_constraint_matrices(Qj, qj, bj),
        qj_psd=qj_psd, lower_level_convex=lower_convex,
    )
    for arr in (P, c, lo, hi, A, d, Q, q, b, Qj, qj, bj, inst.lifted_Q, inst.lifted_Qj):
        arr.setflags(write=False)
    if slater is not None:
        check_slater(inst)
    return inst


def make_instance(P, c, lo, hi, Q, q, b, Qj, qj, bj, rho, A=None, d=None, slater=None, name="instance", const=0.0,
                  **kwargs):
    """Build and validate an instance from plain arrays."""
    doc = {
        "name": name,
        "objective": {"P": np.atleast_2d(P).tolist(), "c": np.atleast_1d(c).tolist(), "const": float(const)},
        "X": {"lo": np.atleast_1d(lo).tolist(), "hi": np.atleast_1d(hi).tolist()},
        "separation": {"Q": np.asarray(Q, dtype=float).tolist(), "q": np.asarray(q, dtype=float).tolist(),
                       "b": np.atleast_1d(b).tolist()},
        "Y": {"Qj": np.asarray(Qj, dtype=float).tolist(), "qj": np.asarray(qj, dtype=float).tolist(),
              "bj": np.atleast_1d(bj).tolist(), "rho": float(rho)},
    }
    if A is not None:
        doc["X"]["A"] = np.atleast_2d(A).tolist()
        doc["X"]["d"] = np.atleast_1d(d).tolist()
    if slater is not None:
        doc["slater"] = {"x": np.atleast_1d(slater[0]).tolist(), "margin": float(slater[1])}
    return validate_instance(doc, **kwargs)


def load_instance(path, **kwargs):
    with open(path) as fh:
        return validate_instance(json.load(fh), **kwargs)


def check_slater(inst, grid_step=None):
    """Grid-verify ``max_y G(x_S, y) <= -margin`` up to the grid slack."""
    from .grid import brute_force_bracket

    step = grid_step or max(inst.rho, 1e-3) / 200
    br = brute_force_bracket(inst, inst.slater.x, step)
    if br.lo > -inst.slater.margin + (br.hi - br.lo) + 1e-9:
        raise InstanceError(
            f"Slater certificate rejected: sampled max G(x_S, y) = {br.lo:.6g} > -margin = {-inst.slater.margin:.6g}"
        )
    return br


def eval_G(inst, x, y):
    x = check_vector(x, size=inst.m, name="x")
    y = check_vector(y, size=inst.n, name="y")
    return float(-0.5 * y @ inst.Q_of(x) @ y + inst.q_of(x) @ y + inst.b_of(x))


def a_vector(inst, y):
    """Coefficient vector a(y) with G(x, y) = x'a(y)."""
    y = check_vector(y, size=inst.n, name="y")
    return -0.5 * np.einsum("i,mik,k->m", y, inst.Q, y) + inst.q @ y + inst.b


def a_matrix(inst, Y):
    """Rows a(y) for a stack of points ``Y`` of shape (N, n)."""
    Y = np.asarray(Y, dtype=float).reshape(-1, inst.n)
    return -0.5 * np.einsum("pi,mik,pk->pm", Y, inst.Q, Y) + Y @ inst.q.T + inst.b


def lift_Q(inst, x):
    """The lifted matrix Q(x) with <Q(x), [y;1][y;1]'> = G(x, y)."""
    x = check_vector(x, size=inst.m, name="x")
    return np.tensordot(x, inst.lifted_Q, axes=1)


def lift_point(y):
    v = np.append(np.asarray(y, dtype=float), 1.0)
    return np.outer(v, v)
