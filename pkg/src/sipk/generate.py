"""Seeded random instances with a strongly convex objective and a Slater point."""

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import InstanceError
from .grid import brute_force_bracket
from .problem import make_instance

MAX_TRIES = 50


@dataclass(frozen=True)
class GeneratorSpec:
    m: int = 2
    n: int = 1
    r: int = 1
    nonconvex: bool = False
    family: str = "random"  # random | certified
    rho: float = 1.0
    margin: float = 1.0

    def __post_init__(self):
        if not (1 <= self.m <= 10 and 1 <= self.n <= 4 and 1 <= self.r <= 6):
            raise InstanceError("generator sizes must satisfy m <= 10, n <= 4, r <= 6")
        if self.family not in ("random", "certified"):
            raise InstanceError(f"unknown generator family {self.family!r}")
        if self.family == "certified" and self.m < 2:
            raise InstanceError("the certified family needs m >= 2")

    def to_dict(self):
        return asdict(self)


def _psd(rng, k, scale=1.0):
    B = rng.normal(size=(k, k))
    return scale * (B @ B.T) / k


def _sym(rng, k):
    B = rng.normal(size=(k, k))
    return 0.5 * (B + B.T)


def _bound_G(Q, q, b, x, rho):
    """Upper bound of max_{||y|| <= rho} G(x, y)."""
    Qx = np.tensordot(x, Q, axes=1)
    curv = max(0.0, -np.linalg.eigvalsh(Qx)[0])
    return 0.5 * curv * rho ** 2 + np.linalg.norm(x @ q) * rho + float(x @ b)


def _draw(spec, rng):
    m, n, r, rho = spec.m, spec.n, spec.r, spec.rho
    P = _psd(rng, m) + 0.5 * np.eye(m)
    lo, hi = -2.0 * np.ones(m), 2.0 * np.ones(m)
    x_F = rng.uniform(0.5, 1.5, size=m)
    c = -P @ x_F

    Qj = [2.0 / rho ** 2 * np.eye(n)]
    qj = [np.zeros(n)]
    bj = [-1.0]
    for _ in range(r - 1):
        Qj.append(_psd(rng, n, scale=rng.uniform(0.5, 2.0)))
        qj.append(rng.normal(scale=0.3, size=n))
        bj.append(-rng.uniform(0.2, 1.0))

    Q = np.zeros((m, n, n))
    if spec.family == "certified":
        Q[0] = np.eye(n)
        lo[0], hi[0] = 0.5, 2.0
        x_F[0] = rng.uniform(0.6, 1.5)
        c = -P @ x_F
        x_S = -np.ones(m)
        x_S[0] = 0.5
    else:
        x_S = -np.ones(m)
        if spec.nonconvex:
            i = int(rng.integers(m))
            w, V = np.linalg.eigh(_sym(rng, n))
            # force a negative direction, and a positive one when n > 1 (indefinite)
            w[0] = min(w[0], -0.5)
            if n > 1:
                w[-1] = max(w[-1], 0.5)
            Q[i] = (V * w) @ V.T
    q = rng.normal(size=(m, n))
    b = rng.normal(scale=0.5, size=m)
    # shift b along x_S so that G(x_S, .) <= -margin on the whole ball
    b = b + (-spec.margin - _bound_G(Q, q, b, x_S, rho)) * x_S / (x_S @ x_S)
    return dict(P=P, c=c, lo=lo, hi=hi, Q=Q, q=q, b=b, Qj=np.array(Qj), qj=np.array(qj), bj=np.array(bj),
                rho=rho, slater=(x_S, spec.margin), x_F=x_F)


def generate_instance(spec=None, seed=0, **kw):
    """Draw a valid instance whose unconstrained minimizer violates the constraint."""
    if spec is None:
        spec = GeneratorSpec(**kw)
    elif isinstance(spec, dict):
        spec = GeneratorSpec(**spec)
    rng = np.random.default_rng(seed)
    for _ in range(MAX_TRIES):
        d = _draw(spec, rng)
        x_F = d.pop("x_F")
        name = f"gen-{spec.family}-m{spec.m}-n{spec.n}-r{spec.r}{'-nc' if spec.nonconvex else ''}-s{seed}"
        inst = make_instance(**d, name=name)
        if brute_force_bracket(inst, x_F, inst.rho / 16).lo > 0.1:
            return inst
    raise InstanceError(f"generation retry limit exceeded for seed {seed}; resample the seed")
