"""Inexact separation oracles.

An oracle answers ``separate(inst, x)`` with a point y_hat in Y, the value
g = G(x, y_hat), an upper bound v_hat >= phi(x), and the bracket
[phi_lo, phi_hi] it knows phi(x) lies in.  The certified relative gap is

    (v_hat - g) / min(|phi_lo|, |phi_hi|)    when the bracket has one sign,

which guarantees v_hat - g <= delta |phi(x)|.  When the bracket straddles 0
the gap is measured against max(|phi_lo|, |phi_hi|) and the answer is
flagged ``near_boundary``.  Gaps below ``ATOL`` certify delta = 0.
"""

import weakref
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import CertificationFailed
from .grid import (_feasible_toward, brute_force_bracket, check_grid_dim, grid_candidates,
                   local_polish)
from .problem import eval_G
from .shor import certified_dual_bound, solve_sdp_x

ATOL = 1e-9
DELTA_TOL = 1e-8  # rounding allowance when comparing a certified delta to its target
_anchor_cache = weakref.WeakKeyDictionary()


@dataclass(frozen=True)
class OracleResult:
    x: np.ndarray
    y_hat: np.ndarray
    g_at_y: float
    v_hat: float
    phi_lo: float
    phi_hi: float
    certified_delta: float
    near_boundary: bool
    source: str

    def to_dict(self):
        return {
            "x": [float(v) for v in self.x], "y_hat": [float(v) for v in self.y_hat],
            "g_at_y": self.g_at_y, "v_hat": self.v_hat, "phi_lo": self.phi_lo, "phi_hi": self.phi_hi,
            "certified_delta": self.certified_delta, "near_boundary": self.near_boundary,
            "source": self.source,
        }


def certify(g, v, phi_lo=None, phi_hi=None, atol=ATOL):
    """Return (certified_delta, near_boundary) for the answer (g, v)."""
    phi_lo = g if phi_lo is None else phi_lo
    phi_hi = v if phi_hi is None else phi_hi
    gap = v - g
    if gap <= atol:
        return 0.0, bool(phi_lo < 0 < phi_hi)
    if phi_lo > 0 or phi_hi < 0:
        scale = min(abs(phi_lo), abs(phi_hi))
        return (gap / scale if scale > 0 else np.inf), False
    scale = max(abs(phi_lo), abs(phi_hi))
    return (gap / scale if scale > 0 else np.inf), True


def make_result(inst, x, y, v, source, phi_lo=None, phi_hi=None):
    g = eval_G(inst, x, y)
    v = max(float(v), g)
    lo = g if phi_lo is None else max(float(phi_lo), g)
    hi = v if phi_hi is None else min(float(phi_hi), v)
    d, nb = certify(g, v, lo, hi)
    return OracleResult(np.array(x, dtype=float), np.array(y, dtype=float), g, v, lo, hi, float(d), nb, source)


class Oracle:
    """Base class; subclasses implement ``separate``."""

    target_delta = None

    def separate(self, inst, x):
        raise NotImplementedError

    def __call__(self, inst, x):
        return self.separate(inst, x)

    def _check_target(self, res):
        if self.target_delta is not None and res.certified_delta > self.target_delta + DELTA_TOL:
            raise CertificationFailed(
                f"{res.source}: certified gap {res.certified_delta:.3e} exceeds target {self.target_delta:.3e}",
                result=res)
        return res

    def describe(self):
        return type(self).__name__


class GridOracle(Oracle):
    """Brute force over a dyadic grid of Y with certified cell bounds."""

    def __init__(self, resolution=1e-3, refine_tol=1e-10, polish=True, target_delta=None):
        self.resolution = float(resolution)
        self.refine_tol = refine_tol
        self.polish = polish
        self.target_delta = target_delta

    def separate(self, inst, x):
        br = brute_force_bracket(inst, x, self.resolution, refine_tol=self.refine_tol, polish=self.polish)
        return self._check_target(make_result(inst, x, br.y, br.hi, "grid", br.lo, br.hi))

    def describe(self):
        return f"grid:{self.resolution!r}"


def interior_anchor(inst):
    """A point of Y used to pull infeasible candidates back: 0 if feasible, else the
    grid vertex with the smallest worst-constraint value."""
    a = _anchor_cache.get(inst)
    if a is None:
        if inst.in_Y(np.zeros(inst.n), tol=0.0):
            a = np.zeros(inst.n)
        else:
            V, _ = grid_candidates(inst, max(inst.rho, 1e-6) / 32)
            if V.shape[0] == 0:
                V, _ = grid_candidates(inst, max(inst.rho, 1e-6) / 256)
            cons = 0.5 * np.einsum("pi,jik,pk->pj", V, inst.Qj, V) + V @ inst.qj.T + inst.bj
            a = V[int(np.argmin(cons.max(axis=1)))]
        _anchor_cache[inst] = a
    return a


def project_to_Y(inst, y, anchor=None):
    anchor = interior_anchor(inst) if anchor is None else anchor
    return _feasible_toward(inst, anchor, np.asarray(y, dtype=float))


def gradient_ascent(inst, x, y, steps=50):
    """Projected gradient ascent on G(x, .) with step 1/(||Q(x)||_2 + 1)."""
    Qx = np.tensordot(x, inst.Q, axes=1)
    qx = x @ inst.q
    step = 1.0 / (np.linalg.norm(Qx, 2) + 1.0)
    g = eval_G(inst, x, y)
    for _ in range(steps):
        trial = y + step * (qx - Qx @ y)
        y_new = _feasible_toward(inst, y, trial)
        g_new = eval_G(inst, x, y_new)
        if g_new <= g + 1e-15:
            break
        y, g = y_new, g_new
    return y


class SdpOracle(Oracle):
    """Upper bound from the Shor relaxation, point from rounding plus local ascent."""

    def __init__(self, target_delta=0.0, ascent_steps=50, local_solve=True):
        if not 0 <= target_delta < 1:
            raise ValueError("target_delta must lie in [0, 1)")
        self.target_delta = float(target_delta)
        self.ascent_steps = ascent_steps
        self.local_solve = local_solve

    def candidates(self, inst, Y):
        n = inst.n
        out = [Y[:n, n]]
        w, V = np.linalg.eigh(0.5 * (Y + Y.T))
        for k in range(n, -1, -1):
            if w[k] < 1e-9 * max(1.0, w[-1]):
                break
            v = V[:, k]
            if abs(v[n]) > 1e-8:
                out.append(v[:n] / v[n])
            d = v[:n]
            if np.linalg.norm(d) > 1e-12:
                d = d / np.linalg.norm(d) * np.sqrt(max(np.trace(Y[:n, :n]), 0.0))
                out.extend([Y[:n, n] + d, Y[:n, n] - d])
        return out

    def separate(self, inst, x):
        x = np.asarray(x, dtype=float)
        sdp = solve_sdp_x(inst, x)
        sol = sdp.solution
        if not sol.ok:
            raise CertificationFailed(f"sdp oracle: relaxation solve ended with status {sol.status}")
        r = inst.r
        v = certified_dual_bound(inst, x, sol.ineq_duals[:r], sol.ineq_duals[r], sol.eq_duals[0])
        anchor = interior_anchor(inst)
        best_y, best_g = anchor, eval_G(inst, x, anchor)
        for y in self.candidates(inst, sdp.Y):
            y = project_to_Y(inst, y, anchor)
            y = gradient_ascent(inst, x, y, self.ascent_steps)
            g = eval_G(inst, x, y)
            if g > best_g:
                best_y, best_g = y, g
        if self.local_solve and v - best_g > ATOL:
            y = local_polish(inst, x, best_y)
            if eval_G(inst, x, y) > best_g:
                best_y = y
        return self._check_target(make_result(inst, x, best_y, v, "sdp"))

    def describe(self):
        return f"sdp:{self.target_delta!r}"


class FallbackOracle(Oracle):
    """Try ``primary``; on CertificationFailed use ``secondary``."""

    def __init__(self, primary, secondary):
        self.primary = primary
        self.secondary = secondary
        self.target_delta = None

    def separate(self, inst, x):
        try:
            return self.primary.separate(inst, x)
        except CertificationFailed:
            return self.secondary.separate(inst, x)

    def describe(self):
        return f"{self.primary.describe()}|{self.secondary.describe()}"


class AdversarialOracle(Oracle):
    """Worst answer still satisfying the delta contract, chosen among grid points.

    Uses the base oracle's bracket as knowledge of phi: returns the grid point
    with the smallest G(x, y) such that v_hat - G <= delta * (lower bound on |phi|).
    """

    def __init__(self, base, delta, seed=0, resolution=None):
        if not 0 <= delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        self.base = base
        self.delta = float(delta)
        self.seed = seed
        self.resolution = resolution
        self.target_delta = None

    def separate(self, inst, x):
        res = self.base.separate(inst, x)
        if self.delta == 0:
            return res
        if res.phi_lo > 0:
            thr = res.v_hat - self.delta * res.phi_lo
        elif res.phi_hi < 0:
            thr = res.v_hat - self.delta * abs(res.phi_hi)
        else:
            return res
        check_grid_dim(inst)
        step = self.resolution or getattr(self.base, "resolution", None) or inst.rho / 64
        V, A = grid_candidates(inst, step)
        G = A @ np.asarray(x, dtype=float)
        ok = np.flatnonzero(G >= thr)
        if ok.size == 0:
            return res
        gmin = G[ok].min()
        ties = ok[G[ok] <= gmin + 1e-15]
        pick = ties[0] if ties.size == 1 else ties[np.random.default_rng(self.seed).integers(ties.size)]
        out = make_result(inst, x, V[pick], res.v_hat, f"adversarial:{self.delta!r}", res.phi_lo, res.phi_hi)
        if out.g_at_y < thr:
            return res
        return replace(out, phi_lo=res.phi_lo, phi_hi=res.phi_hi)

    def describe(self):
        return f"adversarial:{self.delta!r}"


def grid_oracle(inst, resolution=1e-3, **kw):
    check_grid_dim(inst)
    return GridOracle(resolution, **kw)


def sdp_oracle(inst, target_delta=0.0, **kw):
    return SdpOracle(target_delta, **kw)


def adversarial_oracle(base, delta, seed=0, **kw):
    return AdversarialOracle(base, delta, seed, **kw)


def make_oracle(spec, inst=None, resolution=1e-3, seed=0):
    """Parse 'grid', 'grid:STEP', 'sdp', 'sdp:DELTA', 'sdp+grid:DELTA', 'adversarial:DELTA'."""
    name, _, arg = spec.partition(":")
    name = name.strip().lower()
    if name == "grid":
        step = float(arg) if arg else resolution
        return GridOracle(step)
    if name == "sdp":
        return SdpOracle(float(arg) if arg else 0.0)
    if name in ("sdp+grid", "fallback"):
        return FallbackOracle(SdpOracle(float(arg) if arg else 0.0), GridOracle(resolution))
    if name == "adversarial":
        if not arg:
            raise ValueError("adversarial oracle needs a delta, e.g. adversarial:0.5")
        return AdversarialOracle(GridOracle(resolution), float(arg), seed=seed, resolution=resolution)
    raise ValueError(f"unknown oracle spec {spec!r}")
