"""Independent auditors: brute-force brackets, relaxation and duality checks,
smoothness of the dual function, and the oracle contract.

Auditors only read declared outputs (oracle results, trace fields) and are
deterministic.  Each returns a :class:`Report` that serializes to JSON.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .cutting_planes import run_cp, theta_eval
from .exceptions import RestrictionInfeasible, SolverError
from .grid import PhiBracket, brute_force_bracket
from .ioa import solve_sipr
from .oracle import FallbackOracle, GridOracle, SdpOracle
from .problem import eval_G
from .shor import certified_dual_bound, dsdp_slater_point, solve_dsdp_x, solve_sdp_x

__all__ = [
    "PhiBracket", "Report", "brute_force_phi", "check_relaxation", "check_strong_duality",
    "check_dual_smoothness", "check_oracle_chain", "audit_oracle_calls", "reference_solution",
]


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


@dataclass
class Report:
    check: str
    instance: str
    passed: bool
    witness: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return _plain(d)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def brute_force_phi(inst, x, grid_step, refine_tol=None, dual_bound="auto"):
    """Certified bracket of phi(x) from the grid.

    When the bracket is wider than ``refine_tol`` the upper end is first
    tightened with a rigorous bound from an approximate dual Shor solution
    (``dual_bound`` = "auto" or True), then by branch and bound if needed.
    """
    br = brute_force_bracket(inst, x, grid_step)
    if refine_tol is None or br.width <= refine_tol:
        return br
    if dual_bound:
        d = solve_dsdp_x(inst, x)
        if d.solution.ok:
            ub = certified_dual_bound(inst, x, d.lam, d.alpha, d.beta)
            if ub < br.hi:
                br = PhiBracket(br.lo, max(ub, br.lo), br.y, br.grid_step, br.lipschitz_bound, br.n_cells)
        if br.width <= refine_tol:
            return br
    fine = brute_force_bracket(inst, x, grid_step, refine_tol=refine_tol)
    lo = max(br.lo, fine.lo)
    y = br.y if br.lo >= fine.lo else fine.y
    return PhiBracket(lo, max(lo, min(br.hi, fine.hi)), y, fine.grid_step, fine.lipschitz_bound, fine.n_cells)


def check_relaxation(inst, x, grid_step, tol=1e-6, eq_tol=1e-4, refine_tol=1e-9):
    """val(SDP_x) >= phi(x) always; equality when Q(x) and every Q^j are PSD."""
    x = np.asarray(x, dtype=float)
    val = solve_sdp_x(inst, x).value
    br = brute_force_phi(inst, x, grid_step, refine_tol=refine_tol)
    psd = all(inst.qj_psd) and np.linalg.eigvalsh(inst.Q_of(x))[0] >= -1e-9
    ge = val >= br.lo - tol
    eq = (br.lo - eq_tol <= val <= br.hi + eq_tol) if psd else None
    passed = bool(ge and (eq is None or eq))
    return Report("relaxation", inst.name, passed,
                  {"x": x, "sdp_value": val, "phi_lo": br.lo, "phi_hi": br.hi, "all_psd": bool(psd),
                   "ge_holds": bool(ge), "eq_holds": eq},
                  {"ge_tol": tol, "eq_tol": eq_tol, "grid_step": grid_step})


def check_strong_duality(inst, x, tol=1e-6):
    """Primal and dual Shor values agree; the explicit dual Slater point is strictly feasible."""
    x = np.asarray(x, dtype=float)
    p = solve_sdp_x(inst, x)
    d = solve_dsdp_x(inst, x)
    gap = abs(p.value - d.value)
    lam, alpha, beta, slack = dsdp_slater_point(inst, x)
    slater_ok = slack > 0 and alpha > 0 and np.all(lam > 0)
    passed = bool(p.solution.ok and d.solution.ok and gap <= tol * (1 + abs(p.value)) and slater_ok)
    return Report("strong_duality", inst.name, passed,
                  {"x": x, "primal": p.value, "dual": d.value, "gap": gap, "slater_alpha": alpha,
                   "slater_min_eig": slack, "primal_status": p.solution.status, "dual_status": d.solution.status},
                  {"gap_tol": tol})


def check_dual_smoothness(inst, samples=200, seed=0, z_scale=1.0, fd_step=1e-6, fd_tol=1e-5,
                          lip_tol=1e-6, lb_tol=1e-9):
    """Finite-difference gradient, 1/mu-Lipschitz gradient, and the quadratic lower bound."""
    if inst.mu <= 0:
        raise ValueError("dual smoothness needs mu > 0")
    rng = np.random.default_rng(seed)
    m = inst.m
    worst_fd = worst_ratio = 0.0
    lb_viol = 0
    worst_lb = -np.inf
    for _ in range(samples):
        z = rng.normal(scale=z_scale, size=m)
        zp = rng.normal(scale=z_scale, size=m)
        y = rng.normal(size=m)
        gamma = rng.uniform(0, 1)
        th, g = theta_eval(inst, z)
        thp, gp = theta_eval(inst, zp)
        dz = np.linalg.norm(z - zp)
        if dz > 0:
            worst_ratio = max(worst_ratio, np.linalg.norm(g - gp) / dz)
        e = rng.normal(size=m)
        e /= np.linalg.norm(e)
        fd = (theta_eval(inst, z + fd_step * e)[0] - theta_eval(inst, z - fd_step * e)[0]) / (2 * fd_step)
        worst_fd = max(worst_fd, abs(fd - g @ e))
        thy, _ = theta_eval(inst, z + gamma * y)
        lhs = thy - (th + gamma * (g @ y) - (y @ y) * gamma ** 2 / (2 * inst.mu))
        worst_lb = max(worst_lb, -lhs)
        if lhs < -lb_tol:
            lb_viol += 1
    passed = bool(worst_fd <= fd_tol and worst_ratio <= 1 / inst.mu + lip_tol and lb_viol == 0)
    return Report("dual_smoothness", inst.name, passed,
                  {"samples": samples, "max_fd_error": worst_fd, "max_lipschitz_ratio": worst_ratio,
                   "inv_mu": 1 / inst.mu, "lower_bound_violations": lb_viol, "worst_lower_bound_excess": worst_lb},
                  {"fd_tol": fd_tol, "lip_tol": lip_tol, "lb_tol": lb_tol, "fd_step": fd_step})


def check_oracle_chain(result, bracket, delta, atol=1e-8, inst=None):
    """Verify phi - d|phi| <= G <= phi <= v_hat <= phi + d|phi| against the bracket.

    Each inequality gets slack equal to the bracket width plus ``atol``.
    """
    lo, hi = bracket.lo, bracket.hi
    w = bracket.hi - bracket.lo + atol
    mag = max(abs(lo), abs(hi))
    g, v = result.g_at_y, result.v_hat
    ok = (g <= hi + w and v >= lo - w and v <= hi + delta * mag + w and g >= lo - delta * mag - w)
    if inst is not None:
        ok = ok and inst.in_Y(result.y_hat, tol=1e-9) and abs(eval_G(inst, result.x, result.y_hat) - g) <= atol
    return bool(ok)


def audit_oracle_calls(inst, results, delta, grid_step, refine_tol=1e-9):
    """Check every recorded oracle answer; returns (all_ok, list of failing indices)."""
    bad = []
    for i, res in enumerate(results):
        br = brute_force_phi(inst, res.x, grid_step, refine_tol=refine_tol)
        if not check_oracle_chain(res, br, delta, inst=inst):
            bad.append(i)
    return not bad, bad


def reference_solution(inst, resolution=1e-3, max_iter=500, return_atoms=False):
    """(val_star, z_star, x_star, source) from routes independent of the audited run.

    A long cutting-plane run with an exact oracle (the Shor bound where it
    certifies a zero gap, otherwise a grid ten times finer) gives the dual
    point and, for nonconvex lower levels, the value.  When the lower level
    is convex the value comes from the conic restriction, which is exact there.
    With ``return_atoms`` the atoms spanning z_star are appended, so that
    z_star is certainly inside the cone used for the tau estimate.
    """
    oracle = FallbackOracle(SdpOracle(0.0), GridOracle(resolution / 10, refine_tol=1e-11))
    tr = run_cp(inst, oracle, epsilon=1e-10, max_iter=max_iter)
    last = tr.iterates[-1]
    val, x, source = last.objective, last.x, "cp"
    if inst.lower_level_convex:
        for tol in ({"gap_tol": 1e-10, "feas_tol": 1e-10}, {}):
            try:
                s = solve_sipr(inst, **tol)
            except RestrictionInfeasible:
                break
            except SolverError:
                continue
            val, x, source = s.value, s.x_bar, "sipr"
            break
    if return_atoms:
        return val, last.z, x, source, last.atoms
    return val, last.z, x, source
