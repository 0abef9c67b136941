"""Command line: ``sipk gen | run | verify | rates``.

``run`` writes instance.json, cp_trace.csv / ioa_trace.csv and summary.json
into ``--out`` and exits 0 only when every audit passes.  Errors are printed
as one JSON object on stderr with exit code 2; failed audits exit 1.
"""

import argparse
import datetime
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import traces
from .cutting_planes import (certify_rates, effective_delta, estimate_R, estimate_tau, rate_bounds, run_cp,
                             trace_atoms)
from .exceptions import SipError
from .generate import GeneratorSpec, generate_instance
from .ioa import gap_bound, run_ioa
from .oracle import DELTA_TOL, make_oracle
from .problem import load_instance
from .verification import (brute_force_phi, check_dual_smoothness, check_oracle_chain, check_relaxation,
                           check_strong_duality, reference_solution)

logger = logging.getLogger("sipk")

EXIT_OK, EXIT_AUDIT, EXIT_ERROR = 0, 1, 2
PHI_TOL = 1e-5  # inner iterates must satisfy phi_hi <= PHI_TOL
GAP_TOL = 1e-6


def nominal_delta(spec):
    name, _, arg = spec.partition(":")
    name = name.strip().lower()
    if name in ("sdp", "sdp+grid", "fallback", "adversarial") and arg:
        return float(arg)
    return 0.0


def contract_delta(spec):
    # the oracle's own target check allows DELTA_TOL of rounding
    return max(nominal_delta(spec), DELTA_TOL)


def _instance(args):
    if args.instance:
        return load_instance(args.instance)
    spec = GeneratorSpec(m=args.m, n=args.n, r=args.r, nonconvex=args.nonconvex, family=args.family)
    return generate_instance(spec, seed=args.seed)


def _brackets(inst, points, step):
    return [brute_force_phi(inst, x, step, refine_tol=1e-9) for x in points]


def run_cp_experiment(inst, args, ref):
    oracle = make_oracle(args.oracle, inst, resolution=args.resolution, seed=args.seed)
    tr = run_cp(inst, oracle, epsilon=args.eps, strategy=args.strategy, max_iter=args.max_iter)
    delta = nominal_delta(args.oracle)
    brs = _brackets(inst, [it.x for it in tr.iterates], args.resolution)
    cdelta = contract_delta(args.oracle)
    chain = [check_oracle_chain(it.oracle, br, cdelta, inst=inst) for it, br in zip(tr.iterates, brs)]
    inv_ok, inv = tr.invariant_report()
    out = {"iterations": len(tr.iterates), "termination": tr.termination, "x": tr.x, "objective": tr.objective,
           "strategy": tr.strategy, "oracle": tr.oracle, "oracle_chain_pass": all(chain),
           "oracle_chain_failures": [i for i, ok in enumerate(chain) if not ok],
           "invariants_pass": inv_ok, "invariants": inv}
    cert = None
    if inst.mu > 0:
        val_star, z_star, _, _, ref_atoms = ref
        extra = np.vstack([trace_atoms(tr), ref_atoms])
        R = estimate_R(inst, args.resolution, extra)
        tau = estimate_tau(inst, z_star, args.resolution, extra)
        d_eff = effective_delta(tr, delta)
        if d_eff < 1:
            cert = certify_rates(tr, val_star, R, tau, inst.mu, d_eff, phi_hi=[b.hi for b in brs],
                                 feas_slack=max(b.width for b in brs) + 1e-9)
            out["rates"] = cert.to_dict()
        else:
            out["rates"] = {"pass": False, "reason": f"effective delta {d_eff!r} >= 1"}
    else:
        out["rates"] = {"pass": True, "skipped": "objective not strongly convex"}
    out["pass"] = bool(out["oracle_chain_pass"] and inv_ok and out["rates"]["pass"])
    return out, traces.cp_csv(tr, cert, brs)


def run_ioa_experiment(inst, args, ref):
    oracle = make_oracle(args.oracle, inst, resolution=args.resolution, seed=args.seed)
    tr = run_ioa(inst, oracle, args.eps1, args.eps2, args.mu_lo, args.mu_hi, args.max_iter, args.schedule)
    cdelta = contract_delta(args.oracle)
    inner = [it.xhat for it in tr.iterates]
    brs = [None if xh is None else brute_force_phi(inst, xh, args.resolution, refine_tol=1e-9) for xh in inner]
    feas = [br is None or br.hi <= PHI_TOL for br in brs]
    chain = [check_oracle_chain(it.oracle, brute_force_phi(inst, it.x, args.resolution, refine_tol=1e-9),
                                cdelta, inst=inst) for it in tr.iterates]
    val_star = ref[0]
    xh = tr.xhat
    out = {"iterations": len(tr.iterates), "termination": tr.termination, "verdict": tr.verdict,
           "restriction_infeasible": tr.restriction_infeasible, "xhat": xh, "objective": tr.objective,
           "inner_feasible_pass": all(feas), "oracle_chain_pass": all(chain),
           "oracle_chain_failures": [i for i, ok in enumerate(chain) if not ok]}
    if tr.termination == "certified":
        final_br = brute_force_phi(inst, xh, args.resolution, refine_tol=1e-9)
        out["inner_feasible_pass"] = bool(final_br.hi <= PHI_TOL)
    if tr.termination == "converged":
        bound = gap_bound(tr)
        out["gap_bound"] = bound
        out["gap"] = tr.objective - val_star
        out["gap_bound_pass"] = bool(tr.objective - val_star <= bound + GAP_TOL)
    else:
        out["gap_bound_pass"] = True
    out["pass"] = bool(out["inner_feasible_pass"] and out["oracle_chain_pass"] and out["gap_bound_pass"])
    return out, traces.ioa_csv(tr, brs)


def cmd_run(args):
    inst = _instance(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces.write_text(out / "instance.json", inst.to_json(indent=2, sort_keys=True) + "\n")
    ref = reference_solution(inst, resolution=args.resolution, return_atoms=True)
    summary = {"instance": inst.name, "algo": args.algo, "oracle": args.oracle, "seed": args.seed,
               "val_star": ref[0], "val_star_source": ref[3], "mu": inst.mu, "diam": inst.diam, "C_F": inst.C_F}
    ok = True
    if args.algo in ("cp", "both"):
        res, csv_text = run_cp_experiment(inst, args, ref)
        traces.write_text(out / "cp_trace.csv", csv_text)
        summary["cp"] = res
        ok &= res["pass"]
    if args.algo in ("ioa", "both"):
        res, csv_text = run_ioa_experiment(inst, args, ref)
        traces.write_text(out / "ioa_trace.csv", csv_text)
        summary["ioa"] = res
        ok &= res["pass"]
    summary["pass"] = bool(ok)
    summary["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    traces.write_text(out / "summary.json", traces.dumps(summary))
    print(json.dumps({"pass": bool(ok), "out": str(out)}))
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_gen(args):
    spec = GeneratorSpec(m=args.m, n=args.n, r=args.r, nonconvex=args.nonconvex, family=args.family)
    inst = generate_instance(spec, seed=args.seed)
    text = inst.to_json(indent=2, sort_keys=True) + "\n"
    if args.out:
        traces.write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args):
    inst = _instance(args)
    rng = np.random.default_rng(args.seed)
    pts = [inst.lo + (inst.hi - inst.lo) * rng.uniform(size=inst.m) for _ in range(args.points)]
    reports = []
    for x in pts:
        reports.append(check_relaxation(inst, x, args.resolution))
        reports.append(check_strong_duality(inst, x))
    if inst.mu > 0:
        reports.append(check_dual_smoothness(inst, samples=args.samples, seed=args.seed))
    doc = [r.to_dict() for r in reports]
    text = traces.dumps(doc)
    if args.out:
        traces.write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_AUDIT


def cmd_rates(args):
    cols = traces.read_csv(args.trace)
    if not cols:
        raise SipError(f"empty trace {args.trace}")
    k = cols["k"]
    bo, bf = rate_bounds(k, args.R, args.tau, args.mu, args.delta)
    gaps = args.val_star - cols["F"]
    pass_opt = gaps <= bo + args.opt_tol
    best = np.minimum.accumulate(cols["phi_hi"])
    pass_feas = (k < 2) | (best <= bf + args.feas_slack)
    doc = {"trace": args.trace, "R": args.R, "tau_hat": args.tau, "mu": args.mu, "delta": args.delta,
           "val_star": args.val_star, "n_opt_fail": int(np.sum(~pass_opt)), "n_feas_fail": int(np.sum(~pass_feas)),
           "pass": bool(np.all(pass_opt) and np.all(pass_feas)),
           "max_opt_ratio": float(np.max(gaps / bo)), "worst_feas_excess": float(np.max(best - bf)),
           "opt_tol": args.opt_tol, "feas_slack": args.feas_slack}
    sys.stdout.write(traces.dumps(doc))
    return EXIT_OK if doc["pass"] else EXIT_AUDIT


def _source_args(p):
    p.add_argument("--instance", help="instance JSON file")
    p.add_argument("--gen", action="store_true", help="generate the instance instead of reading it")
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--nonconvex", action="store_true")
    p.add_argument("--family", default="random", choices=["random", "certified"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=float, default=1e-3, help="grid step for oracles and auditors")


def build_parser():
    parser = argparse.ArgumentParser(prog="sipk", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a seeded instance")
    _source_args(g)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run CP and/or IOA with audits")
    _source_args(r)
    r.add_argument("--spec", help="JSON experiment spec; keys are the long option names")
    r.add_argument("--algo", choices=["cp", "ioa", "both"], default="cp")
    r.add_argument("--oracle", default="grid")
    r.add_argument("--eps", type=float, default=1e-6)
    r.add_argument("--eps1", type=float, default=1e-4)
    r.add_argument("--eps2", type=float, default=1e-4)
    r.add_argument("--strategy", default="keepall")
    r.add_argument("--max-iter", type=int, default=200)
    r.add_argument("--mu-lo", type=float, default=1.0)
    r.add_argument("--mu-hi", type=float, default=None)
    r.add_argument("--schedule", choices=["constant", "ladder"], default="constant")
    r.add_argument("--out", default="sipk-out")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="relaxation, duality and smoothness audits")
    _source_args(v)
    v.add_argument("--points", type=int, default=5)
    v.add_argument("--samples", type=int, default=200)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("rates", help="re-audit a CP trace CSV against the rate bounds")
    t.add_argument("--trace", required=True)
    t.add_argument("--R", type=float, required=True)
    t.add_argument("--tau", type=float, required=True)
    t.add_argument("--mu", type=float, required=True)
    t.add_argument("--delta", type=float, default=0.0)
    t.add_argument("--val-star", type=float, required=True)
    t.add_argument("--opt-tol", type=float, default=1e-8)
    t.add_argument("--feas-slack", type=float, default=1e-9)
    t.set_defaults(func=cmd_rates)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "spec", None):
        with open(args.spec) as fh:
            spec = json.load(fh)
        known = vars(args)
        bad = [k for k in spec if k.replace("-", "_") not in known]
        if bad:
            raise SipError(f"unknown spec keys: {', '.join(sorted(bad))}")
        # explicit command-line flags win over the spec file
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in spec.items()})
        args = parser.parse_args(argv)
    if args.command in ("run", "verify") and not args.instance and not args.gen:
        # no source given: fall back to the generator with the given seed
        args.gen = True
    return args


def main(argv=None):
    logging.basicConfig(level=os.environ.get("SIPK_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parse_args(argv)
        return args.func(args)
    except (SipError, ValueError, OSError, json.JSONDecodeError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(err) + "\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
