"""CSV traces and JSON summaries with deterministic float formatting."""

import csv
import io
import json

import numpy as np

CP_COLUMNS = ["k", "F", "theta", "nu", "n_atoms", "phi_lo", "phi_hi", "bound_opt", "bound_feas",
              "pass_opt", "pass_feas"]
IOA_COLUMNS = ["k", "F_x", "F_xhat", "nu1", "nu2", "n_Y", "n_cuts", "mu", "phi_hat_lo", "phi_hat_hi"]


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def plain(v):
    """Convert numpy containers and scalars to JSON-ready Python objects."""
    if isinstance(v, dict):
        return {str(k): plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return plain(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if np.isnan(f):
            return "nan"
        if np.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return v


def _write(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def cp_rows(trace, cert=None, brackets=None):
    rows = []
    for i, it in enumerate(trace.iterates):
        br = brackets[i] if brackets is not None else None
        row = {"k": it.k, "F": it.objective, "theta": it.theta, "nu": it.nu, "n_atoms": it.n_atoms,
               "phi_lo": br.lo if br is not None else it.oracle.phi_lo,
               "phi_hi": br.hi if br is not None else it.oracle.phi_hi}
        if cert is not None:
            row.update(bound_opt=cert.bound_opt[i], bound_feas=cert.bound_feas[i],
                       pass_opt=bool(cert.pass_opt[i]), pass_feas=bool(cert.pass_feas[i]))
        rows.append(row)
    return rows


def cp_csv(trace, cert=None, brackets=None):
    return _write(cp_rows(trace, cert, brackets), CP_COLUMNS)


def ioa_csv(trace, brackets=None):
    rows = []
    for i, it in enumerate(trace.iterates):
        br = brackets[i] if brackets is not None else None
        rows.append({"k": it.k, "F_x": it.F_x, "F_xhat": it.F_xhat, "nu1": it.nu1, "nu2": it.nu2,
                     "n_Y": it.n_Y, "n_cuts": it.n_cuts, "mu": it.mu,
                     "phi_hat_lo": None if br is None else br.lo, "phi_hat_hi": None if br is None else br.hi})
    return _write(rows, IOA_COLUMNS)


def read_csv(path):
    """Read a trace CSV back as a dict of float arrays (booleans become 0/1)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    if not rows:
        return out
    for key in rows[0]:
        vals = []
        for r in rows:
            s = r[key]
            vals.append({"true": 1.0, "false": 0.0, "": np.nan}.get(s, None) if s in ("true", "false", "")
                        else float(s))
        out[key] = np.array(vals, dtype=float)
    return out


def dumps(doc):
    return json.dumps(plain(doc), indent=2, sort_keys=True) + "\n"


def write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)
