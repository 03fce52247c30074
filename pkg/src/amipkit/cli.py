"""Command-line front end.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or schema
error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import replace

import numpy as np

from . import simlab
from .amip import amis, apip, decompose, refit_lower_bound
from .certify import certify_qoi
from .dataset import ModelSpec, build_problem, load_csv
from .errors import AlphaTooSmallError, AmipError, DegenerateSubsetError, UsageError
from .influence import dtheta_dw, influence_scores, make_qoi
from .sandwich import SandwichOptions, noise_sigma, sandwich_covariance
from .zestim import fit as fit_problem

SCHEMA_VERSION = 1
QOI_KINDS = {
    "sign": "sign-change",
    "sig": "significance-change",
    "both": "sign-and-significance",
    "param": "parameter",
}


def _num(x):
    return None if x is None or (isinstance(x, float) and not np.isfinite(x)) else float(x)


def _floats(a):
    return [_num(v) for v in np.asarray(a, dtype=float).ravel()]


def _se_options(args):
    if args.se == "lm-compat":
        return SandwichOptions.lm_compatible()
    return SandwichOptions(cluster_mode="by-label" if args.cluster_col else "none")


def load_problem(args):
    """Read the CSV and assemble the regression named by the CLI flags."""
    if not args.data:
        raise UsageError("--data is required")
    if not args.outcome or not args.target:
        raise UsageError("--outcome and --target are required")
    controls = list(args.controls or [])
    categorical = set(args.categorical or [])
    instruments = list(args.instruments or [])
    columns = [args.outcome, args.target, *controls, *instruments]
    if args.weights_col:
        columns.append(args.weights_col)
    schema = {c: ("categorical" if c in categorical else "numeric") for c in columns}
    if args.cluster_col:
        schema[args.cluster_col] = "categorical"
    data = load_csv(args.data, schema, missing=args.missing)
    spec = ModelSpec(
        outcome=args.outcome,
        regressors=[args.target, *controls],
        instruments=[*instruments, *controls] if instruments else None,
        intercept=args.intercept,
        weights=args.weights_col,
        clusters=args.cluster_col,
    )
    problem = build_problem(data, spec)
    return problem, problem.index_of(args.target), data.n_dropped


def _rows(problem, idx):
    return [int(problem.row_ids[i]) for i in idx]


def analysis_report(problem, target_index, *, kinds=("sign-change", "significance-change",
                    "sign-and-significance"), alpha=0.01, delta=None, rerun=False,
                    certify=False, se_options=None, top_k=10, n_dropped_rows=0):
    """Fit, score and summarize robustness for each reversal target.

    Returns a JSON-ready dict. Refit numbers appear only when ``rerun`` is
    set, and ``achieved`` always reflects refit numbers.
    """
    opts = se_options or SandwichOptions()
    fit = fit_problem(problem)
    cov = sandwich_covariance(fit, problem, None, opts)
    report = {
        "schema_version": SCHEMA_VERSION,
        "model": {
            "names": list(problem.names),
            "theta": _floats(fit.theta_hat),
            "se": _floats(cov.standard_errors),
            "N": problem.N,
            "P": problem.P,
            "estimator": fit.kind,
            "target": problem.names[target_index],
            "target_index": target_index,
            "se_options": vars(opts) if hasattr(opts, "__dict__") else str(opts),
            "rows_dropped_on_load": n_dropped_rows,
        },
        "targets": [],
    }
    for kind in kinds:
        q = make_qoi(kind, fit, problem, target_index, opts)
        if kind == "parameter" and delta is not None:
            q = replace(q, delta=float(delta))
        inf = influence_scores(fit, problem, q)
        sigma = noise_sigma(fit, q, cov, problem)
        ap = apip(inf, q.delta)
        block = {
            "qoi": kind,
            "delta": q.delta,
            "sigma_psi": sigma,
            "signal_to_noise": _num(q.delta / sigma) if sigma > 0 else None,
            "n_removed": ap.m_removed,
            "alpha_star": ap.alpha_star,
            "predicted_change": ap.predicted_change,
            "removed_rows": _rows(problem, ap.dropped_indices),
        }
        try:
            am = amis(inf, alpha)
        except AlphaTooSmallError:
            am = None
        if am is not None:
            dec = decompose(inf, am, sigma)
            block["amis"] = {
                "alpha": alpha,
                "n_dropped": am.n_dropped,
                "predicted_change": am.amip,
                "dropped_rows": _rows(problem, am.dropped_indices),
            }
            block["decomposition"] = {
                "sigma_psi": dec.sigma_psi,
                "gamma_alpha": _num(dec.gamma_alpha),
                "gamma_bound": dec.gamma_bound,
                "degenerate": dec.degenerate,
            }
        if rerun:
            block.update(_refit_block(problem, fit, q, ap))
            if am is not None:
                block["amis"].update(_amis_refit(problem, fit, q, am, target_index))
        if certify and am is not None:
            block["certificate"] = _certificate_block(problem, fit, q, am, rerun)
        order = inf.sorted_order[:top_k]
        block["top_influential"] = [{"row": int(problem.row_ids[i]), "psi": float(inf.psi[i])}
                                    for i in order]
        report["targets"].append(block)
    return report


def _refit_block(problem, fit, q, ap):
    if ap.is_na:
        return {"refit_estimate": None, "refit_se": None, "refit_change": None,
                "achieved": False, "refit_status": "NA"}
    try:
        ref = refit_lower_bound(problem, fit, q, ap)
    except DegenerateSubsetError as exc:
        return {"refit_estimate": None, "refit_se": None, "refit_change": None,
                "achieved": False, "refit_status": f"degenerate: {exc}"}
    p = q.target_index
    return {
        "refit_estimate": float(ref.theta_after[p]),
        "refit_se": None if ref.se_after is None else float(ref.se_after[p]),
        "refit_change": ref.exact_change,
        "achieved": ref.achieved,
        "refit_status": "ok",
    }


def _amis_refit(problem, fit, q, am, p):
    try:
        ref = refit_lower_bound(problem, fit, q, am)
    except DegenerateSubsetError as exc:
        return {"refit_status": f"degenerate: {exc}"}
    return {
        "refit_estimate": float(ref.theta_after[p]),
        "refit_se": None if ref.se_after is None else float(ref.se_after[p]),
        "refit_change": ref.exact_change,
        "refit_status": "ok",
        "theta_after": _floats(ref.theta_after),
    }


def _certificate_block(problem, fit, q, am, rerun):
    cert = certify_qoi(problem, fit, am.w_star, q)
    out = cert.as_dict()
    if rerun and am.n_dropped:
        try:
            new = fit_problem(problem, am.w_star)
        except DegenerateSubsetError:
            return out
        lin = fit.theta_hat + dtheta_dw(fit, problem).T @ (am.w_star - 1)
        out["measured_lin_error"] = float(np.linalg.norm(new.theta_hat - lin))
        out["measured_diff"] = float(np.linalg.norm(new.theta_hat - fit.theta_hat))
    return out


def rerun_check(problem, target_index, kind="parameter", alphas=(0.0, 0.01, 0.05, 0.1),
                se_options=None, tolerance=0.25):
    """Predicted versus refit change after dropping the AMIS at each alpha.

    Rows whose refit is degenerate, or whose relative disagreement exceeds
    ``tolerance``, are flagged; the sweep always runs to completion.
    """
    opts = se_options or SandwichOptions()
    fit = fit_problem(problem)
    q = make_qoi(kind, fit, problem, target_index, opts)
    inf = influence_scores(fit, problem, q)
    rows = []
    for a in alphas:
        row = {"alpha": float(a), "n_dropped": 0, "predicted_change": 0.0,
               "actual_change": 0.0, "abs_error": 0.0, "flagged": False, "note": ""}
        if a > 0:
            try:
                am = amis(inf, a)
            except AlphaTooSmallError:
                am = None
            if am is not None and am.n_dropped:
                row["n_dropped"] = am.n_dropped
                row["predicted_change"] = am.amip
                try:
                    ref = refit_lower_bound(problem, fit, q, am)
                except DegenerateSubsetError as exc:
                    row.update(actual_change=None, abs_error=None, flagged=True,
                               note=f"degenerate refit: {exc}")
                    rows.append(row)
                    continue
                err = ref.exact_change - am.amip
                row.update(actual_change=ref.exact_change, abs_error=abs(err))
                scale = max(abs(ref.exact_change), abs(am.amip))
                if scale > 0 and abs(err) > tolerance * scale:
                    row.update(flagged=True, note="linear approximation disagrees with refit")
        rows.append(row)
    return {"schema_version": SCHEMA_VERSION, "qoi": kind,
            "target": problem.names[target_index], "rows": rows}


# ---------------------------------------------------------------- rendering


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v[:10]) + (", ..." if len(v) > 10 else "") + "]"
    return str(v)


def _kv_table(pairs, indent=""):
    width = max((len(k) for k, _ in pairs), default=0)
    return "\n".join(f"{indent}{k.ljust(width)}  {_fmt(v)}" for k, v in pairs)


def render_table(report) -> str:
    """UTF-8 text rendering of a report; numbers come from the same dict as JSON."""
    lines = []
    if "model" in report:
        m = report["model"]
        lines.append(f"Model: {m['estimator']}, N={m['N']}, P={m['P']}, target={m['target']}")
        lines.append(_kv_table([(f"{n}", f"{_fmt(t)} ({_fmt(s)})")
                                for n, t, s in zip(m["names"], m["theta"], m["se"])], "  "))
        for block in report["targets"]:
            lines.append("")
            lines.append(f"[{block['qoi']}]")
            simple = [(k, v) for k, v in block.items()
                      if not isinstance(v, (dict, list)) or k == "removed_rows"]
            lines.append(_kv_table(simple, "  "))
            for sub in ("amis", "decomposition", "certificate"):
                if sub in block:
                    lines.append(f"  {sub}:")
                    flat = []
                    for k, v in block[sub].items():
                        if isinstance(v, dict):
                            flat.extend((f"{k}.{kk}", vv) for kk, vv in v.items())
                        else:
                            flat.append((k, v))
                    lines.append(_kv_table(flat, "    "))
            lines.append("  top influential rows:")
            lines.append(_kv_table([(f"row {t['row']}", t["psi"])
                                    for t in block["top_influential"]], "    "))
        return "\n".join(lines) + "\n"
    rows = report.get("rows")
    if rows:
        cols = list(rows[0])
        cells = [[_fmt(r[c]) for c in cols] for r in rows]
        widths = [max(len(c), *(len(x[i]) for x in cells)) for i, c in enumerate(cols)]
        out = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
        out += ["  ".join(x.ljust(w) for x, w in zip(r, widths)) for r in cells]
        return "\n".join(out) + "\n"
    return _kv_table(_flatten(report)) + "\n"


def _flatten(d, prefix=""):
    out = []
    for k, v in d.items():
        if isinstance(v, dict):
            out.extend(_flatten(v, f"{prefix}{k}."))
        else:
            out.append((f"{prefix}{k}", v))
    return out


def render_csv(report) -> str:
    buf = io.StringIO()
    if "targets" in report:
        rows = []
        for block in report["targets"]:
            flat = {k: v for k, v in _flatten(block) if not isinstance(v, list)}
            rows.append(flat)
    elif "rows" in report:
        rows = report["rows"]
    else:
        rows = [dict(_flatten(report))]
    fields = []
    for r in rows:
        fields.extend(k for k in r if k not in fields)
    writer = csv.DictWriter(buf, fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("NA" if r.get(k) is None else
                             (repr(r[k]) if isinstance(r.get(k), float) else r.get(k)))
                         for k in fields})
    return buf.getvalue()


def emit(report, fmt="json") -> str:
    if fmt == "json":
        return json.dumps(report, indent=2, allow_nan=False) + "\n"
    if fmt == "csv":
        return render_csv(report)
    return render_table(report)


def write_atomic(path, text):
    """Write via a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".amipkit-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- commands


def cmd_analyze(args):
    problem, idx, n_dropped = load_problem(args)
    kinds = [QOI_KINDS[k] for k in (args.qoi or ["sign", "sig", "both"])]
    return analysis_report(problem, idx, kinds=kinds, alpha=args.alpha, delta=args.delta,
                           rerun=args.rerun, certify=args.certify,
                           se_options=_se_options(args), top_k=args.top_k,
                           n_dropped_rows=n_dropped)


def cmd_rerun_check(args):
    problem, idx, _ = load_problem(args)
    kind = QOI_KINDS[(args.qoi or ["param"])[0]]
    return rerun_check(problem, idx, kind, args.alpha_grid, _se_options(args), args.tolerance)


def cmd_certify(args):
    problem, idx, _ = load_problem(args)
    kind = QOI_KINDS[(args.qoi or ["param"])[0]]
    opts = _se_options(args)
    fit = fit_problem(problem)
    q = make_qoi(kind, fit, problem, idx, opts)
    am = amis(influence_scores(fit, problem, q), args.alpha)
    cert = _certificate_block(problem, fit, q, am, args.rerun)
    out = {"schema_version": SCHEMA_VERSION, "qoi": kind, "target": problem.names[idx],
           "alpha": args.alpha, "dropped_rows": _rows(problem, am.dropped_indices),
           "certificate": cert}
    if args.strict and not cert["valid"]:
        raise _Refusal(out)
    return out


def cmd_simulate(args):
    cfg = simlab.SimConfig(args.n, args.sigma_x, args.sigma_eps, args.beta, args.seed,
                           args.alpha)
    res = simlab.run_single_sim(cfg, args.alpha_grid)
    if args.out == "csv":
        return {"rows": res.removal_path}
    return {"schema_version": SCHEMA_VERSION, **res.as_dict()}


def cmd_grid(args):
    g = simlab.run_grid(args.sigma_x_grid, args.sigma_eps_grid, n=args.n, seed=args.seed,
                        replicates=args.replicates)
    return {"schema_version": SCHEMA_VERSION, "n": g.n, "seed": g.seed,
            "spearman_sign": g.spearman(), "rows": g.to_records()}


def cmd_gamma_table(args):
    rows = simlab.gamma_table(args.distributions, n=args.n, alpha=args.alpha, seed=args.seed)
    return {"schema_version": SCHEMA_VERSION, "alpha": args.alpha, "n": args.n,
            "seed": args.seed,
            "standardization": "draws standardized to sample mean 0 and variance 1",
            "rows": rows}


class _Refusal(Exception):
    def __init__(self, report):
        super().__init__("certificate refused")
        self.report = report


# ---------------------------------------------------------------- parser


def _floats_arg(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _names_arg(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_output(p):
    p.add_argument("--out", choices=["json", "csv", "table"], default="json")
    p.add_argument("--output", help="write here (atomically) instead of stdout")
    p.add_argument("--config", help="JSON file whose keys mirror the long flags")
    p.add_argument("--error-json", action="store_true",
                   help="report failures as JSON on stderr")


def _add_data(p):
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--outcome")
    p.add_argument("--target", help="regressor whose coefficient is examined")
    p.add_argument("--controls", type=_names_arg, help="comma-separated control columns")
    p.add_argument("--instruments", type=_names_arg,
                   help="comma-separated instruments for the target (just-identified IV)")
    p.add_argument("--categorical", type=_names_arg,
                   help="columns to expand into indicators")
    p.add_argument("--intercept", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--weights-col")
    p.add_argument("--cluster-col")
    p.add_argument("--missing", choices=["error", "drop"], default="error")
    p.add_argument("--se", choices=["native", "lm-compat"], default="native")
    p.add_argument("--qoi", action="append", choices=list(QOI_KINDS))
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--delta", type=float, help="target change for --qoi param")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="amipkit", description="Sensitivity of estimates to dropping a few observations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="influence, AMIS/AMIP/APIP for sign/significance targets")
    _add_data(p)
    p.add_argument("--rerun", action="store_true", help="refit without the implicated rows")
    p.add_argument("--certify", action="store_true", help="attach error certificates")
    p.add_argument("--top-k", type=int, default=10)
    _add_output(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("rerun-check", help="predicted vs refit change over an alpha grid")
    _add_data(p)
    p.add_argument("--alpha-grid", type=_floats_arg, default=[0.0, 0.01, 0.05, 0.1])
    p.add_argument("--tolerance", type=float, default=0.25)
    _add_output(p)
    p.set_defaults(func=cmd_rerun_check)

    p = sub.add_parser("certify", help="finite-sample error certificate at the AMIS")
    _add_data(p)
    p.add_argument("--rerun", action="store_true", help="also measure the actual errors")
    p.add_argument("--strict", action="store_true", help="exit 1 when the certificate is refused")
    _add_output(p)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("simulate", help="Gaussian OLS simulation with an AMIP removal path")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--sigma-x", type=float, default=12.3)
    p.add_argument("--sigma-eps", type=float, default=1.2)
    p.add_argument("--beta", type=float, default=-1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--alpha-grid", type=_floats_arg, default=list(simlab.DEFAULT_ALPHA_GRID))
    _add_output(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("grid", help="APIP heatmap data over sigma_x and sigma_eps")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--sigma-x-grid", type=_floats_arg)
    p.add_argument("--sigma-eps-grid", type=_floats_arg)
    _add_output(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("gamma-table", help="shape factor Gamma_alpha for common distributions")
    p.add_argument("--n", type=int, default=1_000_000)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--distributions", type=lambda s: [x.strip() for x in s.split(",")])
    _add_output(p)
    p.set_defaults(func=cmd_gamma_table)
    return parser


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        bad = sorted(k for k in (key.replace("-", "_") for key in config) if k not in known)
        if bad:
            raise UsageError(f"unknown config keys: {bad}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in config.items()})
        args = parser.parse_args(argv)
    return args


def _fail(args, code, exc):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if getattr(args, "error_json", False):
        print(json.dumps(payload), file=sys.stderr)
    else:
        print(f"amipkit: error: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = None
    try:
        args = _parse(parser, argv)
        report = args.func(args)
    except _Refusal as exc:
        text = emit(exc.report, args.out)
        (write_atomic(args.output, text) if args.output else sys.stdout.write(text))
        return 1
    except (UsageError, FileNotFoundError, json.JSONDecodeError) as exc:
        return _fail(args, 2, exc)
    except (AmipError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        return _fail(args, 1, exc)
    text = emit(report, args.out)
    if args.output:
        write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
