"""Command-line interface: ``affine-walk <command> [options]``.

Every output starts with a metadata block (library version, model hash, seed,
replicas, command parameters). Thread count and output location are left out
of it so that runs differing only in those are byte-identical.

Exit codes: 0 ok, 1 hypothesis or estimate failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import clt_distance, conditional_law, tail_curve, tau_moment
from .brownian import BmQuery, bm_small_y_expansion, bm_tail, bm_tail_with_position
from .conditions import check_c2_global, check_c3, check_cs1, check_cs2
from .errors import (
    AffineWalkError,
    DomainError,
    InsufficientSurvivorsError,
    InvalidArgumentError,
    InvalidLawError,
    MomentConditionError,
    UnsupportedLawError,
)
from .harmonic import compare_v_w, estimate_v, monotonicity_scan
from .model import FIXTURES, PairLaw, check_moment_condition, derived_constants, load_law, moments
from .walk import decompose, path_draws, simulate_path

UNVERIFIED = "hypotheses-unverified"


class UsageError(Exception):
    pass


class Failure(Exception):
    """Raised after outputs are written when the run should exit with 1."""


# ---- argument types -----------------------------------------------------------


def sci_int(text: str) -> int:
    """Integer that may be written as 1e6."""
    try:
        return int(text)
    except ValueError:
        pass
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(v) or v != int(v):
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(v)


def pos_int(text: str) -> int:
    v = sci_int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


def real(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"not finite: {text!r}")
    return v


def int_list(text: str) -> list[int]:
    try:
        out = [pos_int(t.strip()) for t in text.split(",") if t.strip()]
    except argparse.ArgumentTypeError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}: {exc}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def real_list(text: str) -> list[float]:
    out = [real(t.strip()) for t in text.split(",") if t.strip()]
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


# ---- output ---------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ""
    if isinstance(v, (dict, list)):
        return json.dumps(_clean(v), sort_keys=True, separators=(",", ":"))
    return str(v)


def render(meta: dict, columns: list[str], rows: list[list], summary: dict, fmt: str) -> str:
    if fmt == "json":
        doc = {
            "meta": meta,
            "summary": summary,
            "rows": [dict(zip(columns, r)) for r in rows],
        }
        return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"
    buf = io.StringIO()
    for k in sorted(meta):
        buf.write(f"# {k}: {_cell(meta[k])}\n")
    for k in sorted(summary):
        buf.write(f"# summary.{k}: {_cell(summary[k])}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def emit(args, text: str) -> None:
    if args.out is None or args.out == "-":
        sys.stdout.write(text)
        return
    try:
        Path(args.out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc}") from None


# ---- model and hypotheses -------------------------------------------------------------


def resolve_model(name: str | None) -> PairLaw:
    if name is None:
        raise UsageError("--model is required (a JSON file or one of: " + ", ".join(sorted(FIXTURES)) + ")")
    if name in FIXTURES:
        return FIXTURES[name]()
    try:
        return load_law(name)
    except OSError as exc:
        raise UsageError(f"cannot read model {name!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"model {name!r} is not valid JSON: {exc}") from None
    except (InvalidLawError, UnsupportedLawError, InvalidArgumentError) as exc:
        raise UsageError(f"invalid model {name!r}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid model {name!r}: {exc}") from None


def hypotheses(law: PairLaw, full: bool = False, seed: int = 0, x: float = 0.0, y: float = 1.0,
               c: float = 1.0, n_max: int = 10_000) -> dict:
    """Condition reports and the verdict: C1 and ((C2 and E(a) >= 0) or C3).

    Without ``full``, Condition 3 counts as certified only through 3',
    which needs no simulation.
    """
    c1 = check_moment_condition(law)
    c2 = check_c2_global(law)
    cs1 = check_cs1(law)
    cs2 = check_cs2(law)
    out = {"C1": c1, "C2": c2, "C2'": cs1, "C3'": cs2}
    if c1.satisfied and (full or cs2.satisfied):
        out["C3"] = check_c3(law, c1.alpha_witness, x=x, y=y, c=c, n_max=n_max, seed=seed)
    c3_ok = "C3" in out and out["C3"].satisfied is True
    mean_a_ok = law.mean_a >= 0
    ok = bool(c1.satisfied) and ((bool(c2.satisfied) and mean_a_ok) or c3_ok)
    return {"reports": out, "E(a)>=0": mean_a_ok, "ok": ok}


def gate(args, law: PairLaw) -> str:
    hyp = hypotheses(law)
    if hyp["ok"]:
        return "verified"
    failed = [k for k, r in hyp["reports"].items() if r.satisfied is not True]
    msg = "hypotheses not satisfied (" + ", ".join(failed) + ")"
    if not args.force:
        raise Failure(msg + "; rerun with --force to proceed anyway")
    print(f"warning: {msg}; outputs are marked {UNVERIFIED}", file=sys.stderr)
    return UNVERIFIED


_NOT_PARAMS = {"threads", "out", "format", "force", "func", "command", "model", "seed", "replicas"}


def make_meta(args, law: PairLaw | None, replicas: int | None, status: str | None) -> dict:
    meta = {
        "library": "affine_walk",
        "version": __version__,
        "command": args.command,
        "seed": args.seed,
        "replicas": replicas,
    }
    if law is not None:
        meta["model"] = args.model if args.model in FIXTURES else Path(args.model).name
        meta["model_sha256"] = law.digest()
    if status is not None:
        meta["hypotheses"] = status
    params = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_PARAMS and v is not None}
    meta["params"] = params
    return meta


def _fmt(args, default: str) -> str:
    return args.format or default


def _reps(args, default: int) -> int:
    return args.replicas if args.replicas is not None else default


# ---- commands ---------------------------------------------------------------------------


def cmd_check(args) -> int:
    law = resolve_model(args.model)
    hyp = hypotheses(law, full=True, seed=args.seed, x=args.x, y=args.y, c=args.c, n_max=args.n_max)
    reports = {k: r.to_dict() for k, r in hyp["reports"].items()}
    summary = {"conditions": reports, "E(a)>=0": hyp["E(a)>=0"], "ok": hyp["ok"],
               "E(a)": law.mean_a}
    try:
        dc = derived_constants(law)
        summary["constants"] = {"rho": dc.rho, "mu": dc.mu, "sigma2": dc.sigma2, "alpha_used": dc.alpha_used}
    except MomentConditionError as exc:
        summary["constants"] = {"error": str(exc)}
    rows = [[k, r["status"], r["method"], r["witness"]] for k, r in reports.items()]
    meta = make_meta(args, law, None, None)
    emit(args, render(meta, ["condition", "status", "method", "witness"], rows, summary, _fmt(args, "json")))
    return 0 if hyp["ok"] else 1


def cmd_constants(args) -> int:
    law = resolve_model(args.model)
    try:
        dc = derived_constants(law, args.alpha)
    except MomentConditionError as exc:
        raise Failure(str(exc)) from None
    m = moments(law, args.s)
    summary = {
        "rho": dc.rho, "mu": dc.mu, "sigma2": dc.sigma2, "sigma": dc.sigma, "alpha_used": dc.alpha_used,
        "moments": {"s": args.s, "E_abs_a_s": m.E_abs_a_s, "E_abs_b_s": m.E_abs_b_s,
                    "E_a": m.E_a, "E_a2": m.E_a2, "E_b2": m.E_b2},
    }
    rows = [[k, summary[k]] for k in ("rho", "mu", "sigma2", "sigma", "alpha_used")]
    emit(args, render(make_meta(args, law, None, None), ["name", "value"], rows, summary, _fmt(args, "json")))
    return 0


def cmd_simulate(args) -> int:
    law = resolve_model(args.model)
    status = gate(args, law)
    reps = _reps(args, 1)
    cols = ["replica", "k", "a", "b", "X", "S", "M"] + (["M0", "Delta"] if args.decompose else [])
    rows = []
    i = 0
    for A, B in path_draws(law, args.n, reps, args.seed, tag="path"):
        for j in range(A.shape[0]):
            p = simulate_path(law, args.x0, args.n, draws=(A[j], B[j]))
            if args.decompose:
                decompose(p)
            for k in range(p.n):
                r = [i, k + 1, p.a[k], p.b[k], p.X[k], p.S[k], p.M[k]]
                if args.decompose:
                    r += [p.M0[k], p.Delta[k]]
                rows.append(r)
            i += 1
    emit(args, render(make_meta(args, law, reps, status), cols, rows, {}, _fmt(args, "csv")))
    return 0


def _est_row(e) -> list:
    lo, hi = e.ci95
    return [e.mean, e.stderr, lo, hi, e.censor_rate, e.replicas, e.trusted]


def cmd_estimate_v(args) -> int:
    law = resolve_model(args.model)
    status = gate(args, law)
    reps = _reps(args, 100_000)
    v = estimate_v(law, args.x, args.y, reps, args.cap, args.seed, mode=args.mode, threads=args.threads)
    summary = {"x": args.x, "y": args.y, "v": v.mean, "stderr": v.stderr, "ci": list(v.ci95),
               "censor_rate": v.censor_rate, "replicas": v.replicas, "seed": args.seed,
               "trusted": v.trusted, "notes": v.notes}
    cols = ["quantity", "mean", "stderr", "ci_lo", "ci_hi", "censor_rate", "replicas", "trusted"]
    rows = [["V"] + _est_row(v)]
    trusted = v.trusted
    if args.with_w:
        cmp = compare_v_w(law, args.x, args.y, reps, args.cap, args.seed, threads=args.threads)
        w, d = cmp["w"], cmp["w_minus_v"]
        rows += [["W"] + _est_row(w), ["W-V"] + _est_row(d)]
        summary.update({"w": w.mean, "w_stderr": w.stderr, "w_minus_v": d.mean,
                        "w_minus_v_stderr": d.stderr, "tau_le_T": cmp["tau_le_T"]})
        trusted = trusted and w.trusted
    emit(args, render(make_meta(args, law, reps, status), cols, rows, summary, _fmt(args, "json")))
    if not trusted:
        raise Failure("estimate untrusted (censor rate at or above threshold)")
    return 0


def cmd_v_scan(args) -> int:
    law = resolve_model(args.model)
    status = gate(args, law)
    reps = _reps(args, 100_000)
    ys = sorted(args.y_grid)
    pts = monotonicity_scan(law, args.x, ys, reps, args.cap, args.seed, threads=args.threads)
    cols = ["x", "y", "v", "stderr", "censor_rate", "trusted", "paired_stderr"]
    rows = [[p.x, p.y, p.v.mean, p.v.stderr, p.v.censor_rate, p.v.trusted, p.paired_stderr] for p in pts]
    emit(args, render(make_meta(args, law, reps, status), cols, rows, {}, _fmt(args, "csv")))
    if not all(p.v.trusted for p in pts):
        raise Failure("some estimates are untrusted")
    return 0


def cmd_tail(args) -> int:
    law = resolve_model(args.model)
    status = gate(args, law)
    reps = _reps(args, 1_000_000)
    tc = tail_curve(law, args.x, args.y, args.n_grid, reps, args.seed, v_replicas=args.v_replicas,
                    v_cap=args.v_cap, threads=args.threads)
    cols = ["n", "p_hat", "stderr", "ratio", "ratio_stderr"]
    rows = []
    for i, (n, e) in enumerate(zip(tc.n_grid, tc.p_hat)):
        r = tc.ratios[i] if tc.ratios else None
        rs = tc.ratio_stderr[i] if tc.ratio_stderr else None
        rows.append([n, e.mean, e.stderr, r, rs])
    summary = {"v": tc.v.mean, "v_stderr": tc.v.stderr, "v_trusted": tc.v.trusted, "sigma": tc.sigma,
               "fitted_exponent": tc.fitted_exponent, "fit_stderr": tc.fit_stderr, "warnings": tc.warnings}
    emit(args, render(make_meta(args, law, reps, status), cols, rows, summary, _fmt(args, "csv")))
    if tc.ratios is None:
        raise Failure("V estimate untrusted; ratios omitted")
    return 0


def cmd_cond_law(args) -> int:
    law = resolve_model(args.model)
    status = gate(args, law)
    reps = _reps(args, 1_000_000)
    try:
        rep = conditional_law(law, args.x, args.y, args.n, reps, t_grid=args.t_grid, seed=args.seed,
                              threads=args.threads)
    except InsufficientSurvivorsError as exc:
        summary = {"survivors": 0, "error": str(exc)}
        emit(args, render(make_meta(args, law, reps, status), ["t", "empirical", "rayleigh"], [], summary,
                          _fmt(args, "json")))
        raise Failure(str(exc)) from None
    rows = [list(r) for r in zip(rep.t_grid, rep.empirical_cdf, rep.rayleigh)]
    summary = {"n": rep.n, "survivors": rep.survivors, "ks_stat": rep.ks_stat,
               "ks_pvalue_approx": rep.ks_pvalue_approx, "warnings": rep.warnings}
    emit(args, render(make_meta(args, law, reps, status), ["t", "empirical", "rayleigh"], rows, summary,
                      _fmt(args, "json")))
    return 0


def cmd_moments(args) -> int:
    law = resolve_model(args.model)
    status = gate(args, law)
    reps = _reps(args, 100_000)
    cols = ["gamma", "cap", "mean", "stderr", "censor_rate", "lower_bound"]
    rows = []
    for g in args.gamma:
        for cap in sorted(args.caps):
            e = tau_moment(law, args.x, args.y, g, reps, cap, args.seed, threads=args.threads)
            rows.append([g, cap, e.mean, e.stderr, e.censor_rate, e.lower_bound])
    emit(args, render(make_meta(args, law, reps, status), cols, rows, {}, _fmt(args, "csv")))
    return 0


def cmd_brownian(args) -> int:
    q = BmQuery(args.y, args.n, args.sigma, tuple(args.window) if args.window else None)
    summary = {"y": q.y, "n": q.n, "sigma": q.sigma, "theta": q.theta, "tail": bm_tail(q)}
    summary.update({f"small_y_{k}": v for k, v in bm_small_y_expansion(q).items() if k != "theta"})
    if q.window is not None:
        summary["window"] = list(q.window)
        summary["tail_with_position"] = bm_tail_with_position(q)
    rows = [[k, summary[k]] for k in sorted(summary) if k != "window"]
    emit(args, render(make_meta(args, None, None, None), ["name", "value"], rows, summary, _fmt(args, "json")))
    return 0


def cmd_clt(args) -> int:
    law = resolve_model(args.model)
    status = gate(args, law)
    reps = _reps(args, 100_000)
    rows = [[n, clt_distance(law, args.x, n, reps, args.seed, threads=args.threads)] for n in sorted(args.n_grid)]
    emit(args, render(make_meta(args, law, reps, status), ["n", "distance"], rows, {}, _fmt(args, "csv")))
    return 0


def cmd_sweep(args) -> int:
    law = resolve_model(args.model)
    status = gate(args, law)
    reps = _reps(args, 100_000)
    cols = ["x", "y", "v", "v_stderr", "v_trusted", "n", "p_hat", "p_stderr", "ratio", "ratio_stderr"]
    rows = []
    bad = False
    for y in args.y_grid:
        v = estimate_v(law, args.x, y, args.v_replicas, args.v_cap, args.seed, threads=args.threads)
        tc = tail_curve(law, args.x, y, [args.n], reps, args.seed, v=v, threads=args.threads)
        p = tc.p_hat[0]
        r, rs = (tc.ratios[0], tc.ratio_stderr[0]) if tc.ratios else (None, None)
        bad |= not v.trusted
        rows.append([args.x, y, v.mean, v.stderr, v.trusted, args.n, p.mean, p.stderr, r, rs])
    emit(args, render(make_meta(args, law, reps, status), cols, rows, {}, _fmt(args, "csv")))
    if bad:
        raise Failure("some V estimates are untrusted")
    return 0


# ---- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--model", help="model JSON file or fixture name (" + ", ".join(sorted(FIXTURES)) + ")")
    g.add_argument("--seed", type=sci_int, default=0)
    g.add_argument("--threads", type=pos_int, default=1)
    g.add_argument("--replicas", type=pos_int, default=None)
    g.add_argument("--out", default=None, help="output file (default: stdout)")
    g.add_argument("--format", choices=("csv", "json"), default=None)
    g.add_argument("--force", action="store_true", help="run even if the hypotheses are not verified")

    p = argparse.ArgumentParser(prog="affine-walk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"affine_walk {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("check", cmd_check, "check the hypotheses on the law of (a, b)")
    sp.add_argument("--x", type=real, default=0.0, help="start point for the Condition 3 search")
    sp.add_argument("--y", type=real, default=1.0)
    sp.add_argument("--c", type=real, default=1.0, help="K-set constant for Condition 3")
    sp.add_argument("--n-max", type=pos_int, default=10_000)

    sp = add("constants", cmd_constants, "rho, mu, sigma^2 and exact moments")
    sp.add_argument("--alpha", type=real, default=None)
    sp.add_argument("--s", type=real, default=2.0, help="order of the absolute moments")

    sp = add("simulate", cmd_simulate, "dump paths (k, X, S, M)")
    sp.add_argument("--x0", type=real, default=0.0)
    sp.add_argument("--n", type=pos_int, required=True)
    sp.add_argument("--decompose", action="store_true", help="add M0 and Delta columns")

    sp = add("estimate-v", cmd_estimate_v, "estimate V(x, y)")
    sp.add_argument("--x", type=real, default=0.0)
    sp.add_argument("--y", type=real, required=True)
    sp.add_argument("--cap", type=pos_int, default=1_000_000)
    sp.add_argument("--mode", choices=("exclude", "biased"), default="exclude")
    sp.add_argument("--with-w", action="store_true", help="also estimate W and the paired W - V")

    sp = add("v-scan", cmd_v_scan, "V(x, .) over a y grid on shared streams")
    sp.add_argument("--x", type=real, default=0.0)
    sp.add_argument("--y-grid", type=real_list, required=True)
    sp.add_argument("--cap", type=pos_int, default=1_000_000)

    sp = add("tail", cmd_tail, "survival tail P(tau_y > n) and the asymptotic ratio")
    sp.add_argument("--x", type=real, default=0.0)
    sp.add_argument("--y", type=real, required=True)
    sp.add_argument("--n-grid", type=int_list, required=True)
    sp.add_argument("--v-replicas", type=pos_int, default=1_000_000)
    sp.add_argument("--v-cap", type=pos_int, default=1_000_000)

    sp = add("cond-law", cmd_cond_law, "law of (y + S_n)/(sigma sqrt n) given survival vs Rayleigh")
    sp.add_argument("--x", type=real, default=0.0)
    sp.add_argument("--y", type=real, default=1.0)
    sp.add_argument("--n", type=pos_int, required=True)
    sp.add_argument("--t-grid", type=real_list, default=None)

    sp = add("moments", cmd_moments, "capped moments E[min(tau, cap)^gamma]")
    sp.add_argument("--x", type=real, default=0.0)
    sp.add_argument("--y", type=real, default=1.0)
    sp.add_argument("--gamma", type=real_list, default=[0.25, 0.5])
    sp.add_argument("--caps", type=int_list, default=[1000, 10_000, 100_000])

    sp = add("brownian", cmd_brownian, "closed-form Brownian exit probabilities")
    sp.add_argument("--y", type=real, required=True)
    sp.add_argument("--n", type=real, required=True)
    sp.add_argument("--sigma", type=real, default=1.0)
    sp.add_argument("--window", type=real, nargs=2, metavar=("LO", "HI"), default=None)

    sp = add("clt", cmd_clt, "Kolmogorov distance of S_n / sqrt n to N(0, sigma^2)")
    sp.add_argument("--x", type=real, default=0.0)
    sp.add_argument("--n-grid", type=int_list, required=True)

    sp = add("sweep", cmd_sweep, "V and the tail ratio at one n over a y grid")
    sp.add_argument("--x", type=real, default=0.0)
    sp.add_argument("--y-grid", type=real_list, required=True)
    sp.add_argument("--n", type=pos_int, default=10_000)
    sp.add_argument("--v-replicas", type=pos_int, default=100_000)
    sp.add_argument("--v-cap", type=pos_int, default=1_000_000)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        code = _dispatch(args)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return code


def _dispatch(args) -> int:
    try:
        return args.func(args)
    except Failure as exc:
        print(f"affine-walk: {exc}", file=sys.stderr)
        return 1
    except UsageError as exc:
        print(f"affine-walk: {exc}", file=sys.stderr)
        return 2
    except (DomainError, InvalidArgumentError) as exc:
        print(f"affine-walk: {exc}", file=sys.stderr)
        return 2
    except InsufficientSurvivorsError as exc:
        print(f"affine-walk: {exc}", file=sys.stderr)
        return 1
    except AffineWalkError as exc:
        print(f"affine-walk: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
