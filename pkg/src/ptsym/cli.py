"""Command-line front end: geometry tables, orbits, period and spectrum scans.

Exit codes: 0 success (empty scientific results included), 1 usage or
input error, 2 numerical failure, 3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time

import numpy as np

from . import __version__
from . import classical, geometry, quantum
from .numerics import IntegrationError, StepControl

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3
# lower edge of the complex search box; keeps real roots off its boundary
COMPLEX_FLOOR = 0.01

PERIOD_COLUMNS = ["epsilon", "closed", "period", "pt_symmetric", "reached_conjugate",
                  "energy_drift", "wall_time", "status", "analytic_period"]
SPECTRUM_COLUMNS = ["epsilon", "k_pair", "branch_label", "re_E", "im_E", "is_real", "residual"]
SCAN_COLUMNS = SPECTRUM_COLUMNS + ["status", "real_count"]
ORBIT_COLUMNS = ["t", "re_x", "im_x", "re_p", "im_p", "phase"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ parsing

def parse_grid(text: str) -> list[float]:
    """``start:stop:step``, both ends included within half a step; or a comma list."""
    if ":" not in text:
        vals = [float(v) for v in text.split(",") if v.strip()]
        if not vals:
            raise UsageError("empty grid")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise UsageError("grid values must be strictly increasing")
        return vals
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"grid must be start:stop:step, got {text!r}")
    start, stop, step = (float(p) for p in parts)
    if not step > 0:
        raise UsageError("grid step must be positive")
    if stop < start:
        raise UsageError("grid stop must not precede start")
    n = int(math.floor((stop - start) / step + 0.5))
    # values are start + k*step rounded to 12 digits so 0.1-style steps print cleanly
    return [round(start + k * step, 12) for k in range(n + 1)]


def parse_k_range(text: str) -> list[int]:
    """``a..b`` inclusive, a comma list, or one integer."""
    try:
        if ".." in text:
            a, b = text.split("..")
            lo, hi = int(a), int(b)
            if hi < lo:
                raise UsageError(f"empty K range {text!r}")
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"bad K specification {text!r}") from None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def render(rows: list[dict], columns: list[str], fmt: str, config: dict,
           wall_time: float | None, footer: list[str] | None = None, extra: dict | None = None) -> str:
    if fmt == "json":
        env = {"version": __version__, "config": config, "wall_time_s": wall_time,
               "rows": [{c: _json_value(r.get(c)) for c in columns} for r in rows]}
        if extra:
            env.update(extra)
        return json.dumps(env, indent=1, sort_keys=False) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    for line in footer or []:
        buf.write(f"# {line}\n")
    return buf.getvalue()


def _emit(text: str, out: str | None):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


# --------------------------------------------------------------- commands

# none of these change the rows; workers is left out so output is byte-identical across pool sizes
_NOT_ECHOED = {"out", "format", "timing", "workers"}


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}


def config_to_argv(config: dict) -> list[str]:
    """Command line that reproduces the run recorded in an envelope's config."""
    argv = [config["command"]]
    for key, value in config.items():
        if key == "command" or value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        argv += [flag] if value is True else [flag, str(value)]
    return argv


def cmd_wedges(args):
    ks = parse_k_range(args.k)
    rows = []
    for K in ks:
        w = geometry.wedge(K, args.epsilon)
        rows.append({"K": K, "epsilon": args.epsilon, "theta_lower": w.theta_lower,
                     "theta_center": w.theta_center, "theta_upper": w.theta_upper,
                     "opening": w.opening})
    cols = ["K", "epsilon", "theta_lower", "theta_center", "theta_upper", "opening"]
    return rows, cols, {}


def cmd_turning_points(args):
    rows = []
    for K in parse_k_range(args.k):
        tp = geometry.turning_point(K, args.epsilon)
        rows.append({"K": K, "epsilon": args.epsilon, "theta": tp.theta, "re_x": tp.x.real,
                     "im_x": tp.x.imag, "phase": tp.phase})
    return rows, ["K", "epsilon", "theta", "re_x", "im_x", "phase"], {}


def cmd_transitions(args):
    rows = []
    for K_w in parse_k_range(args.k):
        for tr in geometry.wedge_transitions(K_w):
            rows.append({"k_w": K_w, "k_tp": tr.K_tp, "epsilon": tr.epsilon,
                         "exact": str(tr.exact) if tr.exact is not None else "",
                         "edge": tr.edge, "kind": tr.kind})
    return rows, ["k_w", "k_tp", "epsilon", "exact", "edge", "kind"], {}


def _orbit_ctrl(args):
    if args.tol is None:
        return None
    return StepControl(rel_tol=args.tol, abs_tol=args.tol * 1e-2, max_steps=3_000_000)


def cmd_orbit(args):
    ks = parse_k_range(args.k)
    if len(ks) != 1:
        raise UsageError("orbit takes a single --k")
    if args.every < 1:
        raise UsageError("--every must be >= 1")
    try:
        traj, cls = classical.integrate_orbit(ks[0], args.epsilon, _orbit_ctrl(args), args.t_max,
                                              precision=args.precision)
    except classical.OrbitIntegrationError as exc:
        traj, cls = exc.trajectory, exc.classification
        if traj is None:
            raise
    idx = list(range(0, len(traj.t), args.every))
    if idx[-1] != len(traj.t) - 1:
        idx.append(len(traj.t) - 1)
    rows = [{"t": traj.t[i], "re_x": traj.x[i].real, "im_x": traj.x[i].imag,
             "re_p": traj.p[i].real, "im_p": traj.p[i].imag, "phase": traj.phase[i]} for i in idx]
    summary = {
        "closed": cls.closed, "period": cls.period, "pt_symmetric": cls.pt_symmetric,
        "reached_mirror": cls.reached_mirror, "reached_conjugate": cls.reached_conjugate,
        "energy_drift": traj.max_energy_drift, "mirror_distance": cls.mirror_distance,
        "status": cls.status,
        "turn_events": [[e.time, e.x.real, e.x.imag] for e in cls.turn_events],
    }
    footer = [f"{k}={_fmt(v)}" for k, v in summary.items() if k != "turn_events"]
    footer += [f"turn_event t={t!r} x=({re!r},{im!r})" for t, re, im in summary["turn_events"]]
    return rows, ORBIT_COLUMNS, {"footer": footer, "extra": {"summary": summary}}


def cmd_period_scan(args):
    ks = parse_k_range(args.k)
    if len(ks) != 1:
        raise UsageError("period-scan takes a single --k")
    K = ks[0]
    grid = parse_grid(args.grid)
    recs = classical.period_scan(K, grid, _orbit_ctrl(args), args.t_max, workers=args.workers,
                                 precision=args.precision)
    rows = []
    for r in recs:
        c = r.classification
        rows.append({
            "epsilon": r.epsilon,
            "closed": None if c is None else c.closed,
            "period": r.period,
            "pt_symmetric": None if c is None else c.pt_symmetric,
            "reached_conjugate": None if c is None else c.reached_conjugate,
            "energy_drift": r.energy_drift,
            "wall_time": r.wall_time if args.timing else None,
            "analytic_period": classical.analytic_period(r.epsilon) if K == 0 else None,
            "status": r.status,
        })
    return rows, PERIOD_COLUMNS, {}


def _shooting_config(args) -> quantum.ShootingConfig:
    kw = {}
    if args.tol is not None:
        kw["ode_ctrl"] = StepControl(rel_tol=args.tol, abs_tol=args.tol * 1e-3)
    if args.e_step is not None:
        kw["e_grid_step"] = args.e_step
    return quantum.ShootingConfig(**kw)


def _spectral_row(p: quantum.SpectralPoint) -> dict:
    return {"epsilon": p.epsilon, "k_pair": p.K_pair, "branch_label": p.branch_label,
            "re_E": p.E.real, "im_E": p.E.imag, "is_real": p.is_real, "residual": p.residual,
            "status": p.status}


def _window(args):
    if not args.emax > args.emin:
        raise UsageError("need --emin < --emax")
    return (args.emin, args.emax)


def cmd_spectrum(args):
    cfg = _shooting_config(args)
    window = _window(args)
    if args.im_max is not None and not args.im_max > COMPLEX_FLOOR:
        raise UsageError(f"--im-max must exceed {COMPLEX_FLOOR}")
    pts = quantum.find_real_eigenvalues(args.epsilon, args.k_pair, window, cfg)
    if args.im_max is not None:
        upper = quantum.find_complex_in_box(args.epsilon, args.k_pair, window,
                                            (COMPLEX_FLOOR, args.im_max), cfg)
        pts = pts + [q for u in upper for q in (u, _conjugate(u))]
    pts.sort(key=lambda p: (p.E.real, p.E.imag))
    rows = []
    for i, p in enumerate(pts):
        row = _spectral_row(p)
        row["branch_label"] = i
        rows.append(row)
    return rows, SPECTRUM_COLUMNS, {}


def _conjugate(p: quantum.SpectralPoint) -> quantum.SpectralPoint:
    from dataclasses import replace

    return replace(p, E=p.E.conjugate())


def _scan_rows(points) -> list[dict]:
    counts = {}
    for p in points:
        counts.setdefault(p.epsilon, 0)
        if p.status == "ok" and p.is_real:
            counts[p.epsilon] += 1
    rows = []
    for p in points:
        row = _spectral_row(p)
        row["real_count"] = counts[p.epsilon]
        rows.append(row)
    return rows


def _float_or_nan(v) -> float:
    # JSON has no NaN; the envelope writes null instead
    return math.nan if v is None else float(v)


_RESUME_KEYS = ("k_pair", "emin", "emax", "tol", "e_step")


def _load_resume(path: str, args) -> list[quantum.SpectralPoint]:
    try:
        with open(path, encoding="utf-8") as fh:
            env = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read resume file {path!r}: {exc}") from None
    if not isinstance(env, dict) or not {"version", "config", "rows"} <= env.keys():
        raise UsageError(f"resume file {path!r} is not a result envelope "
                         "(need version, config, rows)")
    cfg = env["config"]
    if cfg.get("command") != "spectrum-scan":
        raise UsageError(f"resume file {path!r} holds a {cfg.get('command')!r} run, not spectrum-scan")
    for key in _RESUME_KEYS:
        if cfg.get(key) != getattr(args, key):
            raise UsageError(f"resume file {path!r} has {key}={cfg.get(key)!r}, "
                             f"but this run asks for {getattr(args, key)!r}")
    rows = env["rows"]
    if not isinstance(rows, list) or not rows:
        raise UsageError(f"resume file {path!r} has no rows")
    points = []
    for n, r in enumerate(rows):
        try:
            E = complex(_float_or_nan(r["re_E"]), _float_or_nan(r["im_E"]))
            points.append(quantum.SpectralPoint(
                float(r["epsilon"]), int(r["k_pair"]), E,
                _float_or_nan(r["residual"]),
                int(r["branch_label"]), bool(r["is_real"]), str(r["status"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"resume file {path!r}: row {n} is malformed ({exc})") from None
    return points


def cmd_spectrum_scan(args):
    cfg = _shooting_config(args)
    window = _window(args)
    grid = parse_grid(args.grid)
    if args.resume:
        old = _load_resume(args.resume, args)
        last = max(p.epsilon for p in old)
        seed = [p for p in old if p.epsilon == last and p.status == "ok"]
        rest = [e for e in grid if e > last + 1e-12]
        points = list(old)
        if rest:
            new = quantum.spectrum_scan(args.k_pair, [last] + rest, window, cfg,
                                        workers=args.workers, seed=seed)
            points += [p for p in new if p.epsilon != last]
    else:
        points = quantum.spectrum_scan(args.k_pair, grid, window, cfg, workers=args.workers)
    return _scan_rows(points), SCAN_COLUMNS, {}


def cmd_verify(args):
    from . import acceptance

    only = None
    if args.only:
        try:
            only = [int(v) for v in args.only.split(",")]
        except ValueError:
            raise UsageError(f"bad --only list {args.only!r}") from None
    results = acceptance.run(only=only, report=print)
    rows = [{"criterion": r.number, "name": r.name, "status": r.status, "seconds": r.seconds,
             "detail": r.detail} for r in results]
    failed = any(r.status == "fail" for r in results)
    return rows, ["criterion", "name", "status", "seconds", "detail"], {"exit": EXIT_VERIFY if failed else EXIT_OK,
                                                                       "quiet": args.out is None}


COMMANDS = {
    "wedges": cmd_wedges,
    "turning-points": cmd_turning_points,
    "transitions": cmd_transitions,
    "orbit": cmd_orbit,
    "period-scan": cmd_period_scan,
    "spectrum": cmd_spectrum,
    "spectrum-scan": cmd_spectrum_scan,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ptsym", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ptsym {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, fmt=True):
        if fmt:
            sp.add_argument("--out", help="output file (default stdout)")
            sp.add_argument("--format", choices=("csv", "json"), default="csv")
            sp.add_argument("--timing", action="store_true",
                            help="record wall-clock times (output is then not reproducible byte for byte)")

    sp = sub.add_parser("wedges", help="Stokes wedge angles")
    sp.add_argument("--k", default="0", help="K, a..b or a,b,c")
    sp.add_argument("--epsilon", type=float, required=True)
    common(sp)

    sp = sub.add_parser("turning-points", help="turning points of H = 1")
    sp.add_argument("--k", default="0")
    sp.add_argument("--epsilon", type=float, required=True)
    common(sp)

    sp = sub.add_parser("transitions", help="eps values where turning points cross wedge edges")
    sp.add_argument("--k", default="1", help="wedge index K_w (a..b allowed)")
    common(sp)

    for name, helptext in (("orbit", "one classical orbit"), ("period-scan", "orbit periods over an eps grid")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--k", default="0")
        if name == "orbit":
            sp.add_argument("--epsilon", type=float, required=True)
            sp.add_argument("--every", type=int, default=1, help="write every n-th sample")
        else:
            sp.add_argument("--grid", required=True, help="start:stop:step or a comma list")
            sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--t-max", type=float, default=1e4)
        sp.add_argument("--tol", type=float, help="integrator relative tolerance")
        sp.add_argument("--precision", choices=sorted(classical.DEFAULT_CTRLS), default="double-double")
        common(sp)

    for name, helptext in (("spectrum", "eigenvalues at one eps"), ("spectrum-scan", "eigenvalue branches over eps")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--k-pair", type=int, default=0)
        sp.add_argument("--emin", type=float, default=0.0)
        sp.add_argument("--emax", type=float, default=30.0)
        sp.add_argument("--tol", type=float, help="ray integration relative tolerance")
        sp.add_argument("--e-step", type=float, help="real-E scan spacing")
        if name == "spectrum":
            sp.add_argument("--epsilon", type=float, required=True)
            sp.add_argument("--im-max", type=float,
                            help="also search complex eigenvalues with |Im E| up to this value")
        else:
            sp.add_argument("--grid", required=True)
            sp.add_argument("--workers", type=int, default=1)
            sp.add_argument("--resume", help="JSON envelope of an earlier spectrum-scan to extend")
        common(sp)

    sp = sub.add_parser("verify", help="run the acceptance suite")
    sp.add_argument("--only", help="comma list of criterion numbers")
    common(sp)
    return p


def _validate(args):
    if getattr(args, "workers", 1) < 1:
        raise UsageError("--workers must be >= 1")
    if getattr(args, "epsilon", 0.0) is not None and getattr(args, "epsilon", 0.0) < 0:
        raise UsageError("--epsilon must be >= 0")
    if getattr(args, "t_max", 1.0) <= 0:
        raise UsageError("--t-max must be positive")
    if getattr(args, "tol", None) is not None and not args.tol > 0:
        raise UsageError("--tol must be positive")
    if getattr(args, "e_step", None) is not None and not args.e_step > 0:
        raise UsageError("--e-step must be positive")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        _validate(args)
        if hasattr(args, "grid"):
            grid = parse_grid(args.grid)
            if any(e < 0 for e in grid):
                raise UsageError("grid values must be >= 0")
        rows, cols, extra = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ptsym {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, quantum.ShootingError, FloatingPointError, ArithmeticError) as exc:
        print(f"ptsym {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"ptsym {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    wall = time.perf_counter() - start if args.timing else None
    config = _config(args)
    if not extra.get("quiet"):
        _emit(render(rows, cols, args.format, config, wall, extra.get("footer"), extra.get("extra")),
              args.out)
    return extra.get("exit", EXIT_OK)


if __name__ == "__main__":
    sys.exit(main())
