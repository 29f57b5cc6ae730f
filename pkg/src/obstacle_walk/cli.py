"""Command-line harness: ``obstacle-walk <subcommand> ...``.

Exit status is 0 when every asserted invariant held, 1 when one failed and 2
for usage or schema errors. JSON floats are written with ``repr`` (shortest
round-trip form); CSV uses ``%.17g``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .lattice import (FORMAT_VERSION, label_clusters, load_environment, parse_sites,
                      plant_vacant_ball, sample_environment, save_environment, euclidean_ball)


class SchemaError(ValueError):
    """Invalid configuration or flag combination (exit status 2)."""


class InvariantFailure(RuntimeError):
    """An asserted invariant did not hold (exit status 1)."""


# -- parsing helpers -----------------------------------------------------------------

def _site(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in str(text).split(","))
    except ValueError:
        raise SchemaError(f"bad site {text!r}; expected x,y,...") from None


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v != ""]


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v != ""]


def _ball(text: str) -> tuple[tuple[int, ...], float]:
    """``c1,...,cd,r`` -> (centre, radius)."""
    vals = _floats(text)
    if len(vals) < 3:
        raise SchemaError(f"bad ball {text!r}; expected c1,...,cd,r")
    return tuple(int(v) for v in vals[:-1]), vals[-1]


def _box(text: str, d: int) -> list[tuple[int, int]]:
    """``L`` for ``[-L, L]^d`` or ``lo:hi,lo:hi,...``."""
    text = str(text)
    if ":" not in text:
        L = int(text)
        return [(-L, L)] * d
    out = []
    for part in text.split(","):
        lo, hi = part.split(":")
        out.append((int(lo), int(hi)))
    if len(out) != d:
        raise SchemaError("box needs one lo:hi pair per dimension")
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(path: str | None, text: str) -> str | None:
    data = text.encode()
    if path is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return None
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)
    return _sha256(data)


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([("%.17g" % v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _env(args):
    if not args.env:
        raise SchemaError("--env is required")
    return load_environment(args.env)


# -- subcommands -------------------------------------------------------------------

def cmd_gen_env(args) -> dict:
    box = _box(args.box, args.d)
    env = sample_environment(args.d, box, args.p, args.seed)
    for ball_arg in args.plant_ball or []:
        c, r = _ball(ball_arg)
        env = plant_vacant_ball(env, c, r)
    save_environment(env, args.out)
    lab = label_clusters(env)
    digest = _sha256(Path(args.out).read_bytes())
    return {"outputs": {"env": args.out}, "checksums": {args.out: digest}, "provenance": "exact",
            "metrics": {"n_sites": env.n_sites, "n_closed": env.n_closed,
                        "n_clusters": lab.n_clusters}}


def cmd_solve_pam(args) -> dict:
    from .walk import evolve_mass
    env = _env(args)
    absorbing = None
    if args.absorbing_ball:
        c, r = _ball(args.absorbing_ball)
        absorbing = euclidean_ball(c, r)
    snaps = _ints(args.snap) if args.snap else [args.t]
    profiles = evolve_mass(env, _site(args.start), args.t, absorbing=absorbing, times=snaps)
    d = env.d
    rows = []
    for prof in profiles:
        nz = np.nonzero(prof.u)[0]
        for i in nz:
            rows.append([prof.t, *(int(c) for c in prof.domain.sites[i]), float(prof.u[i])])
    header = ["t"] + [f"x{k}" for k in range(d)] + ["u"]
    digest = _write(args.out, _csv_text(header, rows)) if args.out else None
    summary = [{"t": p.t, "total_mass": p.total_mass, "absorbed": p.absorbed} for p in profiles]
    return {"outputs": {"csv": args.out}, "checksums": {args.out: digest} if digest else {},
            "provenance": "exact", "metrics": {"snapshots": summary}}


def cmd_sample(args) -> dict:
    from .walk import sample_paths
    env = _env(args)
    batch = sample_paths(env, _site(args.start), args.n, args.samples, args.seed, workers=args.threads)
    res = {"survival_estimate": batch.survival_estimate, "stderr": batch.stderr,
           "n_samples": batch.n_samples, "escaped": int(batch.escaped.sum())}
    if args.exact:
        from .walk import survival_probability
        exact = survival_probability(env, _site(args.start), args.n)
        z = abs(batch.survival_estimate - exact) / max(batch.stderr, 1e-300)
        res.update(exact=exact, z_score=z)
        if batch.stderr > 0 and z > 5:
            raise InvariantFailure(f"Monte Carlo estimate {z:.2f} sigma from exact")
    digest = _write(args.out, _dumps(res)) if args.out else None
    return {"outputs": {"json": args.out}, "checksums": {args.out: digest} if digest else {},
            "provenance": f"monte_carlo(n={args.samples}, seed={args.seed})", "metrics": res}


def _domain_from_args(env, args):
    from .domain import LatticeDomain
    if args.domain_ball:
        c, r = _ball(args.domain_ball)
        return LatticeDomain.from_env(env, region=env.mask_of(euclidean_ball(c, r)))
    if args.domain_open_cluster:
        site = (0,) * env.d if args.domain_open_cluster == "origin" else _site(args.domain_open_cluster)
        lab = label_clusters(env)
        cid = lab.label(site)
        if cid == 0:
            raise SchemaError(f"site {site} is closed")
        return LatticeDomain(lab.sites(cid))
    return LatticeDomain.from_env(env)


def cmd_eig(args) -> dict:
    from .spectral import principal_pair, verify_pair
    env = _env(args)
    dom = _domain_from_args(env, args)
    pair = principal_pair(dom, tol=args.tol, second=args.second)
    res = {"lambda1": pair.lambda1, "lambda2": pair.lambda2, "gap": pair.gap,
           "l2_norm_sq": pair.l2_norm_sq, "parity_split": list(pair.parity_split),
           "residual": pair.solver_stats["residual"], "solver": pair.solver_stats,
           "n_sites": dom.N, "component": pair.component}
    checks = {}
    if args.phi_csv:
        rows = [[*(int(c) for c in s), float(v)] for s, v in zip(dom.sites, pair.phi1)]
        header = [f"x{k}" for k in range(dom.d)] + ["phi"]
        checks[args.phi_csv] = _write(args.phi_csv, _csv_text(header, rows))
    bad = verify_pair(pair)
    res["violated"] = bad
    digest = _write(args.out, _dumps(res)) if args.out else None
    if digest:
        checks[args.out] = digest
    if bad:
        raise InvariantFailure("eigenpair invariants violated: " + ",".join(bad))
    return {"outputs": {"json": args.out, "phi_csv": args.phi_csv}, "checksums": checks,
            "provenance": "exact", "metrics": res}


def cmd_localize(args) -> dict:
    from .localization import LocalizationConfig, localize
    env = _env(args)
    cfg = LocalizationConfig(c2=args.eps_exp, c5=args.c5, kappa=args.delta_exp, ell=args.ell,
                             epsilon=args.epsilon, delta=args.delta, rho=args.rho)
    p = args.p if args.p is not None else env.p_open
    report = localize(env, args.n, p, cfg)
    text = report.to_json()
    digest = _write(args.out, text) if args.out else None
    if report.bound_chain_ok is False:
        raise InvariantFailure("obstacle-volume bound chain violated")
    return {"outputs": {"json": args.out}, "checksums": {args.out: digest} if digest else {},
            "provenance": "exact", "metrics": json.loads(text)}


def cmd_surgery(args) -> dict:
    from .surgery import box_sites, eig_shift, make_op
    env = _env(args)
    if args.op == "remove-ball":
        c, r = _ball(args.region)
        op = make_op(env, "remove_obstacles_in", euclidean_ball(c, r))
    else:
        vals = _ints(args.region)
        op = make_op(env, "close_box", box_sites(tuple(vals[:-1]), vals[-1]))
    region = None
    if args.domain_ball:
        c, r = _ball(args.domain_ball)
        region = env.mask_of(euclidean_ball(c, r))
    try:
        shift = eig_shift(op, region_mask=region, tol=args.tol)
    except AssertionError as exc:
        raise InvariantFailure(str(exc)) from None
    res = {"kind": op.kind, "region_size": len(op.region), "lambda_before": shift.lambda_before,
           "lambda_after": shift.lambda_after, "delta": shift.delta}
    digest = _write(args.out, _dumps(res)) if args.out else None
    return {"outputs": {"json": args.out}, "checksums": {args.out: digest} if digest else {},
            "provenance": "exact", "metrics": res}


def cmd_potential(args) -> dict:
    from .domain import LatticeDomain
    from .surgery import capacity, escape_probability, greens_function, harnack_ratio
    res = {}
    if args.domain_ball:
        c, r = _ball(args.domain_ball)
        dom = LatticeDomain(euclidean_ball(c, r))
        if args.green:
            u, v = _site(args.green[0]), _site(args.green[1])
            try:
                pd = greens_function(dom, [u], [v])
            except AssertionError as exc:
                raise InvariantFailure(str(exc)) from None
            res["green"] = {"u": u, "v": v, "value": float(pd.green[0, 0]),
                            "symmetry_error": pd.symmetry_error}
    if args.capacity:
        sites = parse_sites(Path(args.capacity).read_text().strip())
        cap = capacity(sites, box_sizes=tuple(_ints(args.boxes)))
        res["capacity"] = {"value": cap.capacity, "boxes": cap.box_sizes, "box_values": cap.box_values,
                           "truncation_error": cap.truncation_error, "provenance": "fitted"}
    if args.escape:
        R = float(args.escape)
        res["escape_probability"] = {"R": R, "value": escape_probability(R, d=args.d)}
    if args.harnack:
        R1, R2 = _floats(args.harnack)
        h = harnack_ratio(R1, R2, d=args.d, max_sources=args.max_sources)
        res["harnack"] = {"R1": R1, "R2": R2, "ratio": h.ratio, "one_minus_ratio": h.one_minus_ratio,
                          "n_sources": h.n_sources}
    if not res:
        raise SchemaError("potential needs --green, --capacity, --escape or --harnack")
    digest = _write(args.out, _dumps(res)) if args.out else None
    return {"outputs": {"json": args.out}, "checksums": {args.out: digest} if digest else {},
            "provenance": "exact", "metrics": res}


def cmd_iso_check(args) -> dict:
    from .surgery import exhaustive_iso_constant, iso_suite
    suites = [s for s in args.suite.split(",") if s]
    known = {"random", "halfspace", "annulus", "exhaustive", "singleton"}
    if set(suites) - known:
        raise SchemaError(f"unknown iso suites {sorted(set(suites) - known)}")
    rows = []
    c0, _ = exhaustive_iso_constant(2, args.d) if args.d == 2 else (None, None)
    if "exhaustive" in suites:
        c, _ = exhaustive_iso_constant(args.R, args.d)
        rows.append(["exhaustive", args.R, c])
    structured = [s for s in suites if s != "exhaustive"]
    if structured:
        for name, ratio in iso_suite(args.R, args.d, tuple(structured), n_random=args.n_random,
                                     seed=args.seed).items():
            rows.append([name, args.R, ratio])
    digest = _write(args.out, _csv_text(["suite", "R", "min_ratio"], rows)) if args.out else None
    if c0 is not None and any(r[2] < 0.5 * c0 for r in rows):
        raise InvariantFailure("isoperimetric ratio below half the small-ball constant")
    return {"outputs": {"csv": args.out}, "checksums": {args.out: digest} if digest else {},
            "provenance": "exact", "metrics": {"rows": rows, "small_ball_constant": c0}}


def cmd_profile(args) -> dict:
    from .continuum import profile, profile_values
    kind = {"phi1": "phi1_L1", "phi2": "phi2_L2", "phi2sq": "phi2_squared"}.get(args.kind, args.kind)
    target = profile(kind, args.d)
    center = _site(args.center) if args.center else (0,) * args.d
    sites = euclidean_ball(center, args.radius)
    vals = profile_values(target, sites, center, args.radius, parity=args.parity)
    rows = [[*(int(c) for c in s), float(v)] for s, v in zip(sites, vals)]
    header = [f"x{k}" for k in range(args.d)] + ["value"]
    digest = _write(args.out, _csv_text(header, rows)) if args.out else None
    return {"outputs": {"csv": args.out}, "checksums": {args.out: digest} if digest else {},
            "provenance": "exact",
            "metrics": {"kind": kind, "normalisation": target.constant,
                        "normalisation_check": target.constant_check}}


def cmd_profile_compare(args) -> dict:
    from .verify import profile_deviation
    radii = _ints(args.R)
    table = []
    for kind in args.kind.split(","):
        for R in radii:
            dev, peak = profile_deviation(R, kind)
            table.append({"kind": kind, "R": R, "sup_deviation": dev, "peak": peak,
                          "relative": dev / peak})
    res = {"table": table, "columns": {"sup_deviation": "dimensionless (rescaled by R^d)"}}
    digest = _write(args.out, _dumps(res)) if args.out else None
    failed = []
    for kind in args.kind.split(","):
        devs = [row["sup_deviation"] for row in table if row["kind"] == kind]
        if any(b > a for a, b in zip(devs, devs[1:])):
            failed.append(f"{kind} deviation not nonincreasing")
    if failed:
        raise InvariantFailure("; ".join(failed))
    return {"outputs": {"json": args.out}, "checksums": {args.out: digest} if digest else {},
            "provenance": "exact", "metrics": res}


def cmd_verify(args) -> dict:
    from .verify import SUITES, run_suite
    if args.suite not in SUITES:
        raise SchemaError(f"unknown suite {args.suite!r}; choose from {SUITES}")
    cases = run_suite(args.suite, n=args.n, seed=args.seed, corrupt=args.inject_corruption)
    res = {"suite": args.suite, "passed": all(c.passed for c in cases),
           "cases": [c.as_dict() for c in cases]}
    digest = _write(args.out, _dumps(res)) if args.out else None
    if not res["passed"]:
        names = [f"{c.name}: {c.detail}" if c.detail else c.name for c in cases if not c.passed]
        raise InvariantFailure("failed cases: " + "; ".join(names))
    return {"outputs": {"json": args.out}, "checksums": {args.out: digest} if digest else {},
            "provenance": "exact", "metrics": {"n_cases": len(cases)}}


def cmd_run(args) -> int:
    """Execute a JSON pipeline and persist a result bundle."""
    try:
        config = json.loads(Path(args.config_file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read config: {exc}") from None
    if not isinstance(config, dict) or not isinstance(config.get("pipeline", []), list):
        raise SchemaError("config must be an object with a 'pipeline' list")
    steps = config.get("pipeline", [])
    bundle = {"config": config, "format_version": FORMAT_VERSION, "code_version": __version__,
              "steps": [], "status": "ok"}
    out = args.out or config.get("bundle")
    code = 0
    for k, step in enumerate(steps):
        if not isinstance(step, dict) or "command" not in step:
            raise SchemaError(f"pipeline step {k} needs a 'command'")
        argv = [step["command"]]
        for key, val in step.get("args", {}).items():
            flag = "--" + key.replace("_", "-")
            if val is True:
                argv.append(flag)
            elif val is False or val is None:
                continue
            elif isinstance(val, list):
                argv.append(flag)
                argv.extend(str(v) for v in val)
            else:
                argv.append(f"{flag}={val}")
        parser = build_parser()
        try:
            sub = parser.parse_args(argv)
        except SystemExit:
            raise SchemaError(f"pipeline step {k}: invalid arguments {argv}") from None
        if sub.command == "run":
            raise SchemaError("nested run is not allowed")
        t0 = time.perf_counter()
        entry = {"command": step["command"], "argv": argv}
        try:
            entry["result"] = HANDLERS[sub.command](sub)
            entry["status"] = "ok"
        except InvariantFailure as exc:
            entry.update(status="failed", error=str(exc))
            bundle["status"] = "failed"
            code = 1
        except (ValueError, KeyError) as exc:
            entry.update(status="failed", error=str(exc))
            bundle["status"] = "failed"
            code = 2
        entry["runtime_s"] = time.perf_counter() - t0
        bundle["steps"].append(entry)
        if code:
            break
    bundle["checksums"] = {path: digest for step in bundle["steps"]
                           for path, digest in step.get("result", {}).get("checksums", {}).items()}
    _write(out, _dumps(bundle))
    return code


HANDLERS = {
    "gen-env": cmd_gen_env, "solve-pam": cmd_solve_pam, "sample": cmd_sample, "eig": cmd_eig,
    "localize": cmd_localize, "surgery": cmd_surgery, "potential": cmd_potential,
    "iso-check": cmd_iso_check, "profile": cmd_profile, "profile-compare": cmd_profile_compare,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="obstacle-walk", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=None,
                    help="worker cap (fallback: OBSTACLE_WALK_THREADS); never changes results")
    ap.add_argument("--config", default=None, help="JSON file whose keys override flags")
    sp = ap.add_subparsers(dest="command", required=True)

    p = sp.add_parser("gen-env", help="sample and save an obstacle environment")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--box", required=True, help="L for [-L,L]^d or lo:hi,lo:hi,...")
    p.add_argument("--p", type=float, required=True, help="probability a site is open")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--plant-ball", action="append", help="c1,...,cd,r (repeatable)")
    p.add_argument("--out", required=True)

    p = sp.add_parser("solve-pam", help="exact killed-walk mass evolution")
    p.add_argument("--env")
    p.add_argument("--start", required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--absorbing-ball")
    p.add_argument("--snap")
    p.add_argument("--out")

    p = sp.add_parser("sample", help="Monte Carlo killed-walk paths")
    p.add_argument("--env")
    p.add_argument("--start", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--exact", action="store_true", help="also compare with the exact solver")
    p.add_argument("--out")

    p = sp.add_parser("eig", help="principal eigenpair of a domain")
    p.add_argument("--env")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--domain-ball")
    g.add_argument("--domain-open-cluster")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--second", action="store_true")
    p.add_argument("--phi-csv")
    p.add_argument("--out")

    p = sp.add_parser("localize", help="coarse-graining and ball fit")
    p.add_argument("--env")
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--eps-exp", type=float, default=0.1)
    p.add_argument("--ell", type=int, default=5)
    p.add_argument("--delta-exp", type=float, default=0.1)
    p.add_argument("--c5", type=float, default=0.5)
    p.add_argument("--rho", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--out")

    p = sp.add_parser("surgery", help="eigenvalue shift under obstacle surgery")
    p.add_argument("--env")
    p.add_argument("--op", choices=["remove-ball", "close-box"], required=True)
    p.add_argument("--region", required=True, help="c1,...,cd,r")
    p.add_argument("--domain-ball")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--out")

    p = sp.add_parser("potential", help="Green's function, capacity, escape, Harnack")
    p.add_argument("--domain-ball")
    p.add_argument("--green", nargs=2, metavar=("U", "V"))
    p.add_argument("--capacity", metavar="SETFILE")
    p.add_argument("--boxes", default="8,16,32")
    p.add_argument("--escape", type=float)
    p.add_argument("--harnack", metavar="R1,R2")
    p.add_argument("--max-sources", type=int)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--out")

    p = sp.add_parser("iso-check", help="isoperimetric ratios on a lattice ball")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--suite", default="random,halfspace,annulus")
    p.add_argument("--n-random", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sp.add_parser("profile", help="discretised continuum profile")
    p.add_argument("--kind", choices=["phi1", "phi2", "phi2sq"], required=True)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--center")
    p.add_argument("--parity", default="even", choices=["even", "odd"])
    p.add_argument("--out")

    p = sp.add_parser("profile-compare", help="clean-ball laws against continuum profiles")
    p.add_argument("--R", default="15,25,40")
    p.add_argument("--kind", default="endpoint,bulk")
    p.add_argument("--out")

    p = sp.add_parser("verify", help="run an invariant suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-corruption", action="store_true")
    p.add_argument("--out")

    p = sp.add_parser("run", help="execute a JSON pipeline into a result bundle")
    p.add_argument("config_file")
    p.add_argument("--out")
    return ap


def _apply_config(args, parser) -> None:
    """Values from ``--config`` override flags."""
    if not args.config or args.command == "run":
        return
    try:
        overrides = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read config: {exc}") from None
    for key, val in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise SchemaError(f"unknown config key {key!r}")
        setattr(args, attr, val)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad flags
    if args.threads is None:
        env_threads = os.environ.get("OBSTACLE_WALK_THREADS")
        args.threads = int(env_threads) if env_threads else 1
    try:
        _apply_config(args, parser)
        if args.command == "run":
            return cmd_run(args)
        result = HANDLERS[args.command](args)
        if not getattr(args, "out", None) or args.command == "gen-env":
            sys.stdout.write(_dumps(result) + "\n")
        return 0
    except (SchemaError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InvariantFailure as exc:
        print(f"invariant failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
