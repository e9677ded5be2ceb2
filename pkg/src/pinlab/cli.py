"""Command-line front end.

Flat `key = value` configuration, one subcommand per run, results written
to an output directory next to a manifest that echoes the fully resolved
configuration (defaults materialized, seed resolved) plus a content hash.
Re-parsing a manifest reproduces the exact RunConfig, which is also how
`verify` re-checks a certificate: it reads a build manifest and replays
the build deterministically.

Exit codes: 0 success or certification pass, 1 certification failure
(failed residual check, percolation overflow dominant, numerical blow-up),
2 configuration or precondition error (reported with the offending key).
"""

import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evolution_sim as ev
from .flat_percolation import (
    CONSTRUCTED,
    GrowthFunction,
    build_lambda,
    counting_bound,
    sample_lattice,
    verify_lambda,
)
from .frac_operators import FractionalOrder, PeriodicGrid
from .periodic_cell import (
    build_v_profile,
    check_monotone,
    linf_bound,
    make_cell_params,
    profile_to_csv,
)
from .random_media import BumpProfile, PointMass, Window, sample_obstacles
from .supersolution_builder import (
    bundle_summary,
    bundle_to_csv,
    choose_params,
    compose_and_verify,
    plan_medium,
)

__all__ = ["ConfigError", "RunConfig", "parse_config", "manifest_text",
           "dispatch", "main"]

SUBCOMMANDS = ("percolate", "cell", "build", "verify", "evolve", "scan")


class ConfigError(ValueError):
    """Configuration problem, always tagged with the offending key."""

    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


_REQUIRED = object()


def _as_int(lo=None, hi=None):
    def cast(v):
        try:
            out = int(v)
        except ValueError:
            raise ValueError(f"not an integer: {v!r}")
        if lo is not None and out < lo:
            raise ValueError(f"must be >= {lo}")
        if hi is not None and out >= hi:
            raise ValueError(f"must be < {hi}")
        return out
    return cast


def _as_float(lo=None, hi=None, lo_open=False):
    def cast(v):
        try:
            out = float(v)
        except ValueError:
            raise ValueError(f"not a number: {v!r}")
        if lo is not None and (out <= lo if lo_open else out < lo):
            raise ValueError(f"must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and out >= hi:
            raise ValueError(f"must be < {hi}")
        return out
    return cast


def _as_choice(*options):
    def cast(v):
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return v
    return cast


def _as_str(v):
    return v


# the pinning analysis needs s in [1/2, 1); reject the rest up front
_ORDER = _as_float(0.5, 1.0)

_COMMON = {
    "seed": (_as_int(0, 2**64), 0),
    "output_dir": (_as_str, "."),
    "format": (_as_choice("csv", "jsonl"), "csv"),
    "threads": (_as_int(1), 1),
}

_SUBKEYS = {
    "percolate": {
        "n": (_as_int(1), 1),
        "alpha": (_as_float(0.0, 1.0, lo_open=True), 0.5),
        "p": (_as_float(0.0, 1.0 + 1e-15), 0.97),
        "width": (_as_int(1), 200),
        "height": (_as_int(2), 64),
        "trials": (_as_int(1), 1),
    },
    "cell": {
        "s": (_ORDER, 0.75),
        "a": (_as_float(0.0, lo_open=True), 12.0),
        "b": (_as_float(0.0, lo_open=True), 0.09),
        "delta": (_as_float(0.0, lo_open=True), 0.02),
        "F2": (_as_float(0.0, lo_open=True), 0.5),
        "n_modes": (_as_int(8), 4095),
        "n_points": (_as_int(16), 512),
    },
    "build": {
        "s": (_ORDER, 0.75),
        "r0": (_as_float(0.0, lo_open=True), 1.0),
        "r1": (_as_float(0.0, lo_open=True), 1.5),
        "q": (_as_float(0.0, lo_open=True), 1.0),
        "F2": (_as_float(0.0, lo_open=True), 0.5),
        "V": (_as_float(0.0, lo_open=True), 3e-4),
        "n_boxes": (_as_int(2), 6),
        "height": (_as_int(2), 24),
        "intensity": (_as_float(0.0), 0.0),
        "points_per_period": (_as_int(0), 0),
    },
    "verify": {
        "manifest": (_as_str, _REQUIRED),
    },
    "evolve": {
        "s": (_ORDER, 0.75),
        "r0": (_as_float(0.0, lo_open=True), 1.0),
        "r1": (_as_float(0.0, lo_open=True), 1.5),
        "q": (_as_float(0.0, lo_open=True), 1.0),
        "intensity": (_as_float(0.0), 0.05),
        "width": (_as_float(0.0, lo_open=True), 100.0),
        "y_hi": (_as_float(0.0, lo_open=True), 30.0),
        "n_grid": (_as_int(8), 1024),
        "F": (_as_float(0.0), 0.1),
        "dt": (_as_float(0.0), 0.0),
        "t_max": (_as_float(0.0, lo_open=True), 1e4),
        "pin_tol": (_as_float(0.0), 0.0),
        "escape_height": (_as_float(0.0), 0.0),
        "snapshot_every": (_as_int(0), 50),
    },
    "scan": {
        "s": (_ORDER, 0.75),
        "r0": (_as_float(0.0, lo_open=True), 1.0),
        "r1": (_as_float(0.0, lo_open=True), 1.5),
        "q": (_as_float(0.0, lo_open=True), 1.0),
        "intensity": (_as_float(0.0), 0.05),
        "width": (_as_float(0.0, lo_open=True), 100.0),
        "y_hi": (_as_float(0.0, lo_open=True), 30.0),
        "n_grid": (_as_int(8), 1024),
        "dt": (_as_float(0.0), 0.0),
        "t_max": (_as_float(0.0, lo_open=True), 1e4),
        "pin_tol": (_as_float(0.0), 0.0),
        "escape_height": (_as_float(0.0), 0.0),
        "F_lo": (_as_float(0.0), _REQUIRED),
        "F_hi": (_as_float(0.0, lo_open=True), _REQUIRED),
        "n_bisect": (_as_int(1), 8),
    },
}


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    params: dict
    seed: int
    output_dir: str
    format: str
    threads: int


def _parse(text, subcommand, use_env):
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not eq or not key:
            raise ConfigError(line[:40], f"line {lineno} is not `key = value`")
        if not value:
            raise ConfigError(key, "empty value")
        if key in seen:
            raise ConfigError(key, "duplicate key")
        seen[key] = value

    seen.pop("config_hash", None)  # manifests carry it; content, not config

    sub_in_file = seen.pop("subcommand", None)
    if sub_in_file is not None and subcommand is not None and sub_in_file != subcommand:
        raise ConfigError("subcommand", f"flag says {subcommand}, config says {sub_in_file}")
    sub = subcommand or sub_in_file
    if sub is None:
        raise ConfigError("subcommand", "missing (give a subcommand flag or key)")
    if sub not in SUBCOMMANDS:
        raise ConfigError("subcommand", f"unknown subcommand {sub!r}")

    table = dict(_COMMON)
    table.update(_SUBKEYS[sub])
    resolved = {}
    for key, value in seen.items():
        if key not in table:
            raise ConfigError(key, "unknown key")
        cast, _ = table[key]
        try:
            resolved[key] = cast(value)
        except ValueError as exc:
            raise ConfigError(key, str(exc))
    for key, (cast, default) in table.items():
        if key in resolved:
            continue
        if default is _REQUIRED:
            raise ConfigError(key, "missing required key")
        resolved[key] = default

    if use_env and "PINLAB_SEED" in os.environ:
        try:
            resolved["seed"] = _COMMON["seed"][0](os.environ["PINLAB_SEED"])
        except ValueError as exc:
            raise ConfigError("seed", f"PINLAB_SEED: {exc}")

    params = {k: v for k, v in resolved.items() if k in _SUBKEYS[sub]}
    return RunConfig(
        subcommand=sub,
        params=params,
        seed=resolved["seed"],
        output_dir=resolved["output_dir"],
        format=resolved["format"],
        threads=resolved["threads"],
    )


def parse_config(text, subcommand=None):
    """Typed RunConfig from flat `key = value` text (# comments allowed).

    The key set depends on the subcommand, given either as the
    ``subcommand`` key or the argument here; unknown keys, duplicates, type
    mismatches and out-of-range values all raise ConfigError naming the
    key.  The PINLAB_SEED environment variable, when set, overrides the
    seed.  Every omitted key takes its documented default, so an empty file
    plus a subcommand is a valid configuration.
    """
    return _parse(text, subcommand, use_env=True)


def _fmt_value(v):
    return repr(v) if isinstance(v, float) else str(v)


def _config_lines(cfg):
    lines = [
        f"subcommand = {cfg.subcommand}",
        f"seed = {cfg.seed}",
        f"output_dir = {cfg.output_dir}",
        f"format = {cfg.format}",
        f"threads = {cfg.threads}",
    ]
    lines.extend(f"{k} = {_fmt_value(cfg.params[k])}" for k in sorted(cfg.params))
    return lines


def manifest_text(cfg):
    """Resolved configuration echo; re-parsing it reproduces cfg exactly."""
    lines = _config_lines(cfg)
    digest = hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]
    return "\n".join(["# pinlab manifest v1"] + lines + [f"config_hash = {digest}"]) + "\n"


def _csv_to_jsonl(csv_text):
    lines = csv_text.strip().split("\n")
    cols = lines[0].split(",")

    def decode(cell):
        for kind in (int, float):
            try:
                return kind(cell)
            except ValueError:
                pass
        return cell

    out = []
    for row in lines[1:]:
        out.append(json.dumps(dict(zip(cols, map(decode, row.split(","))))))
    return "\n".join(out) + "\n"


# --- subcommand runners -----------------------------------------------------

def _run_percolate(cfg):
    p = cfg.params
    H = GrowthFunction(p["alpha"])
    bound = counting_bound(H, p["n"])

    def one(trial):
        lattice = sample_lattice(
            p["n"], p["width"], p["height"], p["p"], cfg.seed + trial
        )
        fld = build_lambda(lattice, H)
        if fld.status == CONSTRUCTED:
            audit = "pass" if verify_lambda(fld).passed else "fail"
        else:
            audit = "skipped"
        return fld.status, int(fld.lam.min()), int(fld.lam.max()), audit

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        rows = list(pool.map(one, range(p["trials"])))

    lines = ["trial,seed,status,lam_min,lam_max,audit"]
    for trial, (status, lo, hi, audit) in enumerate(rows):
        lines.append(f"{trial},{cfg.seed + trial},{status},{lo},{hi},{audit}")
    constructed = sum(1 for r in rows if r[0] == CONSTRUCTED)
    clean = all(r[3] != "fail" for r in rows)
    dominant = CONSTRUCTED if 2 * constructed > p["trials"] else "overflow"
    summary = "\n".join([
        "# pinlab percolate summary v1",
        f"trials = {p['trials']}",
        f"constructed = {constructed}",
        f"overflow = {p['trials'] - constructed}",
        f"dominant = {dominant}",
        f"audits_clean = {clean}",
        f"q_max = {bound.q_max!r}",
        f"p = {p['p']!r}",
        f"alpha = {p['alpha']!r}",
    ]) + "\n"
    code = 0 if (dominant == CONSTRUCTED and clean) else 1
    return code, "\n".join(lines) + "\n", summary


def _run_cell(cfg):
    p = cfg.params
    cellp = make_cell_params(p["a"], p["b"], p["delta"], p["F2"], p["s"])
    profile = build_v_profile(cellp, p["n_modes"])
    report = check_monotone(profile, p["n_points"])
    bound = linf_bound(cellp)
    csv_text = profile_to_csv(profile, p["n_points"])
    summary = "\n".join([
        "# pinlab cell summary v1",
        f"s = {cellp.s.s!r}",
        f"a = {cellp.a!r}",
        f"b = {cellp.b!r}",
        f"delta = {cellp.delta!r}",
        f"F1 = {cellp.F1!r}",
        f"F2 = {cellp.F2!r}",
        f"rho = {cellp.rho!r}",
        f"linf_bound = {bound!r}",
        f"monotone = {report.passed}",
    ]) + "\n"
    return (0 if report.passed else 1), csv_text, summary


def _build_and_check(build_params, seed):
    params = choose_params(
        s=build_params["s"], r0=build_params["r0"], r1=build_params["r1"],
        q=build_params["q"], F2=build_params["F2"], V=build_params["V"],
    )
    extra = {}
    if build_params["intensity"] > 0.0:
        extra["intensity"] = build_params["intensity"]
    fld, _ = plan_medium(
        params, build_params["n_boxes"], seed,
        height=build_params["height"], **extra,
    )
    kw = {}
    if build_params["points_per_period"] > 0:
        kw["points_per_period"] = build_params["points_per_period"]
    bundle = compose_and_verify(params, fld, seed, strict=False, **kw)
    code = 0 if bundle.verification.passed else 1
    return code, bundle_to_csv(bundle), bundle_summary(bundle)


def _run_build(cfg):
    return _build_and_check(cfg.params, cfg.seed)


def _run_verify(cfg):
    path = Path(cfg.params["manifest"])
    if not path.is_file():
        raise ConfigError("manifest", f"no such file: {path}")
    # the manifest's own seed is authoritative: no environment override here
    inner = _parse(path.read_text(), None, use_env=False)
    if inner.subcommand != "build":
        raise ConfigError("manifest", f"expected a build manifest, got {inner.subcommand}")
    return _build_and_check(inner.params, inner.seed)


def _sim_pieces(cfg):
    p = cfg.params
    bump = BumpProfile(p["r0"], p["r1"])
    window = Window(0.0, p["width"], bump.r1, p["y_hi"])
    fld = sample_obstacles(p["intensity"], window, PointMass(p["q"]), bump, cfg.seed)
    grid = PeriodicGrid(p["width"], p["n_grid"])
    order = FractionalOrder(p["s"])
    dt = p["dt"] if p["dt"] > 0.0 else ev.default_dt(grid, order)
    escape = p["escape_height"] if p["escape_height"] > 0.0 else p["y_hi"] + 1.0
    return fld, grid, order, dt, escape


def _run_evolve(cfg):
    p = cfg.params
    fld, grid, order, dt, escape = _sim_pieces(cfg)
    pin_tol = p["pin_tol"] if p["pin_tol"] > 0.0 else max(1e-8 * p["F"], 1e-12)
    sim = ev.EvolutionConfig(grid, order, p["F"], dt, p["t_max"], pin_tol, escape)
    snaps = []
    every = p["snapshot_every"]
    verdict = ev.run(
        sim, None if p["intensity"] == 0.0 else fld,
        on_snapshot=(lambda t, u: snaps.append((t, u))) if every > 0 else None,
        snapshot_every=every,
    )
    if not snaps or snaps[-1][0] != verdict.t_final:
        snaps.append((verdict.t_final, verdict.final_profile))
    return 0, ev.trajectory_to_csv(snaps), ev.verdict_summary(verdict, sim)


def _run_scan(cfg):
    p = cfg.params
    fld, grid, order, dt, escape = _sim_pieces(cfg)
    pin_tol = p["pin_tol"] if p["pin_tol"] > 0.0 else max(1e-8 * p["F_hi"], 1e-12)
    base = ev.EvolutionConfig(grid, order, p["F_lo"], dt, p["t_max"], pin_tol, escape)
    field = None if p["intensity"] == 0.0 else fld
    (lo, hi), records = ev.threshold_scan(field, base, p["F_lo"], p["F_hi"], p["n_bisect"])
    lines = ["F,outcome,t_final,max_velocity"]
    for F, v in records:
        lines.append(f"{F:.17g},{v.outcome},{v.t_final:.17g},{v.max_velocity_at_end:.17g}")
    summary = "\n".join([
        "# pinlab scan summary v1",
        f"F_pinned = {lo!r}",
        f"F_escaped = {hi!r}",
        f"bracket_width = {hi - lo!r}",
        f"probes = {len(records)}",
        f"n_bisect = {p['n_bisect']}",
    ]) + "\n"
    return 0, "\n".join(lines) + "\n", summary


_RUNNERS = {
    "percolate": _run_percolate,
    "cell": _run_cell,
    "build": _run_build,
    "verify": _run_verify,
    "evolve": _run_evolve,
    "scan": _run_scan,
}


def dispatch(cfg):
    """Run one subcommand; write results, summary, and manifest; exit code."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        code, csv_text, summary = _RUNNERS[cfg.subcommand](cfg)
    except ValueError as exc:  # module preconditions and ConfigError alike
        (out / "summary.txt").write_text(
            f"# pinlab {cfg.subcommand} summary v1\nerror = {exc}\n"
        )
        (out / "manifest.txt").write_text(manifest_text(cfg))
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:  # blow-up, percolation overflow during build
        (out / "summary.txt").write_text(
            f"# pinlab {cfg.subcommand} summary v1\nerror = {exc}\n"
        )
        (out / "manifest.txt").write_text(manifest_text(cfg))
        print(f"run failed: {exc}", file=sys.stderr)
        return 1

    version = f"# pinlab {cfg.subcommand} results v1\n"
    if cfg.format == "csv":
        (out / "results.csv").write_text(version + csv_text)
    else:
        head = json.dumps({"format": f"pinlab {cfg.subcommand} results v1"})
        (out / "results.jsonl").write_text(head + "\n" + _csv_to_jsonl(csv_text))
    (out / "summary.txt").write_text(summary)
    (out / "manifest.txt").write_text(manifest_text(cfg))
    return code


def main(argv=None):
    args = sys.argv[1:] if argv is None else list(argv)
    if not args or args[0] in ("-h", "--help"):
        print(
            "usage: pinlab SUBCOMMAND [CONFIG_FILE] [KEY=VALUE ...]\n"
            f"subcommands: {', '.join(SUBCOMMANDS)}",
            file=sys.stderr,
        )
        return 2
    sub, rest = args[0], args[1:]
    text_parts = []
    if rest and "=" not in rest[0]:
        path = Path(rest[0])
        if not path.is_file():
            print(f"config error: config file: no such file: {path}", file=sys.stderr)
            return 2
        text_parts.append(path.read_text())
        rest = rest[1:]
    for arg in rest:
        if "=" not in arg:
            print(f"config error: {arg!r}: overrides must be KEY=VALUE", file=sys.stderr)
            return 2
        text_parts.append(arg)
    try:
        cfg = parse_config("\n".join(text_parts), subcommand=sub)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
