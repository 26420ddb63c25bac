"""Command line front end for the convergence studies.

Configuration is layered: built-in defaults, then an optional config
file (one ``key = value`` per line), then flags.  The run emits a CSV
history (rows are flushed as steps finish, then rewritten once the
error columns are backfilled), an optional set of mesh snapshots, a
JSON manifest with the resolved configuration and phase timings, and a
stdout summary with least-squares slopes.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields

import numpy as np

from .adapt import StudyConfig, run_study
from .estimator import CSV_HEADER, format_record
from .mesh import export_mesh
from .quad import PROFILES

__all__ = ["main", "parse_config", "execute", "write_records"]

# the uniform default stops at coarse N = 4096: the next level's dense
# fine system (N = 65536) does not fit desk-scale memory
DEFAULT_MAX_STEPS = {"uniform": 5, "adaptive": 14}
_CONFIG_TYPES = {
    "mode": str,
    "nu": float,
    "delta": float,
    "tol": float,
    "max_steps": int,
    "n0": int,
    "quad_profile": str,
    "decomposition": str,
    "out": str,
    "dump_mesh": str,
}


@dataclass(frozen=True)
class RunOptions:
    """Artifact plumbing that is not part of the study itself."""

    out: str = "convergence.csv"
    dump_mesh: tuple[int, ...] = ()


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="screen-bem",
        description=(
            "Adaptive boundary element solver for the hypersingular "
            "screen problem with non-conforming subdomain coupling."
        ),
    )
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--mode", choices=("uniform", "adaptive"))
    p.add_argument("--nu", type=float, help="jump penalty weight (> 0)")
    p.add_argument(
        "--delta", type=float, help="marking bulk parameter in (0, 1]"
    )
    p.add_argument("--tol", type=float, help="stop once theta <= tol")
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--n0", type=int, help="initial cells per subdomain edge")
    p.add_argument("--quad-profile", choices=tuple(PROFILES), dest="quad_profile")
    p.add_argument(
        "--decomposition",
        help="four-square, single, two-square, or file=<path>",
    )
    p.add_argument("--out", help="CSV output path")
    p.add_argument(
        "--dump-mesh",
        dest="dump_mesh",
        help="comma separated step indices whose coarse mesh is exported",
    )
    return p


def _read_config_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(
                    f"{path}:{lineno}: expected 'key = value', got {raw!r}"
                )
            key, _, val = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in _CONFIG_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _CONFIG_TYPES[key](val.strip())
    return values


def _parse_dump_mesh(text: str) -> tuple[int, ...]:
    if not text:
        return ()
    try:
        steps = sorted({int(tok) for tok in text.split(",")})
    except ValueError as exc:
        raise ValueError(f"bad --dump-mesh value {text!r}: {exc}") from exc
    if steps and steps[0] < 0:
        raise ValueError("--dump-mesh steps must be >= 0")
    return tuple(steps)


def parse_config(argv) -> tuple[StudyConfig, RunOptions]:
    """Resolve defaults, config file, and flags into a validated config."""
    args = _build_parser().parse_args(argv)
    layered: dict = {}
    if args.config:
        layered.update(_read_config_file(args.config))
    for f in fields(StudyConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            layered[f.name] = flag
    if args.out is not None:
        layered["out"] = args.out
    if args.dump_mesh is not None:
        layered["dump_mesh"] = args.dump_mesh

    mode = layered.get("mode", "uniform")
    if mode not in DEFAULT_MAX_STEPS:
        raise ValueError(f"unknown mode {mode!r}")
    cfg = StudyConfig(
        mode=mode,
        nu=layered.get("nu", 100.0),
        delta=layered.get("delta", 0.5),
        tol=layered.get("tol", 0.0),
        max_steps=layered.get("max_steps", DEFAULT_MAX_STEPS[mode]),
        n0=layered.get("n0", 2),
        quad_profile=layered.get("quad_profile", "accurate"),
        decomposition=layered.get("decomposition", "four-square"),
    )
    cfg.validate()
    opts = RunOptions(
        out=layered.get("out", "convergence.csv"),
        dump_mesh=_parse_dump_mesh(str(layered.get("dump_mesh", ""))),
    )
    return cfg, opts


def _config_echo(cfg: StudyConfig) -> list[str]:
    return [f"# {f.name} = {getattr(cfg, f.name)}" for f in fields(StudyConfig)]


def write_records(path, records, cfg: StudyConfig) -> None:
    """Write the full CSV: config echo, header, one row per record."""
    if not records:
        raise ValueError("empty history: nothing to write")
    lines = _config_echo(cfg)
    lines.append(CSV_HEADER)
    lines.extend(format_record(r) for r in records)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _slope(ns, vals) -> float:
    ns = np.asarray(ns, dtype=float)
    vals = np.asarray(vals, dtype=float)
    keep = vals > 0.0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(ns[keep]), np.log(vals[keep]), 1)[0])


def _summary(result) -> str:
    records = result.records
    tail = records[-3:]
    lines = [
        f"steps: {len(records)}  final N: {records[-1].N}  "
        f"final theta: {records[-1].theta:.6g}",
        f"extrapolated energy: {result.extrapolation.value:.12g}  "
        f"rate beta: {result.extrapolation.beta:.4g}  "
        f"converged: {result.extrapolation.converged}",
    ]
    if len(tail) >= 2:
        ns = [r.N for r in tail]
        lines.append(
            "log-log slopes over last 3 records: "
            f"theta {_slope(ns, [r.theta for r in tail]):.4f}, "
            f"total {_slope(ns, [r.total for r in tail]):.4f}"
        )
    if result.stopped_by_tol:
        lines.append("stopped: theta <= tol")
    return "\n".join(lines)


def execute(cfg: StudyConfig, opts: RunOptions) -> int:
    """Run the study and write all artifacts; returns the exit status."""
    partial = open(opts.out, "w")

    def on_record(record):
        if record.step == 0:
            partial.write("\n".join(_config_echo(cfg)) + "\n")
            partial.write(CSV_HEADER + "\n")
        partial.write(format_record(record) + "\n")
        partial.flush()

    try:
        result = run_study(cfg, on_record=on_record)
    finally:
        partial.close()

    write_records(opts.out, result.records, cfg)
    stem = opts.out[:-4] if opts.out.endswith(".csv") else opts.out
    for step in opts.dump_mesh:
        if step < len(result.meshes):
            export_mesh(result.meshes[step], f"{stem}_mesh_{step}.txt")
    manifest = {
        "config": {f.name: getattr(cfg, f.name) for f in fields(StudyConfig)},
        "out": opts.out,
        "dump_mesh": list(opts.dump_mesh),
        "deterministic": True,
        "records": len(result.records),
        "timings": {
            "assembly": sum(d.seconds_assembly for d in result.diagnostics),
            "solve": sum(d.seconds_solve for d in result.diagnostics),
            "estimate": sum(d.seconds_estimate for d in result.diagnostics),
        },
    }
    with open(f"{stem}.manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(_summary(result))
    return 0


def main(argv=None) -> int:
    try:
        cfg, opts = parse_config(sys.argv[1:] if argv is None else argv)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return execute(cfg, opts)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
