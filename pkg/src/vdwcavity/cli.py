"""Command-line entry point: ``vdwcavity {sweep,steady,spectrum,traj,presets}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import mcwf, spectra
from .model import ConfigError, SystemParams, liouvillian, parse_kv
from .steady import SteadyStateError, observables, solve_steady
from .sweep import PRESETS, SweepSpec, preset, run_sweep

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="vdwcavity", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="key=value or .json config")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--nmax", type=int, help="override cavity truncation")

    p = sub.add_parser("sweep", help="run a parameter sweep")
    common(p)

    p = sub.add_parser("steady", help="steady-state observables at one point")
    common(p)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a parameter (repeatable)")

    p = sub.add_parser("spectrum", help="one- and two-quanta dressed-state energies")
    common(p, config_required=False)
    p.add_argument("--g0", type=float)
    p.add_argument("--u-vdw", type=float)

    p = sub.add_parser("traj", help="quantum-jump trajectories and burst statistics")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--window", type=float, help="burst coincidence window (us)")
    p.add_argument("--ntraj", type=int)
    p.add_argument("--t-max", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("presets", help="write figure preset configs")
    p.add_argument("name", nargs="?", choices=sorted(PRESETS))
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv",
                   help="csv writes key=value .cfg files, json writes .json")
    return ap


def _apply_sets(params: SystemParams, sets) -> SystemParams:
    if not sets:
        return params
    data = params.to_dict()
    data.update(parse_kv("\n".join(sets)))
    return SystemParams.from_dict(data)


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_sweep(args) -> int:
    spec = SweepSpec.load(args.config)
    result = run_sweep(spec, threads=args.threads, n_max=args.nmax)
    out = args.out or spec.output
    if args.format == "json":
        text = result.to_json(timings=False) + "\n"
        _emit(text, out)
    elif out:
        result.write_csv(out)
    else:
        result.write_csv(sys.stdout)
    if out:
        Path(str(out) + ".meta.json").write_text(json.dumps(result.metadata(), indent=2) + "\n")
    n_bad = len(result.failed)
    if n_bad:
        print(f"{n_bad} of {len(result.points)} points failed", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_steady(args) -> int:
    p = _apply_sets(SystemParams.load(args.config), args.set)
    if args.nmax:
        p = p.replace(n_max=args.nmax)
    res = solve_steady(liouvillian(p))
    obs = observables(res.rho, p.space)
    data = {**obs.as_dict(), "residual": res.residual, "iterations": res.iterations}
    if args.format == "json":
        _emit(json.dumps({"params": p.to_dict(), **data}, indent=2) + "\n", args.out)
    else:
        _emit("".join(f"{k} = {v!r}\n" for k, v in data.items()), args.out)
    return EXIT_OK


def _cmd_spectrum(args) -> int:
    if args.config:
        p = SystemParams.load(args.config)
        g0, u = p.g0, p.u_vdw
    else:
        g0, u = args.g0, args.u_vdw
    if g0 is None or u is None:
        raise ConfigError("spectrum needs --config or both --g0 and --u-vdw")
    data = {
        "g0": g0,
        "u_vdw": u,
        "magic_detuning": spectra.magic_detuning(u),
        "antiblockade_detuning": spectra.antiblockade_detuning(u),
        "overlap_vdw": spectra.overlap_vdw(g0),
        "manifolds": [spectra.manifold_spectrum(g0, u, n).to_dict() for n in (1, 2)],
    }
    if args.format == "json":
        _emit(json.dumps(data, indent=2) + "\n", args.out)
    else:
        lines = ["excitation_number,index,eigenvalue_mhz\n"]
        for m in data["manifolds"]:
            for i, v in enumerate(m["eigenvalues"]):
                lines.append(f"{m['excitation_number']},{i},{v!r}\n")
        _emit("".join(lines), args.out)
    return EXIT_OK


def _load_traj(args) -> mcwf.TrajSpec:
    raw = Path(args.config).read_text()
    data = json.loads(raw) if args.config.endswith(".json") else parse_kv(raw)
    if "t_max" in data or "params" in data or any(k.startswith("param.") for k in data):
        spec = mcwf.TrajSpec.load(args.config)
    else:
        if args.t_max is None:
            raise ConfigError("a plain parameter config needs --t-max")
        spec = mcwf.TrajSpec("traj", SystemParams.load(args.config), t_max=args.t_max)
    changes = {}
    for key in ("t_max", "dt", "window", "seed"):
        val = getattr(args, key)
        if val is not None:
            changes[key] = val
    if args.ntraj is not None:
        changes["n_traj"] = args.ntraj
    params = _apply_sets(spec.params, args.set)
    if args.nmax:
        params = params.replace(n_max=args.nmax)
    d = spec.to_dict()
    d.update(changes)
    d["params"] = params.to_dict()
    return mcwf.TrajSpec.from_dict(d)


def _cmd_traj(args) -> int:
    spec = _load_traj(args)
    records = mcwf.run_ensemble(spec.params, spec.n_traj, spec.t_max, spec.resolved_dt,
                                seed=spec.seed, threads=args.threads)
    meta = mcwf.clicks_metadata(records, spec.resolved_window)
    meta["dt"] = spec.resolved_dt
    if args.out:
        mcwf.write_clicks_csv(records, args.out)
        Path(str(args.out) + ".json").write_text(json.dumps(meta, indent=2) + "\n")
        stats = meta["emission_stats"]
        print(json.dumps(stats, indent=2))
    elif args.format == "json":
        sys.stdout.write(json.dumps(meta, indent=2) + "\n")
    else:
        mcwf.write_clicks_csv(records, sys.stdout)
    return EXIT_OK


def _cmd_presets(args) -> int:
    if args.name is None:
        print("\n".join(sorted(PRESETS)))
        return EXIT_OK
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    suffix = ".json" if args.format == "json" else ".cfg"
    obj = preset(args.name)
    items = obj.items() if isinstance(obj, dict) else [(args.name, obj)]
    for name, spec in items:
        path = outdir / f"{name}{suffix}"
        spec.save(path)
        print(path)
    return EXIT_OK


_COMMANDS = {
    "sweep": _cmd_sweep,
    "steady": _cmd_steady,
    "spectrum": _cmd_spectrum,
    "traj": _cmd_traj,
    "presets": _cmd_presets,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_INVALID
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SteadyStateError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
