"""Command-line entry point.

Exit codes: 0 success, 1 configuration error (nothing written), 2 runtime
error (files written so far keep a ``.partial`` suffix).  Parameters come
from flags, a JSON config ``{"schema": 1, "command": ..., "params": {...}}``
and the RWRE_SEED / RWRE_WORKERS variables; flags win, then the
environment, then the config file.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _ints(text) -> list:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    if isinstance(text, (int, np.integer)):
        return [int(text)]
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(p) for p in str(text).split(",") if p.strip()]


def _seeds(v) -> list:
    """``"0..49"``, ``"1,2,3"`` or an integer count ``n`` meaning 0..n-1."""
    if isinstance(v, int):
        return list(range(v))
    if isinstance(v, str) and v.strip().isdigit():
        return list(range(int(v)))
    return _ints(v)


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).lower() in ("1", "true", "yes")


# name -> (parser, default, help)
COMMON = {
    "seed": (int, 0, "master seed"),
    "workers": (int, None, "worker threads"),
}

PARAMS = {
    "env": {"law": (str, "uniform-axis", "site law id"), "d": (int, 2, "dimension"),
            "box": (int, 16, "half-width of the box [-b, b]^d")},
    "solve": {"env": (str, None, "environment file"), "R": (float, 6.0, "cylinder radius"),
              "data": (str, "constant", "constant | exponential | parity | path to a point CSV"),
              "lam": (_floats, [1.0, 0.0], "exponential rate vector")},
    "exit": {"env": (str, None, "environment file"), "R": (float, 8.0, "cylinder radius"),
             "start": (_ints, None, "start space-time point"), "samples": (int, 0, "Monte Carlo samples (0: exact only)"),
             "sectors": (int, 4, "lateral sectors"), "time_bins": (int, 1, "lateral time bins")},
    "sink": {"env": (str, None, "environment file"), "counter": (int, 0, "use the counterexample with this R"),
             "R": (float, 3.0, "event scale"), "xi": (float, 0.1, "event exponent"), "c": (int, 4, "distance constant")},
    "abp": {"law": (str, "uniform-axis", "site law id"), "R": (float, 6.0, "radius"), "k": (int, 2, "step cap"),
            "fields": (int, 10, "number of random fields")},
    "homog": {"law": (str, "uniform-axis", "site law id"), "R": (_ints, [8, 16, 32], "radii"),
              "seeds": (_seeds, 10, "seed list or count"), "kind": (str, "exponential", "continuum field"),
              "lam": (_floats, [1.0, 0.0], "exponential rate vector")},
    "phi": {"law": (str, "uniform-axis", "site law id"), "d": (int, 2, "dimension"), "R": (_ints, [8], "radii"),
            "seeds": (_seeds, 10, "seed list or count"), "n_data": (int, 20, "data per seed"),
            "eps": (float, 0.1, "epsilon in (0, 2 - sqrt 3)"), "xi": (float, 0.1, "xi in (0, 1/5)"),
            "w": (float, 2.0, "growth base > 1"), "parity": (str, "both", "odd | even | both"),
            "bound": (_bool, False, "estimate the PHI constant")},
    "osc": {"law": (str, "uniform-axis", "site law id"), "d": (int, 2, "dimension"), "R": (_ints, [8], "radii"),
            "seeds": (_seeds, 10, "seed list or count"), "n_data": (int, 20, "data per seed"),
            "zeta": (float, 2.0, "outer scale > 1"), "parity": (str, "both", "odd | even | both")},
    "couple": {"law": (str, "uniform-axis", "site law id"), "d": (int, 2, "dimension"), "R": (_ints, [4], "radii"),
               "seeds": (_seeds, 5, "seed list or count"), "zeta": (float, 2.0, "outer scale > 1"),
               "pairs": (int, 20, "pairs per seed")},
    "counter": {"R": (int, 3, "radius (2..4)"), "w": (float, 2.0, "growth base"), "xi": (float, 0.1, "growth exponent")},
    "trans": {"law": (str, "srw", "srw | uniform-axis"), "d": (int, 3, "dimension"),
              "horizons": (_ints, [10 ** 4, 10 ** 5], "visit-count horizons"), "samples": (int, 1000, "walks")},
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rwre-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, spec in PARAMS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="output file (env) or directory (others)")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        for key, (_, _, hlp) in {**COMMON, **spec}.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=hlp)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags, environment variables and config; validate types."""
    spec = {**COMMON, **PARAMS[args.command]}
    cfg = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("schema") != SCHEMA_VERSION:
            raise ConfigError(f"config must be an object with schema {SCHEMA_VERSION}")
        if doc.get("command", args.command) != args.command:
            raise ConfigError(f"config is for {doc.get('command')!r}, not {args.command!r}")
        cfg = doc.get("params", {})
        if not isinstance(cfg, dict):
            raise ConfigError("params must be an object")
        unknown = sorted(set(cfg) - set(spec))
        if unknown:
            raise ConfigError(f"unknown parameter(s): {', '.join(unknown)}")
    envv = {}
    if os.environ.get("RWRE_SEED"):
        envv["seed"] = os.environ["RWRE_SEED"]
    if os.environ.get("RWRE_WORKERS"):
        envv["workers"] = os.environ["RWRE_WORKERS"]
    out = {}
    for key, (conv, default, _) in spec.items():
        raw = getattr(args, key, None)
        if raw is None:
            raw = envv.get(key, cfg.get(key))
        if raw is None:
            out[key] = default
            continue
        try:
            out[key] = conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    _validate(args.command, out)
    return out


def _validate(cmd: str, p: dict):
    from .environment import SiteLaw
    if "law" in p:
        try:
            SiteLaw.from_id(p["law"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if p.get("workers") is not None and p["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    if cmd in ("phi", "osc", "couple"):
        try:
            _exp_config(p).validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if cmd in ("solve", "exit") and not p.get("env"):
        raise ConfigError("--env is required")
    if cmd == "sink" and not p.get("env") and not p.get("counter"):
        raise ConfigError("sink needs --env or --counter")
    if cmd == "counter" and not 2 <= p["R"] <= 4:
        raise ConfigError("counter needs 2 <= R <= 4")
    if cmd == "trans" and (p["d"] not in (2, 3) or min(p["horizons"]) < 10 ** 4):
        raise ConfigError("trans needs d in {2, 3} and horizons >= 1e4")


def _exp_config(p: dict):
    from .experiments import ExperimentConfig
    keys = {"law", "d", "R", "seeds", "eps", "xi", "w", "zeta", "parity", "n_data", "workers"}
    return ExperimentConfig(**{k: v for k, v in p.items() if k in keys})


# --- outputs -------------------------------------------------------------------

class Outputs:
    """Write-once files: written as ``name.partial`` and renamed on success."""

    def __init__(self, base: Path, names: list, force: bool):
        self.base = base
        self.final = [base / n for n in names]
        self.written: list = []
        clash = [str(f) for f in self.final if f.exists()]
        if clash and not force:
            raise ConfigError(f"refusing to overwrite {', '.join(clash)} (use --force)")

    def write(self, name: str, data):
        path = self.base / name
        if path not in self.final:
            raise RuntimeError(f"undeclared output {name}")
        self.base.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".partial")
        tmp.write_bytes(data if isinstance(data, bytes) else data.encode())
        self.written.append((tmp, path))

    def commit(self):
        for tmp, path in self.written:
            os.replace(tmp, path)


def emit_plot_data(report) -> dict:
    """Plot-ready CSV text per figure family, keyed by file name."""
    from .experiments import ExperimentReport, _fmt

    def table(cols, rows):
        lines = [",".join(cols)] + [",".join(_fmt(r[c]) for c in cols) for r in rows]
        return "\n".join(lines) + "\n"

    if isinstance(report, ExperimentReport):
        rows = report.sorted_rows()
        if report.name == "phi":
            return {"phi_ratios.csv": table(["R", "seed", "datum_id", "parity", "ratio", "filtered"], rows)}
        if report.name == "osc":
            return {"osc_ratios.csv": table(["R", "seed", "datum_id", "parity", "ratio", "excluded"], rows)}
        if report.name == "couple":
            return {"tv_vs_distance.csv": table(["R", "seed", "distance", "tv"], rows)}
        if report.name == "homog":
            return {"homog_error_vs_R.csv": table(["R", "seed", "sup_error"], rows)}
    return {}


# --- commands -----------------------------------------------------------------

def _outputs_for(cmd: str, p: dict) -> list:
    plots = {"phi": ["phi_ratios.csv"], "osc": ["osc_ratios.csv"], "couple": ["tv_vs_distance.csv"],
             "homog": ["homog_error_vs_R.csv"]}
    if cmd == "env":
        return []
    return [f"{cmd}.csv", f"{cmd}.json"] + plots.get(cmd, [])


def _cmd_env(p, out):
    from .environment import SiteLaw, sample_iid
    return {"env": sample_iid(SiteLaw.from_id(p["law"]), p["box"], p["seed"], p["d"])}


def _load_env(path):
    from .environment import load
    return load(path)


def _cmd_solve(p, out):
    from .caloric import BoundaryData, boundary_from_csv, field_to_csv, solve_backward
    from .lattice import Cylinder, parity_of
    env = _load_env(p["env"])
    dom = Cylinder(p["R"], (0,) * env.d, 0).domain()
    pts = dom.boundary_points()
    kind = p["data"]
    if kind == "constant":
        g = BoundaryData(dom, np.ones(pts.shape[0]))
    elif kind == "parity":
        g = BoundaryData(dom, parity_of(pts).astype(np.float64))
    elif kind == "exponential":
        lam = np.asarray(p["lam"][:env.d], dtype=np.float64)
        g = BoundaryData(dom, np.exp(pts[:, :-1] @ lam / p["R"]))
    else:
        g = boundary_from_csv(dom, Path(kind).read_text())
    u = solve_backward(env, dom, g)
    out.write("solve.csv", field_to_csv(u))
    out.write("solve.json", json.dumps({"R": p["R"], "env": p["env"], "data": kind,
                                        "residual": u.interior_residual(env)}, indent=1))


def _cmd_exit(p, out):
    from .caloric import exit_distribution_exact, sector_partition
    from .experiments import exit_dp_vs_mc
    from .lattice import Cylinder
    env = _load_env(p["env"])
    cyl = Cylinder(p["R"], (0,) * env.d, 0)
    start = p["start"] or [0] * (env.d + 1)
    part = sector_partition(p["sectors"], p["time_bins"])
    if p["samples"] > 0:
        exact, freq, tv = exit_dp_vs_mc(env, cyl, start, part, p["samples"], p["seed"], p["workers"])
    else:
        exact = exit_distribution_exact(env, start, cyl, part).masses
        freq, tv = np.full(exact.shape, math.nan), math.nan
    lines = ["cell,exact,mc"] + [f"{n},{float(e)!r},{float(f)!r}" for n, e, f in zip(part.names, exact, freq)]
    out.write("exit.csv", "\n".join(lines) + "\n")
    out.write("exit.json", json.dumps({"tv": tv, "samples": p["samples"], "start": list(start)}, indent=1))


def _cmd_sink(p, out):
    from .environment import sink_env_counterexample
    from .sink import check_small_scale_events, find_sinks
    env = sink_env_counterexample(p["counter"]).env if p["counter"] else _load_env(p["env"])
    dec = find_sinks(env)
    rep = dec.report()
    ev = check_small_scale_events(env, p["R"], p["xi"], p["c"])
    rep["events"] = ev.as_dict()
    lines = ["component,size,terminal,verdict"]
    for c, comp in enumerate(dec.components):
        lines.append(f"{c},{len(comp)},{int(dec.terminal[c])},{dec.verdicts[c]}")
    out.write("sink.csv", "\n".join(lines) + "\n")
    out.write("sink.json", json.dumps(rep, indent=1, sort_keys=True, default=str))


def _cmd_abp(p, out):
    from .abp import random_admissible_field, verify_abp_chain
    from .environment import SiteLaw, sample_iid
    from . import rng
    cols = ["field", "sup_u", "theta_volume", "n_contact", "volume_bound_slack", "slope_bound_min_slack",
            "slope_bound_exact_min_slack", "theorem_ratio"]
    lines = [",".join(cols)]
    worst = {"b1": math.inf, "b2": math.inf}
    half = int(math.ceil(p["R"])) + p["k"] + 2
    for j in range(p["fields"]):
        env = sample_iid(SiteLaw.from_id(p["law"]), half, rng.derive_seed(p["seed"], j), 2)
        f = random_admissible_field(p["R"], p["k"], rng.derive_seed(p["seed"], j, 1))
        s = verify_abp_chain(env, f).summary()
        worst["b1"] = min(worst["b1"], s["volume_bound_slack"])
        worst["b2"] = min(worst["b2"], s["slope_bound_min_slack"])
        lines.append(",".join([str(j)] + [repr(float(s[c])) for c in cols[1:]]))
    out.write("abp.csv", "\n".join(lines) + "\n")
    out.write("abp.json", json.dumps({"min_b1_slack": worst["b1"], "min_b2_slack": worst["b2"],
                                      "pass": worst["b1"] >= -1e-9 and worst["b2"] >= -1e-9}, indent=1))


def homog_report(p):
    from .environment import SiteLaw, sample_iid
    from .experiments import ExperimentReport, percentiles
    from .homogenize import homogenization_error, reference_caloric
    a = np.eye(2) / 2
    F = reference_caloric(p["kind"], a, lam=p["lam"]) if p["kind"] == "exponential" else reference_caloric(p["kind"], a)
    rows = []
    for seed in p["seeds"]:
        env = sample_iid(SiteLaw.from_id(p["law"]), max(p["R"]) + 1, seed, 2)
        for R in p["R"]:
            err, arg = homogenization_error(env, R, F)
            rows.append({"R": R, "seed": seed, "sup_error": err, "argmax": arg})
    summary = {f"median_R{R}": percentiles([r["sup_error"] for r in rows if r["R"] == R]).get("median")
               for R in p["R"]}
    return ExperimentReport("homog", ["R", "seed", "sup_error", "argmax"], rows, summary, dict(p))


def _write_report(rep, out, name):
    out.write(f"{name}.csv", rep.to_csv())
    out.write(f"{name}.json", rep.to_json())
    for fname, text in emit_plot_data(rep).items():
        out.write(fname, text)


def _cmd_homog(p, out):
    _write_report(homog_report(p), out, "homog")


def _cmd_phi(p, out):
    from .experiments import phi_bound, phi_experiment
    bound = phi_bound(np.eye(p["d"]) / p["d"], p["eps"]) if p["bound"] else None
    _write_report(phi_experiment(_exp_config(p), bound), out, "phi")


def _cmd_osc(p, out):
    from .experiments import oscillation_experiment
    _write_report(oscillation_experiment(_exp_config(p)), out, "osc")


def _cmd_couple(p, out):
    from .experiments import coupling_experiment
    _write_report(coupling_experiment(_exp_config(p), p["pairs"]), out, "couple")


def _cmd_counter(p, out):
    from .experiments import counterexample_experiment
    rep = counterexample_experiment(p["R"], p["w"], p["xi"])
    out.write("counter.csv", rep.to_csv())
    out.write("counter.json", json.dumps(rep.summary(), indent=1, sort_keys=True))


def _cmd_trans(p, out):
    from .experiments import transience_experiment
    rep = transience_experiment(p["law"], p["d"], p["horizons"], p["samples"], p["seed"], p["workers"])
    out.write("trans.csv", rep.to_csv())
    out.write("trans.json", json.dumps(rep.summary(), indent=1, sort_keys=True))


HANDLERS = {"env": _cmd_env, "solve": _cmd_solve, "exit": _cmd_exit, "sink": _cmd_sink, "abp": _cmd_abp,
            "homog": _cmd_homog, "phi": _cmd_phi, "osc": _cmd_osc, "couple": _cmd_couple,
            "counter": _cmd_counter, "trans": _cmd_trans}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        p = resolve(args)
        if args.command == "env":
            if not args.out:
                raise ConfigError("env needs --out FILE")
            target = Path(args.out)
            out = Outputs(target.parent if str(target.parent) else Path("."), [target.name], args.force)
        else:
            out = Outputs(Path(args.out or "."), _outputs_for(args.command, p), args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        res = HANDLERS[args.command](p, out)
        if args.command == "env":
            from .environment import serialize, to_json
            env = res["env"]
            out.write(Path(args.out).name, to_json(env).encode() if args.out.endswith(".json") else serialize(env))
        out.commit()
    except Exception as exc:  # runtime failure: keep partial files for inspection
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
