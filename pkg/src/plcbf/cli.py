"""Command-line entry point: ``plcbf {run,analyze,bench,validate} --config PATH``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from importlib import resources
from json.decoder import scanstring
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError, PLCBFError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_WS = re.compile(r"[ \t\n\r]*")
_DECODER = json.JSONDecoder()


# ---------------------------------------------------------------- config loading

def _index_positions(text, pos, path, out):
    """Record the character offset of every value (object members: their key)."""
    pos = _WS.match(text, pos).end()
    out.setdefault(path, pos)
    ch = text[pos]
    if ch == "{":
        pos = _WS.match(text, pos + 1).end()
        if text[pos] == "}":
            return pos + 1
        while True:
            pos = _WS.match(text, pos).end()
            key_pos = pos
            key, pos = scanstring(text, pos + 1)
            out[path + (key,)] = key_pos
            pos = _WS.match(text, pos).end() + 1       # skip ':'
            pos = _index_positions(text, pos, path + (key,), out)
            pos = _WS.match(text, pos).end()
            if text[pos] == "}":
                return pos + 1
            pos += 1
    if ch == "[":
        pos = _WS.match(text, pos + 1).end()
        if text[pos] == "]":
            return pos + 1
        i = 0
        while True:
            pos = _index_positions(text, pos, path + (i,), out)
            pos = _WS.match(text, pos).end()
            if text[pos] == "]":
                return pos + 1
            pos += 1
            i += 1
    _, end = _DECODER.raw_decode(text, pos)
    return end


def _parse_field(field):
    """'library[2].params' -> ('library', 2, 'params')."""
    out = []
    for part in re.findall(r"[^.\[\]]+|\[\d+\]", field or ""):
        out.append(int(part[1:-1]) if part.startswith("[") else part)
    return tuple(out)


def _format_path(path):
    s = ""
    for p in path:
        s += f"[{p}]" if isinstance(p, int) else (f".{p}" if s else p)
    return s or "<root>"


class ConfigSource:
    """Parsed config plus a map from JSON paths to source line numbers."""

    def __init__(self, text, name="<config>"):
        self.name = name
        self.text = text
        try:
            self.data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
        self.positions = {}
        _index_positions(text, 0, (), self.positions)

    def line_of(self, path):
        path = tuple(path)
        while path not in self.positions and path:
            path = path[:-1]
        return self.text.count("\n", 0, self.positions.get(path, 0)) + 1

    def error(self, message, path):
        return ConfigError(message, field=_format_path(path), line=self.line_of(path))


def load_schema():
    return json.loads(resources.files("plcbf").joinpath("schema.json").read_text())


def _schema_error(src, err):
    path = tuple(err.absolute_path)
    if err.validator == "additionalProperties":
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            return src.error(f"unknown key {extra[0]!r}", path + (extra[0],))
    if err.validator == "required":
        missing = re.match(r"'([^']+)'", err.message)
        key = missing.group(1) if missing else "?"
        return src.error(f"missing required key {key!r}", path + (key,))
    if err.validator == "contains" and path == ("library",):
        return src.error("library has no nominal policy (an entry with rank 0)", path)
    return src.error(err.message, path)


def load_config(path):
    """Read, parse and schema-validate a config file. Raises ConfigError with line anchors."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    src = ConfigSource(text, str(path))
    validator = jsonschema.Draft202012Validator(load_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(src.data))
    if err is not None:
        raise _schema_error(src, err)
    return src


def check_semantics(src):
    """Build every object the config describes so value errors surface before running."""
    from .scenarios.build import build_all
    try:
        return build_all(src.data)
    except ConfigError as exc:
        path = _parse_field(exc.field)
        raise src.error(exc.message, path) from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc), line=1) from exc


# ---------------------------------------------------------------- commands

def _provenance(config):
    from .scenarios.common import config_hash
    return {"config_hash": config_hash(config), "seed": config.get("seed", 0)}


def _out_dir(args, config):
    out = Path(args.out or config.get("output_dir") or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_logs(out, result, prov):
    from .scenarios.common import write_run_csv
    files = []
    for name, log in result.logs.items():
        p = out / f"run_{name}.csv"
        write_run_csv(p, log, prov)
        files.append(p.name)
    return files


def _run(config, args, out, prov):
    from .scenarios import common, grid_sweep, highway, quadrotor
    scenario = config["scenario"]
    summary = {"scenario": scenario}
    failed = False
    if scenario == "grid_sweep":
        res = grid_sweep.run_grid(config, workers=args.workers, keep_logs=args.retain_trajectories)
        files = []
        for name, cov in res.coverage.items():
            common.write_json(out / f"coverage_{name}.json", cov.to_dict(), prov)
            (out / f"coverage_{name}.svg").write_text(grid_sweep.render_svg(cov))
            files += [f"coverage_{name}.json", f"coverage_{name}.svg"]
            if args.retain_trajectories:
                cell_dir = out / "cells" / name
                cell_dir.mkdir(parents=True, exist_ok=True)
                for (i, j, _), log in zip(cov.cells, cov.logs):
                    common.write_run_csv(cell_dir / f"cell_{i}_{j}.csv", log, prov)
        common.write_json(out / "certification.json", res.certification, prov)
        files.append("certification.json")
        if res.viability is not None:
            common.write_json(out / "viability.json", res.viability, prov)
            files.append("viability.json")
        summary.update(res.summary)
    elif scenario in ("highway", "quadrotor"):
        fn = highway.run_highway if scenario == "highway" else quadrotor.run_quadrotor
        res = fn(config, workers=args.workers, timing=args.timing)
        files = _write_logs(out, res, prov)
        summary.update(res.summary)
        failed = res.logs["plcbf"].status == "failed"
    elif scenario == "bench":
        return _bench(config, args, out, prov)
    elif scenario == "analyze":
        return _analyze(config, args, out, prov)
    summary["artifacts"] = files
    common.write_json(out / "summary.json", summary, prov)
    print(json.dumps({k: v for k, v in summary.items() if k != "artifacts"}, indent=2, sort_keys=True,
                     default=str))
    return EXIT_RUNTIME if failed else EXIT_OK


def _analyze(config, args, out, prov):
    from .metric import AdmissiblePolicyFamily, completeness_check
    from .scenarios.build import build_all
    from .scenarios.common import write_json
    model, library, schedule, _ = build_all(config)
    a = config["analyze"]
    fam = a["family"]
    family = AdmissiblePolicyFamily(model, a["T"], segments=fam.get("segments", 5), kind=fam["kind"],
                                    members=tuple(fam.get("members", ())), lower=fam.get("lower"),
                                    upper=fam.get("upper"))
    report = completeness_check(model, library, family, schedule.snapshots[0], np.asarray(a["x"], float),
                                a["T"], a["dt"], a["n_samples"], a.get("seed", config.get("seed", 0)),
                                L_h=a.get("L_h"), lipschitz_samples=a.get("lipschitz_samples", 4000))
    doc = report.to_dict()
    doc["family_restricted"] = True
    write_json(out / "completeness.json", doc, prov)
    print(f"certified={report.certified} delta_hat={report.delta_hat:.6g} threshold={report.threshold:.6g} "
          f"gamma*={report.gamma_star:.6g} L_h={report.L_h:.6g} reason={report.reason}")
    if report.witness:
        w = report.witness
        print(f"witness: {w['pi_k']} (d={w['distance']:.6g}, H={w['H_pi_k']:.6g}) for sample {w['pi_star']}")
    return EXIT_OK


def _bench(config, args, out, prov):
    from .scenarios.bench import benchmark_timing
    from .scenarios.common import write_json
    bc = config.get("bench", {})
    n_steps = bc.get("n_steps", 200) if args.steps is None else args.steps
    stats = benchmark_timing(config, n_steps, warmup=bc.get("warmup", 10),
                             workers=bc.get("workers", args.workers), batch_cells=bc.get("batch_cells", 100))
    write_json(out / "bench.json", stats, prov)
    fs = stats["filter_step"]
    print(f"filter_step median={fs['median_ms']} ms p95={fs['p95_ms']} ms over {fs['n']} steps")
    if "parallel" in stats:
        p = stats["parallel"]
        print(f"evaluate_batch speedup at {p['workers']} workers: {p['speedup']:.2f}x "
              f"(bitwise equal: {p['bitwise_equal']})")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="plcbf", description="Policy-library CBF safety filter experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("run", "run the scenario named in the config"),
                        ("analyze", "library coverage certificate at a state"),
                        ("bench", "filter-step timing"),
                        ("validate", "schema and value check only")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="scenario config (JSON)")
        if name == "validate":
            continue
        p.add_argument("--out", help="output directory (default: config output_dir or ./out)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker threads")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--retain-trajectories", action="store_true",
                       help="also write per-cell closed-loop logs for grid sweeps")
        p.add_argument("--timing", action="store_true",
                       help="record solve times in run logs (makes logs machine-dependent)")
        if name == "bench":
            p.add_argument("--steps", type=int, help="override bench.n_steps")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        src = load_config(args.config)
        if args.command != "validate" and args.seed is not None:
            src.data["seed"] = args.seed
        check_semantics(src)
    except ConfigError as exc:
        print(f"{args.config}: config error {exc}", file=sys.stderr)
        return EXIT_CONFIG
    config = src.data
    if args.command == "validate":
        print(f"{args.config}: ok")
        return EXIT_OK
    if args.workers < 1:
        print("--workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, config)
    prov = _provenance(config)
    try:
        if args.command == "analyze":
            if "analyze" not in config:
                print(f"{args.config}: config error [field 'analyze'] no analyze block", file=sys.stderr)
                return EXIT_CONFIG
            return _analyze(config, args, out, prov)
        if args.command == "bench":
            if "bench" not in config:
                print(f"{args.config}: config error [field 'bench'] no bench block", file=sys.stderr)
                return EXIT_CONFIG
            return _bench(config, args, out, prov)
        return _run(config, args, out, prov)
    except (PLCBFError, ArithmeticError, RuntimeError, AssertionError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
