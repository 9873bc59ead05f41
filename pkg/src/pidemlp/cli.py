"""Command-line driver: ``pidemlp <subcommand> [--config FILE] [flags]``.

Every subcommand reads one key/value tree (YAML or JSON).  Flags override the
matching config fields.  A master seed is mandatory.  Artifacts are written to
the output directory as JSON lines (``*.jsonl``) and CSV; a ``timestamp`` and
wall-clock fields are included unless ``--deterministic`` is given.

Exit status: 0 when every declared threshold passes, 1 on a threshold
failure (the failing row goes to stderr), 2 on an unusable configuration.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml
from scipy.special import ndtri

from . import compiler, mlp, model as model_mod, relunet, sde
from .model import ConfigError
from .randomness import Purpose, RngStream, ThetaBatch, ThetaIndex, gaussians

SUBCOMMANDS = (
    "solve", "convergence", "compile-dnn", "verify-equivalence", "count-params", "dump-streams", "check-assumptions",
)


class ThresholdFailure(Exception):
    def __init__(self, message: str, row: dict):
        super().__init__(message)
        self.row = row


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: cannot parse ({where}): {getattr(exc, 'problem', exc)}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {}) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"field '{name}' must be a mapping")
    return dict(sec)


def _get(sec: dict, key: str, kind, default=None, where: str = ""):
    if key not in sec or sec[key] is None:
        return default
    try:
        return kind(sec[key])
    except (TypeError, ValueError):
        raise ConfigError(f"field '{where}{key}': cannot interpret {sec[key]!r}") from None


def build_model(cfg: dict, args) -> model_mod.PideModel:
    spec = cfg.get("model")
    if getattr(args, "model_file", None):
        spec = load_config(args.model_file).get("model", load_config(args.model_file))
    elif spec is None and cfg.get("model_file"):
        spec = load_config(cfg["model_file"]).get("model")
    spec = dict(spec or {})
    if getattr(args, "benchmark", None):
        spec["benchmark"] = args.benchmark
    if getattr(args, "d", None) is not None:
        spec["d"] = args.d
    if not spec:
        raise ConfigError("field 'model': missing (give a model in the config or --benchmark and --d)")
    if "benchmark" in spec and "d" not in spec:
        spec["d"] = 1
    return model_mod.model_from_config(spec)


def _apply_overrides(sec: dict, args, names: list[str]) -> dict:
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            sec[name] = value
    return sec


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


class Artifacts:
    def __init__(self, out_dir: str, deterministic: bool):
        self.dir = Path(out_dir)
        self.deterministic = deterministic
        self.dir.mkdir(parents=True, exist_ok=True)

    def stamp(self, record: dict) -> dict:
        if not self.deterministic:
            record = {**record, "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
        return record

    def jsonl(self, name: str, records: list[dict]) -> Path:
        path = self.dir / name
        with path.open("w") as fh:
            for rec in records:
                fh.write(json.dumps(self.stamp(rec), sort_keys=True) + "\n")
        return path

    def csv(self, name: str, rows: list[dict]) -> Path:
        path = self.dir / name
        buf = io.StringIO()
        if rows:
            writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _fmt(v) for k, v in row.items()})
        path.write_text(buf.getvalue())
        return path

    def text(self, name: str, content: str) -> Path:
        path = self.dir / name
        path.write_text(content)
        return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _point(sec: dict, d: int, key: str = "x") -> np.ndarray:
    raw = sec.get(key)
    if raw is None:
        return np.zeros(d)
    x = np.asarray(_floats(raw) if isinstance(raw, str) else raw, dtype=np.float64).reshape(-1)
    if x.size == 1 and d > 1:
        x = np.full(d, x[0])
    if x.size != d:
        raise ConfigError(f"field '{key}': expected {d} coordinates, got {x.size}")
    return x


def _level_params(sec: dict, where: str) -> tuple[int, int, int, float]:
    n = _get(sec, "n", int, 1, where)
    m = _get(sec, "m", int, max(n, 1), where)
    K = _get(sec, "K", int, max(1, n * n), where)
    t = _get(sec, "t", float, 0.0, where)
    if n < 0 or m < 1 or K < 1:
        raise ConfigError(f"field '{where}n/m/K': need n >= 0, m >= 1, K >= 1")
    if n > 6:
        raise ConfigError(f"field '{where}n': levels above 6 are refused (cost grows like m^n n)")
    return n, m, K, t


def cmd_solve(cfg, args, model, seed, out: Artifacts) -> None:
    sec = _apply_overrides(_section(cfg, "solve"), args, ["n", "m", "K", "t", "x", "reps"])
    n, m, K, t = _level_params(sec, "solve.")
    reps = _get(sec, "reps", int, 1, "solve.")
    x = _point(sec, model.d)
    thetas = [ThetaIndex((r,)) for r in range(reps)]
    start = time.perf_counter()
    vals = mlp.mlp_values_parallel(model, n, m, K, t, np.repeat(x[None], reps, axis=0), thetas, seed,
                                   workers=args.workers)
    wall = time.perf_counter() - start
    counts = mlp.evaluation_counts(n, m)
    records = []
    for r, v in enumerate(vals):
        records.append({"rep": r, "theta": str(thetas[r]), "n": n, "m": m, "K": K, "t": t, "x": x.tolist(),
                        "seed": seed, "value": float(v), "paths": counts.paths, "f_evals": counts.f_evals,
                        "g_evals": counts.g_evals})
    out.jsonl("solve.jsonl", records)
    agg = {"model": model.name, "d": model.d, "n": n, "m": m, "K": K, "t": t, "reps": reps,
           "mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if reps > 1 else float("nan")}
    bench = model.meta.get("benchmark")
    if bench is not None:
        exact = model_mod.benchmark_solution(model, bench, t, x)
        agg["exact"] = exact
        agg["rmse"] = float(np.sqrt(np.mean((vals - exact) ** 2)))
    if not out.deterministic:
        agg["wall_time_s"] = wall
    out.csv("solve.csv", [agg])
    if args.dump_trajectory:
        path = sde.em_path(model, sde.EmTrajectoryRequest(ThetaIndex((0, 0, -1)), K, t, model.T, x), seed)
        rows = [{"time": tm, **{f"x{i + 1}": float(v) for i, v in enumerate(st)}} for tm, st in path]
        out.csv("trajectory.csv", rows)
    print(json.dumps(_jsonable(records[0] if reps == 1 else agg), sort_keys=True))
    max_rmse = _get(_section(sec, "thresholds"), "max_rmse", float, None, "solve.thresholds.")
    if max_rmse is not None and "rmse" in agg and not agg["rmse"] <= max_rmse:
        raise ThresholdFailure("solve: rmse above threshold", agg)


def _k_rule(spec):
    if spec is None or spec in ("n^2", "n2", "square"):
        return mlp.default_K_rule
    if spec in ("n", "linear"):
        return lambda n: max(1, n)
    try:
        value = int(spec)
    except (TypeError, ValueError):
        raise ConfigError(f"field 'convergence.K_rule': unknown rule {spec!r}") from None
    return lambda n: value


def cmd_convergence(cfg, args, model, seed, out: Artifacts) -> None:
    sec = _apply_overrides(_section(cfg, "convergence"), args, ["levels", "reps", "t", "x"])
    levels = sec.get("levels", [1, 2, 3])
    levels = _ints(levels) if isinstance(levels, str) else [int(v) for v in levels]
    if any(n < 1 or n > 6 for n in levels):
        raise ConfigError("field 'convergence.levels': each level must lie in 1..6")
    reps = _get(sec, "reps", int, 100, "convergence.")
    bench = sec.get("benchmark", model.meta.get("benchmark"))
    if bench is None:
        raise ConfigError("field 'convergence.benchmark': the model has no closed-form benchmark")
    rows = mlp.convergence_study(
        model, bench, levels, reps, _k_rule(sec.get("K_rule")), seed,
        t=_get(sec, "t", float, 0.0, "convergence."), x=_point(sec, model.d), workers=args.workers,
        timing=not out.deterministic,
    )
    table = []
    for row in rows:
        rec = row.as_dict()
        if out.deterministic:
            rec.pop("wall_time_s")
        table.append(rec)
    out.csv("convergence.csv", table)
    out.jsonl("convergence.jsonl", [_jsonable(r) for r in table])
    for rec in table:
        print(json.dumps(_jsonable(rec), sort_keys=True))
    thr = _section(sec, "thresholds")
    max_rmse = _get(thr, "max_rmse", float, None, "convergence.thresholds.")
    bound_factor = _get(thr, "bound_factor", float, None, "convergence.thresholds.")
    for rec in table:
        if max_rmse is not None and not rec["rmse"] <= max_rmse:
            raise ThresholdFailure("convergence: rmse above max_rmse", rec)
        if bound_factor is not None and not rec["rmse"] <= bound_factor * rec["bound"]:
            raise ThresholdFailure("convergence: rmse above the a-priori bound", rec)


def _binding(sec: dict, seed: int, where: str) -> compiler.ScenarioBinding:
    n, m, K, t = _level_params(sec, where)
    theta = sec.get("theta", "0")
    if isinstance(theta, (list, tuple)):
        theta = ThetaIndex(tuple(int(v) for v in theta))
    else:
        theta = ThetaIndex.parse(str(theta))
    return compiler.ScenarioBinding(seed, theta, t, n, m, K)


def _ceiling(sec: dict, where: str):
    raw = sec.get("ceiling", compiler.DEFAULT_PARAM_CEILING)
    if raw in (None, "none", "None"):
        return None
    return _get({"ceiling": raw}, "ceiling", int, None, where)


def cmd_compile(cfg, args, model, seed, out: Artifacts) -> None:
    sec = _apply_overrides(_section(cfg, "compile-dnn"), args, ["n", "m", "K", "t", "ceiling"])
    binding = _binding(sec, seed, "compile-dnn.")
    compiled = compiler.compile_mlp(model, binding, ceiling=_ceiling(sec, "compile-dnn."))
    meta = {"model": model.name, "d": model.d, "seed": seed, "theta": str(binding.root_theta), "t": binding.t,
            "n": binding.n, "m": binding.m, "K": binding.K, **compiler.compile_report(compiled),
            "dims": list(compiled.network.dims.dims)}
    out.text("network.json", relunet.dumps(compiled.network))
    out.jsonl("compile.jsonl", [_jsonable(meta)])
    print(json.dumps(_jsonable({k: v for k, v in meta.items() if k != "dims"}), sort_keys=True))
    if not meta["dims_match_prediction"] or meta["depth"] != meta["predicted_depth"]:
        raise ThresholdFailure("compile-dnn: architecture differs from prediction", meta)
    if meta["width"] > meta["predicted_width_bound"]:
        raise ThresholdFailure("compile-dnn: width above bound", meta)


def cmd_verify(cfg, args, model, seed, out: Artifacts) -> None:
    sec = _apply_overrides(_section(cfg, "verify-equivalence"), args, ["n", "m", "K", "t", "points", "tolerance",
                                                                       "ceiling"])
    binding = _binding(sec, seed, "verify-equivalence.")
    raw = sec.get("points", 20)
    if isinstance(raw, (int, str)) and str(raw).isdigit():
        batch = ThetaBatch.single(seed, ThetaIndex((-7,))).children(0, range(int(raw)))
        pts = gaussians(batch, 0, model.d)
    else:
        pts = np.asarray(raw, dtype=np.float64).reshape(-1, model.d)
    tol = _get(sec, "tolerance", float, 1e-6, "verify-equivalence.")
    report = compiler.verify_equivalence(model, binding, pts, tolerance=tol, ceiling=_ceiling(sec, "verify-equivalence."))
    out.csv("equivalence.csv", report.rows())
    summary = {"n": binding.n, "m": binding.m, "K": binding.K, "t": binding.t, "points": len(pts),
               "max_abs_dev": report.max_abs, "max_rel_dev": report.max_rel, "tolerance": tol, "pass": report.passed}
    out.jsonl("equivalence.jsonl", [summary])
    print(json.dumps(_jsonable(summary), sort_keys=True))
    if not report.passed:
        worst = int(np.argmax(report.rel_dev))
        raise ThresholdFailure("verify-equivalence: deviation above tolerance", report.rows()[worst])


def cmd_count(cfg, args, model, seed, out: Artifacts) -> None:
    sec = _apply_overrides(_section(cfg, "count-params"), args, ["n", "m", "K"])
    n, m, K, _ = _level_params(sec, "count-params.")
    d_values = sec.get("d_values", args.d_values or [model.d])
    d_values = _ints(d_values) if isinstance(d_values, str) else [int(v) for v in d_values]
    eps = _get(sec, "eps", float, 0.5, "count-params.")
    spec = dict(cfg.get("model") or {})
    if args.benchmark:
        spec["benchmark"] = args.benchmark
    rows = []
    for d in d_values:
        if d == model.d:
            mdl = model
        elif spec.get("benchmark"):
            mdl = model_mod.model_from_config({**spec, "d": d})
        else:
            raise ConfigError("field 'count-params.d_values': varying d needs a benchmark model")
        shapes = compiler.coefficient_shapes(mdl, K)
        dims = compiler.predicted_dims(shapes, n, m)
        rows.append({"d": d, "eps": eps, "n": n, "m": m, "K": K, "depth": len(dims), "width": dims.sup_norm,
                     "params": relunet.param_count(dims)})
    out.csv("count_params.csv", rows)
    for row in rows:
        print(json.dumps(row, sort_keys=True))


_PURPOSES = {p.name.lower(): p for p in Purpose}


def cmd_dump(cfg, args, model, seed, out: Artifacts) -> None:
    sec = _apply_overrides(_section(cfg, "dump-streams"), args, ["theta", "purpose", "k", "prefix"])
    theta = ThetaIndex.parse(str(sec.get("theta", "0")))
    purpose_name = str(sec.get("purpose", "time_fraction")).lower().replace("-", "_")
    if purpose_name not in _PURPOSES:
        raise ConfigError(f"field 'dump-streams.purpose': unknown purpose {purpose_name!r}")
    purpose = _PURPOSES[purpose_name]
    k = _get(sec, "k", int, 10, "dump-streams.")
    prefix = sec.get("prefix", "")
    prefix = _ints(prefix) if isinstance(prefix, str) else [int(v) for v in prefix]
    stream = RngStream(seed, theta, purpose)
    rows = []
    for j in range(k):
        counter = tuple(prefix) + (j,)
        u = stream.uniform(*counter)
        value = float(ndtri(u)) if purpose is Purpose.GAUSSIAN else u
        rows.append({"theta": str(theta), "purpose": purpose.name.lower(), "counter": ":".join(map(str, counter)),
                     "uniform": u, "value": value})
    out.csv("streams.csv", rows)
    sys.stdout.write("".join(f"{r['counter']},{r['uniform']!r},{r['value']!r}\n" for r in rows))


def cmd_check(cfg, args, model, seed, out: Artifacts) -> None:
    sec = _apply_overrides(_section(cfg, "check-assumptions"), args, ["samples"])
    samples = _get(sec, "samples", int, 1000, "check-assumptions.")
    report = model_mod.validate_assumptions(model, samples, RngStream(seed, ThetaIndex((-5,)), Purpose.GAUSSIAN))
    rec = {"model": model.name, "d": model.d, **report.as_dict()}
    if model.exactly_networked and model.nets is not None:
        rec["network_deviation"] = model_mod.check_networks(model)
    out.jsonl("assumptions.jsonl", [_jsonable(rec)])
    print(json.dumps(_jsonable(rec), sort_keys=True))
    if _section(sec, "thresholds").get("require_pass") and not report.passed:
        raise ThresholdFailure("check-assumptions: sampled inequality violated", rec)
    if rec.get("network_deviation", 0.0) > 1e-9:
        raise ThresholdFailure("check-assumptions: networks disagree with coefficients", rec)


HANDLERS = {
    "solve": cmd_solve,
    "convergence": cmd_convergence,
    "compile-dnn": cmd_compile,
    "verify-equivalence": cmd_verify,
    "count-params": cmd_count,
    "dump-streams": cmd_dump,
    "check-assumptions": cmd_check,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pidemlp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--model-file", help="file holding a 'model' mapping")
        p.add_argument("--benchmark", help="benchmark model id (const_affine, linear_exp)")
        p.add_argument("--d", type=int, help="state dimension for benchmark models")
        p.add_argument("--seed", type=int, help="master seed (required here or in the config)")
        p.add_argument("--out", help="output directory (default: config 'output.dir' or '.')")
        p.add_argument("--deterministic", action="store_true", help="omit timestamps and wall-clock fields")
        p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
        if name in ("solve", "compile-dnn", "verify-equivalence", "count-params"):
            p.add_argument("--n", type=int)
            p.add_argument("--m", type=int)
            p.add_argument("--K", type=int)
        if name in ("solve", "compile-dnn", "verify-equivalence", "convergence"):
            p.add_argument("--t", type=float)
        if name in ("solve", "convergence"):
            p.add_argument("--x", type=_floats, help="comma-separated point")
            p.add_argument("--reps", type=int)
        if name == "solve":
            p.add_argument("--dump-trajectory", action="store_true", help="write trajectory.csv for one path")
        if name == "convergence":
            p.add_argument("--levels", type=_ints, help="comma-separated n=m levels")
        if name in ("compile-dnn", "verify-equivalence"):
            p.add_argument("--ceiling", type=int, help="parameter ceiling")
        if name == "verify-equivalence":
            p.add_argument("--points", type=int, help="number of Gaussian test points")
            p.add_argument("--tolerance", type=float)
        if name == "count-params":
            p.add_argument("--d-values", type=_ints, help="comma-separated dimensions")
        if name == "dump-streams":
            p.add_argument("--theta", help="comma-separated index, e.g. 0,1,-2")
            p.add_argument("--purpose", choices=sorted(_PURPOSES))
            p.add_argument("--k", type=int, help="number of draws")
            p.add_argument("--prefix", type=_ints, help="leading counter words, e.g. 0 for segment 0")
        if name == "check-assumptions":
            p.add_argument("--samples", type=int)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed")
        if seed is None:
            raise ConfigError("field 'seed': missing (give --seed or 'seed' in the config)")
        seed = _get({"seed": seed}, "seed", int)
        out_dir = args.out or (_section(cfg, "output").get("dir")) or "."
        out = Artifacts(str(out_dir), args.deterministic)
        model = None if args.command == "dump-streams" else build_model(cfg, args)
        HANDLERS[args.command](cfg, args, model, seed, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except compiler.ResourceLimitError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 2
    except ThresholdFailure as exc:
        print(f"threshold failure: {exc}", file=sys.stderr)
        print(json.dumps(_jsonable(exc.row), sort_keys=True), file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> None:
    raise SystemExit(run(argv))


if __name__ == "__main__":
    main()
