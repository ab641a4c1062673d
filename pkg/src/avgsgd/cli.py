"""Command-line entry point: ``avgsgd <command> --config cfg.json --out dir``.

Exit status is 0 on success, 2 when the configuration or an input path is
invalid, and 3 when ``--strict`` is set and a bound or check is violated.
Every output directory receives a ``manifest.json`` holding the resolved
configuration, its SHA-256 and the SHA-256 of every file written.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .data import read_libsvm, write_libsvm
from .errors import AvgSGDError, ConfigError
from .harness import (DataGenSpec, Statistic, bound_sweep, empirical_moment, fit_rate,
                      generate_dataset, run_replicates, write_reports_csv, write_reports_json)
from .kernel import KernelFunction, kernel_run, predict
from .losses import RADIUS_FACTOR, LossFamily, LossModel, check_self_concordance
from .oracle import OptimumCertificate, solve_batch
from .sgd import (RunConfig, SampledSource, ScheduleKind, SequentialSource, StepSchedule,
                  make_generator, run)

COMMANDS = ("gen-data", "solve", "run", "replicate", "sweep", "rates",
            "check-selfconcordance", "kernel-run")

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_horizons = {"type": "array", "items": _pos_int, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["data", "model"],
    "additionalProperties": False,
    "properties": {
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "generate": {
                    "type": "object",
                    "required": ["kind"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["WellSpecifiedLogistic", "MisspecifiedLogistic",
                                          "RobustRegression", "TwoPointToy"]},
                        "dimension": _pos_int, "radius": {"type": "number", "exclusiveMinimum": 0},
                        "dataset_size": _pos_int, "seed": {"type": "integer", "minimum": 0},
                        "correlation_decay": {"type": "number", "exclusiveMinimum": 0},
                        "theta_true": {"type": ["array", "null"], "items": _num},
                        "theta_scale": _num,
                        "label_mode": {"enum": ["sampled", "conditional"]},
                        "feature_law": {"enum": ["signs", "gaussian"]},
                        "gaussian_scale": {"type": "number", "exclusiveMinimum": 0},
                        "noise_scale": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
            "oneOf": [{"required": ["path"]}, {"required": ["generate"]}],
        },
        "model": {
            "type": "object",
            "required": ["family", "radius"],
            "additionalProperties": False,
            "properties": {
                "family": {"enum": [f.value for f in LossFamily]},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "n_classes": {"type": "integer", "minimum": 2},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": [k.value for k in ScheduleKind]},
                "doubling_base": {"enum": ["upper", "lower"]},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "horizon": _pos_int,
                "seed": {"type": "integer", "minimum": 0},
                "record_stride": _pos_int,
                "theta0": {"type": ["array", "null"], "items": _num},
                "sampling": {"enum": ["iid", "sequential"]},
                "components": {"type": "boolean"},
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": _pos_int,
                "init": {"enum": ["zero", "theta_true"]},
            },
        },
        "replicate": {"type": "object", "additionalProperties": False,
                      "properties": {"m": _pos_int}},
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "horizons": _horizons, "m": _pos_int,
                "bounds": {"type": "array", "items": {
                    "enum": ["prop1", "prop2", "appendixF", "prop3", "prop4", "prop6"]}},
                "p_grid": {"type": "array", "items": _pos_int},
                "t_grid": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
        },
        "rates": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "horizons": _horizons, "m": _pos_int,
                "statistic": {"enum": [s.value for s in Statistic]},
                "expected_slope": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
            },
        },
        "selfconcordance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "segments": _pos_int, "probes": {"type": "integer", "minimum": 3},
                "scale": {"type": "number", "exclusiveMinimum": 0},
                "tolerance": {"type": "number", "minimum": 0},
            },
        },
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["linear", "gaussian"]},
                "bandwidth": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "cache_rows": {"type": ["integer", "null"], "minimum": 0},
            },
        },
    },
}

DEFAULTS = {
    "schedule": {"kind": "constant_horizon", "doubling_base": "upper"},
    "run": {"horizon": 1000, "seed": 0, "record_stride": 1, "theta0": None,
            "sampling": "iid", "components": True},
    "oracle": {"tol": None, "max_iter": 200, "init": "theta_true"},
    "replicate": {"m": 100},
    "sweep": {"horizons": [100, 1000], "m": 1000, "bounds": list(("prop1", "prop2", "appendixF",
                                                                  "prop3", "prop4", "prop6")),
              "p_grid": [1, 2, 3], "t_grid": [0.5, 1.0, 2.0, 3.0]},
    "rates": {"horizons": [100, 1000, 10000, 100000], "m": 200, "statistic": "gap",
              "expected_slope": None},
    "selfconcordance": {"segments": 100, "probes": 33, "scale": 1.0, "tolerance": 1e-3},
    "kernel": {"kind": "linear", "bandwidth": None, "cache_rows": None},
}


class ViolationExit(Exception):
    pass


# ----------------------------------------------------------------------
# configuration


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: dict, overrides) -> dict:
    """Apply ``key.sub=value`` overrides; values are parsed as JSON when possible."""
    config = copy.deepcopy(config)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value", field=item)
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = config
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object", field=key)
        node[parts[-1]] = _parse_value(value)
    return config


def validate_config(config: dict) -> dict:
    """Validate against :data:`CONFIG_SCHEMA` and fill in defaults."""
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}", field=where) from None
    resolved = copy.deepcopy(config)
    for section, values in DEFAULTS.items():
        merged = dict(values)
        merged.update(resolved.get(section, {}))
        resolved[section] = merged
    return resolved


def load_config(path, overrides=(), seed=None) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", field="--config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}", field="--config") from None
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw.setdefault("run", {})["seed"] = seed
    cfg = validate_config(raw)
    if "path" in cfg["data"]:
        p = Path(cfg["data"]["path"])
        if not p.is_absolute():
            cfg["data"]["path"] = str((path.parent / p).resolve())
    return cfg


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# ----------------------------------------------------------------------
# object construction


def build_dataset(cfg):
    data = cfg["data"]
    if "path" in data:
        p = Path(data["path"])
        if not p.exists():
            raise ConfigError(f"data file {p} does not exist", field="data.path")
        return read_libsvm(p)
    return generate_dataset(DataGenSpec(**data["generate"]))


def build_model(cfg, dataset) -> LossModel:
    m = cfg["model"]
    family = LossFamily(m["family"])
    K = m.get("n_classes", 2)
    needed = RADIUS_FACTOR[family] * dataset.radius
    if m["radius"] < needed * (1 - 1e-12):
        raise ConfigError(f"model.radius {m['radius']} is below {needed} required by the data "
                          f"(feature bound {dataset.radius})", field="model.radius")
    dim = dataset.feature_dim * (K if family is LossFamily.MULTINOMIAL else 1)
    return LossModel(family, float(m["radius"]), dim, K)


def build_run_config(cfg, model, dataset, horizon=None, certificate=None, trace=False) -> RunConfig:
    r = cfg["run"]
    N = horizon or r["horizon"]
    s = cfg["schedule"]
    schedule = StepSchedule(s["kind"], model.radius,
                            N if s["kind"] == "constant_horizon" else None, s["doubling_base"])
    source = SampledSource(dataset) if r["sampling"] == "iid" else SequentialSource(dataset)
    return RunConfig(model, schedule, source, N, seed=r["seed"], theta0=r["theta0"],
                     record_stride=r["record_stride"], certificate=certificate, trace=trace)


def build_certificate(cfg, model, dataset) -> OptimumCertificate:
    o = cfg["oracle"]
    init = None
    if o["init"] == "theta_true" and "theta_true" in dataset.meta:
        init = np.array(dataset.meta["theta_true"], dtype=float)
        if init.shape != (model.dimension,):
            init = None
    return solve_batch(model, dataset, theta_init=init, tol=o["tol"], max_iter=o["max_iter"])


# ----------------------------------------------------------------------
# commands


class Output:
    """Collects files written by a command and writes the manifest."""

    def __init__(self, out_dir, command, cfg):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.digest = config_digest(cfg)
        self.files = []

    @property
    def header(self):
        return [f"command={self.command}", "config=" + json.dumps(self.cfg, sort_keys=True),
                f"config_sha256={self.digest}"]

    def path(self, name) -> Path:
        self.files.append(name)
        return self.dir / name

    def write_json(self, name, payload):
        payload = dict(payload)
        payload["config"] = self.cfg
        payload["config_sha256"] = self.digest
        self.path(name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def finish(self):
        files = {}
        for name in sorted(set(self.files)):
            files[name] = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
        manifest = {"command": self.command, "config": self.cfg, "config_sha256": self.digest,
                    "files": files}
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_gen_data(cfg, out: Output, args):
    dataset = build_dataset(cfg)
    write_libsvm(dataset, out.path("data.libsvm"), generator=dataset.meta.get("generator", {}))
    out.files.append("data.libsvm.json")
    print(f"wrote {len(dataset)} records (dimension {dataset.feature_dim}) to {out.dir / 'data.libsvm'}")
    return 0


def cmd_solve(cfg, out: Output, args):
    dataset = build_dataset(cfg)
    model = build_model(cfg, dataset)
    cert = build_certificate(cfg, model, dataset)
    out.write_json("certificate.json", {"certificate": cert.to_dict()})
    print(f"f* = {cert.f_star!r}  mu = {cert.mu!r}  |grad| = {cert.grad_norm_at_star:.3g}  "
          f"converged = {cert.converged}")
    return 0


def cmd_run(cfg, out: Output, args):
    dataset = build_dataset(cfg)
    model = build_model(cfg, dataset)
    cert = build_certificate(cfg, model, dataset)
    traj = run(build_run_config(cfg, model, dataset, certificate=cert))
    traj.to_csv(out.path("trajectory.csv"), certificate=cert,
                components=cfg["run"]["components"], header_lines=out.header)
    final_gap = float(model.risk(dataset, traj.final_average) - cert.f_star)
    out.write_json("run.json", {"final_theta": traj.final_theta.tolist(),
                                "final_average": traj.final_average.tolist(),
                                "final_gap": final_gap, "certificate": cert.to_dict()})
    print(f"N = {traj.config.horizon}  f(avg_N) - f* = {final_gap:.6g}")
    return 0


def cmd_replicate(cfg, out: Output, args):
    dataset = build_dataset(cfg)
    model = build_model(cfg, dataset)
    cert = build_certificate(cfg, model, dataset)
    config = build_run_config(cfg, model, dataset)
    rs = run_replicates(config, cfg["replicate"]["m"], cert, threads=args.threads)
    rs.to_csv(out.path("replicates.csv"), header_lines=out.header)
    summary = {}
    for s in Statistic:
        e = empirical_moment(rs, s, 1)
        summary[s.value] = {"mean": e.value, "ci_low": e.ci_low, "ci_high": e.ci_high}
    out.write_json("summary.json", {"horizon": rs.horizon, "m": rs.num_replicates,
                                    "statistics": summary})
    print(f"m = {rs.num_replicates}  mean gap = {summary['gap']['mean']:.6g}")
    return 0


def cmd_sweep(cfg, out: Output, args):
    dataset = build_dataset(cfg)
    model = build_model(cfg, dataset)
    cert = build_certificate(cfg, model, dataset)
    sw = cfg["sweep"]
    reports = bound_sweep(lambda N: build_run_config(cfg, model, dataset, horizon=N), sw["horizons"],
                          cert, sw["m"], bounds=tuple(sw["bounds"]), threads=args.threads,
                          p_grid=tuple(sw["p_grid"]), t_grid=tuple(sw["t_grid"]))
    write_reports_csv(reports, out.path("reports.csv"), header_lines=out.header)
    write_reports_json(reports, out.path("reports.json"),
                       extra={"config": cfg, "config_sha256": out.digest})
    bad = [r for r in reports if r.violated]
    print(f"{len(reports)} bound rows, {len(bad)} violated")
    if bad and args.strict:
        raise ViolationExit(f"{len(bad)} bound violations")
    return 0


def cmd_rates(cfg, out: Output, args):
    dataset = build_dataset(cfg)
    model = build_model(cfg, dataset)
    cert = build_certificate(cfg, model, dataset)
    rc = cfg["rates"]
    stat = Statistic(rc["statistic"])

    def estimate(N):
        rs = run_replicates(build_run_config(cfg, model, dataset, horizon=N), rc["m"], cert,
                            threads=args.threads)
        return empirical_moment(rs, stat, 1).value

    fit = fit_rate(rc["horizons"], estimate)
    lines = [f"# {h}" for h in out.header] + ["horizon,estimate"]
    lines += [f"{N},{e!r}" for N, e in zip(fit.horizons, fit.estimates)]
    out.path("rates.csv").write_text("\n".join(lines) + "\n")
    payload = {"statistic": stat.value, "fit": fit.to_dict()}
    ok = True
    if rc["expected_slope"]:
        lo, hi = sorted(rc["expected_slope"])
        ok = lo <= fit.slope <= hi
        payload["expected_slope"] = [lo, hi]
        payload["within_expected"] = ok
    out.write_json("rate_fit.json", payload)
    print(f"slope = {fit.slope:.4f} +/- {fit.slope_stderr:.4f}")
    if not ok and args.strict:
        raise ViolationExit(f"slope {fit.slope:.4f} outside {rc['expected_slope']}")
    return 0


def cmd_check_selfconcordance(cfg, out: Output, args):
    dataset = build_dataset(cfg)
    model = build_model(cfg, dataset)
    sc = cfg["selfconcordance"]
    rng = make_generator(cfg["run"]["seed"], (7,))
    scale = sc["scale"] / model.radius
    rows = ["segment,max_ratio,num_probes"]
    worst = 0.0
    for k in range(sc["segments"]):
        t1 = scale * rng.standard_normal(model.dimension)
        t2 = scale * rng.standard_normal(model.dimension)
        res = check_self_concordance(model, t1, t2, sc["probes"], dataset)
        worst = max(worst, res.max_ratio)
        rows.append(f"{k},{res.max_ratio!r},{res.num_probes}")
    out.path("selfconcordance.csv").write_text(
        "\n".join([f"# {h}" for h in out.header] + rows) + "\n")
    ok = worst <= 1.0 + sc["tolerance"]
    out.write_json("selfconcordance.json", {"max_ratio": worst, "within_tolerance": ok})
    print(f"max ratio over {sc['segments']} segments: {worst:.6f}")
    if not ok and args.strict:
        raise ViolationExit(f"self-concordance ratio {worst:.6f} exceeds 1 + {sc['tolerance']}")
    return 0


def cmd_kernel_run(cfg, out: Output, args):
    dataset = build_dataset(cfg)
    model = build_model(cfg, dataset)
    kc = cfg["kernel"]
    kernel = KernelFunction(kc["kind"], kc["bandwidth"])
    state = kernel_run(build_run_config(cfg, model, dataset), kernel, gram_cache_rows=kc["cache_rows"])
    state.to_json(out.path("dual_state.json"))
    lines = [f"# {h}" for h in out.header] + ["row,prediction,averaged_prediction"]
    for i, x in enumerate(dataset.X):
        p, a = predict(state, kernel, x), predict(state, kernel, x, averaged=True)
        if np.ndim(p):
            p, a = ";".join(repr(float(v)) for v in p), ";".join(repr(float(v)) for v in a)
        else:
            p, a = repr(p), repr(a)
        lines.append(f"{i},{p},{a}")
    out.path("predictions.csv").write_text("\n".join(lines) + "\n")
    print(f"{len(state)} dual weights, {state.kernel_evaluations} kernel evaluations")
    return 0


HANDLERS = {
    "gen-data": cmd_gen_data, "solve": cmd_solve, "run": cmd_run, "replicate": cmd_replicate,
    "sweep": cmd_sweep, "rates": cmd_rates, "check-selfconcordance": cmd_check_selfconcordance,
    "kernel-run": cmd_kernel_run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avgsgd", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment configuration")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="overrides run.seed")
    parser.add_argument("--strict", action="store_true", help="exit 3 on any bound violation")
    parser.add_argument("--threads", type=int, default=1, help="replicate worker threads")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a dotted config key (repeatable)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        out = Output(args.out, args.command, cfg)
        code = HANDLERS[args.command](cfg, out, args)
        out.finish()
        return code
    except ViolationExit as exc:
        out.finish()
        print(f"strict: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AvgSGDError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
