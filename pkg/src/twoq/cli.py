"""Config-driven batch runner: ``twoq run``, ``twoq validate``, ``twoq preset``.

A config is a JSON object ``{"schema_version": 1, "experiments": [...]}``.
Each experiment names a chain kind, pricing curves, an arrival model, a
scaling schedule (explicit points or a power-law rule in eta), an optional
regime limit ``l`` and a solution method. An entry may instead reference a
bundled preset with ``{"preset": "<name>"}``.

Exit codes: 0 when every experiment ran, 1 on config validation failure,
2 on a runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import ArrivalModel, ChainKind, ChainSpec
from .pricing import (
    NAMED_CURVES,
    ConditionError,
    ConditionWarning,
    PricingCurvePair,
    RegimeClass,
    RegimeInconclusive,
    ScalingPoint,
    Smoothness,
    classify_regime,
    knot_curves,
)
from .singleq import PRESETS as SINGLE_SERVER_PRESETS
from .limits import DivergentNormalization, PhiStarUnbounded, limit_law_for
from .verify import SCHEMA_VERSION, has_closed_form, scalings_for, sweep

OUTPUT_ENV = "TWOQ_OUTPUT_DIR"
METHODS = ("exact", "exact_closed_form", "truncated_solve", "simulate")
OUTPUTS = ("scaled_cdf_grid", "ks_table", "residual_table", "limit_law_grid")
CDF_TAIL_TRIM = 1e-6
LIMIT_GRID_POINTS = 1001


# ---------------------------------------------------------------------------
# presets

_BERNOULLI = {"family": "Bernoulli", "lambda_star": 0.5, "mu_star": 0.5}


def _two_sided(name, schedule, regime, method="exact_closed_form"):
    return {
        "name": name,
        "chain": "TwoSided",
        "curves": {"name": "two_price"},
        "arrivals": dict(_BERNOULLI),
        "schedule": schedule,
        "regime": regime,
        "method": method,
    }


def _critical_schedule(l):
    return {"rule": {"a": 1.0, "p": -1.0, "b": float(l), "q": 1.0}, "eta": [1e1, 1e2, 1e3]}


_QD_SCHEDULE = {"rule": {"a": 1.0, "p": -1.0, "b": 1.0, "q": 0.5}, "eta": [1e2, 1e3, 1e4]}

PRESETS: dict[str, list[dict]] = {
    "prop3.2-sweep": [
        _two_sided("quality-driven", _QD_SCHEDULE, 0),
        _two_sided("critical", _critical_schedule(1.0), 1),
        _two_sided("profit-driven", {"rule": {"a": 0.05, "p": 0.0, "b": 1.0, "q": 1.0}, "eta": [1e2, 1e3]}, "inf"),
    ],
    "fig2-laplace-to-hybrid": [
        _two_sided("l=0", _QD_SCHEDULE, 0),
        _two_sided("l=0.2", _critical_schedule(0.2), 0.2),
        _two_sided("l=1", _critical_schedule(1.0), 1),
        _two_sided("l=5", _critical_schedule(5.0), 5),
    ],
    **SINGLE_SERVER_PRESETS,
}


def preset_config(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return {"schema_version": SCHEMA_VERSION, "experiments": copy.deepcopy(PRESETS[name])}


# ---------------------------------------------------------------------------
# validation


@dataclass
class Diagnostic:
    level: str
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.path}: {self.message}" if self.path else f"{self.level}: {self.message}"

    def to_dict(self) -> dict:
        return {"level": self.level, "path": self.path, "message": self.message}


@dataclass
class Experiment:
    name: str
    template: ChainSpec
    schedule: list[ScalingPoint]
    regime: RegimeClass
    method: str
    method_options: dict
    outputs: tuple[str, ...]


@dataclass
class Validation:
    experiments: list[Experiment] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(d.level == "error" for d in self.diagnostics)

    def error(self, path, message):
        self.diagnostics.append(Diagnostic("error", path, message))

    def warn(self, path, message):
        self.diagnostics.append(Diagnostic("warning", path, message))


class _Invalid(Exception):
    def __init__(self, path: str, message: str):
        super().__init__(message)
        self.path = path
        self.message = message


def _require(obj: dict, key: str, path: str):
    if not isinstance(obj, dict) or key not in obj:
        raise _Invalid(f"{path}.{key}" if path else key, "required")
    return obj[key]


def _number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _Invalid(path, "number required")
    return float(v)


def _parse_curves(c, path: str) -> PricingCurvePair:
    if not isinstance(c, dict):
        raise _Invalid(path, "object required")
    if "name" in c:
        name = c["name"]
        if name not in NAMED_CURVES:
            raise _Invalid(f"{path}.name", f"unknown curves {name!r}; known: {', '.join(sorted(NAMED_CURVES))}")
        try:
            return NAMED_CURVES[name](**c.get("params", {}))
        except (TypeError, ValueError) as exc:
            raise _Invalid(f"{path}.params", str(exc)) from None
    try:
        return knot_curves(_require(c, "knots_c", path), _require(c, "knots_s", path),
                           Smoothness(c.get("smoothness", "piecewise")))
    except ValueError as exc:
        raise _Invalid(path, str(exc)) from None


def _parse_arrivals(a, path: str) -> ArrivalModel:
    if not isinstance(a, dict):
        raise _Invalid(path, "object required")
    family = a.get("family", "Bernoulli")
    lam = _number(_require(a, "lambda_star", path), f"{path}.lambda_star")
    mu = _number(a.get("mu_star", lam), f"{path}.mu_star")
    try:
        if family == "Bernoulli":
            return ArrivalModel(lam, mu)
        if family == "BoundedDiscrete":
            return ArrivalModel(lam, mu, tuple(int(k) for k in _require(a, "support", path)),
                                tuple(map(float, _require(a, "intercept", path))),
                                tuple(map(float, _require(a, "slope", path))), "BoundedDiscrete")
    except (TypeError, ValueError) as exc:
        raise _Invalid(path, str(exc)) from None
    raise _Invalid(f"{path}.family", f"unknown family {family!r}; use Bernoulli or BoundedDiscrete")


def _parse_schedule(s, path: str) -> list[ScalingPoint]:
    if isinstance(s, list):
        s = {"points": s}
    if not isinstance(s, dict):
        raise _Invalid(path, "object or list required")
    points = []
    if "points" in s:
        raw = s["points"]
        if not isinstance(raw, list):
            raise _Invalid(f"{path}.points", "list required")
        for i, p in enumerate(raw):
            pp = f"{path}.points[{i}]"
            eps = _number(_require(p, "epsilon", pp), f"{pp}.epsilon")
            tau = _number(_require(p, "tau", pp), f"{pp}.tau")
            eta = _number(p.get("eta", i + 1), f"{pp}.eta")
            points.append((eta, eps, tau, pp))
    elif "rule" in s:
        rule = s["rule"]
        rp = f"{path}.rule"
        a, p, b, q = (_number(_require(rule, k, rp), f"{rp}.{k}") for k in ("a", "p", "b", "q"))
        etas = _require(s, "eta", path)
        if not isinstance(etas, list):
            raise _Invalid(f"{path}.eta", "list required")
        for i, eta in enumerate(etas):
            eta = _number(eta, f"{path}.eta[{i}]")
            if not eta > 0:
                raise _Invalid(f"{path}.eta[{i}]", "must be positive")
            points.append((eta, a * eta ** p, b * eta ** q, f"{path}.eta[{i}]"))
    else:
        raise _Invalid(path, "needs 'points' or 'rule'")
    if not points:
        raise _Invalid(path, "nonempty required")
    out = []
    for eta, eps, tau, pp in points:
        try:
            out.append(ScalingPoint(eps, tau, eta))
        except ValueError as exc:
            raise _Invalid(pp, str(exc)) from None
    return out


def _parse_regime(v, schedule, path: str) -> RegimeClass:
    if v is None:
        try:
            return classify_regime(schedule)
        except (RegimeInconclusive, ValueError) as exc:
            raise _Invalid(path, f"cannot classify the schedule ({exc}); give 'regime' explicitly") from None
    if v == "inf":
        return RegimeClass(math.inf)
    l = _number(v, path)
    if l < 0:
        raise _Invalid(path, "must be nonnegative or 'inf'")
    return RegimeClass(l)


def _parse_method(m, path: str) -> tuple[str, dict]:
    opts = {}
    if isinstance(m, dict):
        opts = {k: v for k, v in m.items() if k != "name"}
        m = _require(m, "name", path)
    if m not in METHODS:
        raise _Invalid(path, f"unknown method {m!r}; use one of {', '.join(METHODS)}")
    if m == "simulate":
        unknown = set(opts) - {"n_steps", "burn_in", "seeds"}
        if unknown:
            raise _Invalid(path, f"unknown simulate options {sorted(unknown)}")
        n_steps = int(opts.get("n_steps", 10**6))
        burn_in = int(opts.get("burn_in", 10**4))
        seeds = [int(s) for s in opts.get("seeds", [0])]
        if n_steps < 10**4 or not 0 <= burn_in < n_steps or not seeds:
            raise _Invalid(path, "simulate needs n_steps >= 1e4, 0 <= burn_in < n_steps and nonempty seeds")
        opts = {"n_steps": n_steps, "burn_in": burn_in, "seeds": tuple(seeds)}
    elif opts:
        raise _Invalid(path, f"method {m!r} takes no options")
    return m, opts


def _expand_presets(experiments: list, v: Validation) -> list[tuple[str, dict]]:
    out = []
    for i, e in enumerate(experiments):
        path = f"experiments[{i}]"
        if isinstance(e, dict) and "preset" in e:
            if e["preset"] not in PRESETS:
                v.error(f"{path}.preset", f"unknown preset {e['preset']!r}")
                continue
            for j, pe in enumerate(copy.deepcopy(PRESETS[e["preset"]])):
                if "name" in e and len(PRESETS[e["preset"]]) == 1:
                    pe["name"] = e["name"]
                out.append((f"{path}<{e['preset']}>[{j}]", pe))
        else:
            out.append((path, e))
    return out


def validate_config(config) -> Validation:
    """Parse and check a config without running anything."""
    v = Validation()
    if not isinstance(config, dict):
        v.error("", "top level must be an object")
        return v
    version = config.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        v.error("schema_version", f"unsupported version {version!r}; expected {SCHEMA_VERSION}")
    experiments = config.get("experiments")
    if not isinstance(experiments, list) or not experiments:
        v.error("experiments", "nonempty list required")
        return v
    names = set()
    for path, e in _expand_presets(experiments, v):
        try:
            exp = _validate_experiment(e, path, v)
        except _Invalid as exc:
            v.error(exc.path, exc.message)
            continue
        if exp is None:
            continue
        if exp.name in names:
            v.error(f"{path}.name", f"duplicate experiment name {exp.name!r}")
            continue
        names.add(exp.name)
        v.experiments.append(exp)
    return v


_CHAIN_NAMES = {"TwoSided": ChainKind.TWO_SIDED, ChainKind.TWO_SIDED.value: ChainKind.TWO_SIDED,
                "SingleServer": ChainKind.SINGLE_SERVER}


def _validate_experiment(e, path: str, v: Validation) -> Experiment | None:
    if not isinstance(e, dict):
        raise _Invalid(path, "object required")
    name = _require(e, "name", path)
    if not isinstance(name, str) or not name or "/" in name or name in (".", ".."):
        raise _Invalid(f"{path}.name", "nonempty string without '/' required")
    kind = _CHAIN_NAMES.get(e.get("chain", "TwoSided"))
    if kind is None:
        raise _Invalid(f"{path}.chain", "use TwoSided or SingleServer")
    curves = _parse_curves(_require(e, "curves", path), f"{path}.curves")
    arrivals = _parse_arrivals(_require(e, "arrivals", path), f"{path}.arrivals")
    schedule = _parse_schedule(_require(e, "schedule", path), f"{path}.schedule")
    regime = _parse_regime(e.get("regime"), schedule, f"{path}.regime")
    method, opts = _parse_method(e.get("method", "exact"), f"{path}.method")
    outputs = e.get("outputs", list(OUTPUTS))
    if not isinstance(outputs, list) or any(o not in OUTPUTS for o in outputs):
        raise _Invalid(f"{path}.outputs", f"list drawn from {', '.join(OUTPUTS)} required")

    specs = []
    for i, point in enumerate(schedule):
        try:
            specs.append(ChainSpec(kind, arrivals, curves, point))
        except ValueError as exc:
            v.error(f"{path}.schedule[{i}]", str(exc))
    if len(specs) != len(schedule):
        return None
    template = specs[0]
    chk = template.drift_check()
    if not chk.satisfied:
        cond = "Condition 4" if kind is ChainKind.SINGLE_SERVER else "Condition 1"
        v.error(f"{path}.curves", f"{cond}: negative-drift grid check failed")
        return None
    if method == "exact_closed_form" and not has_closed_form(template):
        v.error(f"{path}.method", "closed form only exists for Bernoulli arrivals under the two-price policy")
        return None
    for scaling in scalings_for(regime):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConditionWarning)
            try:
                limit_law_for(template, regime, scaling)
            except (ConditionError, PhiStarUnbounded, DivergentNormalization) as exc:
                v.error(f"{path}.curves", str(exc))
                return None
        for w in caught:
            diag = Diagnostic("warning", f"{path}.curves", str(w.message))
            if issubclass(w.category, ConditionWarning) and diag not in v.diagnostics:
                v.diagnostics.append(diag)
    return Experiment(name, template, schedule, regime, method, opts, tuple(outputs))


def load_config(path) -> tuple[dict | None, Validation]:
    v = Validation()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        v.error("", f"cannot read {path}: {exc.strerror}")
        return None, v
    try:
        return json.loads(text), v
    except json.JSONDecodeError as exc:
        v.error(f"line {exc.lineno}, column {exc.colno}", f"invalid JSON: {exc.msg}")
        return None, v


# ---------------------------------------------------------------------------
# artifacts


def _eta_label(eta: float) -> str:
    return f"{eta:g}"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _trimmed(step, tail: float = CDF_TAIL_TRIM):
    cdf = step.cumulative
    keep = (cdf >= tail) & (np.concatenate([[0.0], cdf[:-1]]) <= 1 - tail)
    return step.jumps[keep], cdf[keep]


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def run_experiment(exp: Experiment, out_dir: Path) -> dict:
    """Run one sweep and write its artifacts into ``out_dir / exp.name``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConditionWarning)
        report = sweep(exp.template, exp.schedule, regime=exp.regime, method=exp.method,
                       keep_laws=True, **exp.method_options)
    d = out_dir / exp.name
    d.mkdir(parents=True, exist_ok=True)
    doc = {"experiment": exp.name, "chain": exp.template.kind.value,
           "curves": exp.template.pricing.name, **report.to_dict()}
    (d / "report.json").write_text(_dumps(doc))

    if "scaled_cdf_grid" in exp.outputs:
        for i, point in enumerate(exp.schedule):
            rows = []
            for scaling, steps in report.scaled_laws.items():
                x, c = _trimmed(steps[i])
                rows.extend((scaling, xi, ci) for xi, ci in zip(x.tolist(), c.tolist()))
            _write_csv(d / f"cdf_{_eta_label(point.eta)}.csv", ["scaling", "x", "cdf"], rows)
    if "limit_law_grid" in exp.outputs:
        rows = []
        for scaling, law in report.limit_laws.items():
            x, pdf, cdf = law.grid(LIMIT_GRID_POINTS)
            rows.extend((scaling, a, b, c) for a, b, c in zip(x.tolist(), pdf.tolist(), cdf.tolist()))
        _write_csv(d / "limit.csv", ["scaling", "x", "pdf", "cdf"], rows)
    if "ks_table" in exp.outputs:
        rows = [(p.eta, p.epsilon, p.tau, s, ks)
                for s, dists in report.distances.items() for p, ks in zip(exp.schedule, dists)]
        _write_csv(d / "ks.csv", ["eta", "epsilon", "tau", "scaling", "ks"], rows)
    if "residual_table" in exp.outputs and report.residuals:
        rows = [(p.eta, p.epsilon, p.tau, s, r.omega, r.value)
                for s, per_point in report.residuals.items()
                for p, rs in zip(exp.schedule, per_point) for r in rs]
        _write_csv(d / "residuals.csv", ["eta", "epsilon", "tau", "scaling", "omega", "residual"], rows)
    return {"regime": report.regime.label.value, "verdict": report.verdict.value,
            "verdicts": {k: v.value for k, v in report.verdicts.items()}}


def run_config(config, out_dir, *, workers: int = 1, stderr=None) -> int:
    stderr = stderr if stderr is not None else sys.stderr
    v = validate_config(config)
    for diag in v.diagnostics:
        print(diag, file=stderr)
    if not v.ok:
        return 1
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def guarded(exp):
        try:
            return exp.name, run_experiment(exp, out_dir), None
        except (ArithmeticError, ValueError, RuntimeError, OSError) as exc:
            return exp.name, None, exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(guarded, v.experiments))
    else:
        results = [guarded(e) for e in v.experiments]
    summary, status = {}, 0
    for name, res, exc in results:
        if exc is not None:
            print(f"error: experiment {name!r} failed: {type(exc).__name__}: {exc}", file=stderr)
            status = 2
        else:
            summary[name] = res
    (out_dir / "summary.json").write_text(_dumps({"schema_version": SCHEMA_VERSION, "experiments": summary}))
    return status


# ---------------------------------------------------------------------------
# entry point


def _output_dir(arg: str | None) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUTPUT_ENV, "twoq-output"))


def _load_or_preset(target: str):
    if target in PRESETS and not Path(target).exists():
        return preset_config(target), Validation()
    return load_config(target)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twoq", description="Heavy-traffic sweeps for controlled two-sided queues.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run every experiment in a config (or a preset name)")
    run.add_argument("config")
    run.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./twoq-output)")
    run.add_argument("--workers", type=int, default=1, help="experiments run concurrently")
    val = sub.add_parser("validate", help="check a config and print diagnostics as JSON")
    val.add_argument("config")
    pre = sub.add_parser("preset", help="list presets or print one as a config")
    pre.add_argument("name", nargs="?")
    pre.add_argument("--list", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "preset":
        if args.list or not args.name:
            for name in sorted(PRESETS):
                print(name)
            return 0
        try:
            sys.stdout.write(_dumps(preset_config(args.name)))
        except KeyError as exc:
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return 1
        return 0

    config, v = _load_or_preset(args.config)
    if args.command == "validate":
        if config is not None:
            v = validate_config(config)
        sys.stdout.write(json.dumps([d.to_dict() for d in v.diagnostics], indent=2, ensure_ascii=False) + "\n")
        return 0 if v.ok else 1

    if config is None:
        for diag in v.diagnostics:
            print(diag, file=sys.stderr)
        return 1
    return run_config(config, _output_dir(args.out), workers=max(1, args.workers))


if __name__ == "__main__":
    sys.exit(main())
