"""Config-driven command line: one TOML file per run, CSV and summary out.

A run is fully described by its config file; ``--seed``, ``--threads``,
``--out`` and generic ``--set key=value`` flags override top-level scalar
keys, and the ``MFSDE_OUT_DIR`` environment variable supplies the default
output directory.  Outputs are reproducible byte for byte from
``(config, seed)`` regardless of the thread count.

Exit codes: 0 all criteria of the run passed (or the command has none),
1 at least one criterion failed (summary still written), 2 usage or I/O
error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import validate
from .coeffs import GALLERY, fd_check_derivatives, make_model
from .correction import VARIANT_DISPLAYED, VARIANT_INSIDE, measure_correction
from .lions import FUNCTIONAL_GALLERY
from .measure import EmpiricalMeasure
from .noise import TimeGrid, generate
from .sim import InitialLaw, Scheme, simulate, write_summary_csv, write_trajectory_csv
from .validate import CriterionResult, format_criteria

__all__ = ["RunConfig", "ConfigError", "parse_config", "parse_config_dict", "run", "main"]

COMMANDS = (
    "simulate",
    "equivalence",
    "closedform",
    "bracket",
    "lions-sweep",
    "verify-derivatives",
)

OUT_DIR_ENV = "MFSDE_OUT_DIR"

LIONS_CLOUD_SIZES = (2, 16, 128)
LIONS_STEP_SIZES = (1e-3, 1e-4, 1e-5)
CLOSEDFORM_REFERENCE_N = 500


class ConfigError(ValueError):
    """Invalid run configuration; ``errors`` lists ``key path: reason`` strings."""

    def __init__(self, errors: Sequence[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class RunConfig:
    command: str
    model: str = "LinearMean"
    model_params: dict = field(default_factory=dict)
    n_particles: int = 1000
    horizon: float = 1.0
    n_steps: int = 256
    levels: int = 6
    seeds: int = 1
    base_seed: int = 0
    scheme: str = Scheme.ITO_EULER.value
    correction_variant: str = VARIANT_INSIDE
    fd_fallback: bool = True
    threads: int = 1
    out_dir: str | None = None
    init_mean: float = 1.0
    init_std: float = 0.0

    def seed_list(self) -> list[int]:
        return [self.base_seed + i for i in range(self.seeds)]

    def initial_law(self, dim: int) -> InitialLaw:
        return InitialLaw(mean=np.full(dim, self.init_mean), std=self.init_std)


# key -> (attribute, type, constraint description, predicate)
_SCHEMA = {
    "command": ("command", str, f"one of {COMMANDS}", lambda v: v in COMMANDS),
    "model": ("model", str, f"one of {sorted(GALLERY)}", lambda v: v in GALLERY),
    "N": ("n_particles", int, "positive", lambda v: v >= 1),
    "T": ("horizon", float, "positive and finite", lambda v: v > 0 and np.isfinite(v)),
    "n_steps": ("n_steps", int, "positive", lambda v: v >= 1),
    "levels": ("levels", int, "positive", lambda v: v >= 1),
    "seeds": ("seeds", int, "positive", lambda v: v >= 1),
    "seed": ("base_seed", int, "nonnegative", lambda v: v >= 0),
    "scheme": (
        "scheme",
        str,
        f"one of {tuple(s.value for s in Scheme)}",
        lambda v: v in {s.value for s in Scheme},
    ),
    "correction_variant": (
        "correction_variant",
        str,
        f"one of ({VARIANT_INSIDE!r}, {VARIANT_DISPLAYED!r})",
        lambda v: v in (VARIANT_INSIDE, VARIANT_DISPLAYED),
    ),
    "fd_fallback": ("fd_fallback", bool, "boolean", lambda v: True),
    "threads": ("threads", int, "positive", lambda v: v >= 1),
    "out_dir": ("out_dir", str, "string path", lambda v: True),
    "init_mean": ("init_mean", float, "finite", lambda v: np.isfinite(v)),
    "init_std": ("init_std", float, "finite and nonnegative", lambda v: v >= 0 and np.isfinite(v)),
}


def _coerce(key: str, value, want: type, errors: list[str]):
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want is int and isinstance(value, bool):
        errors.append(f"{key}: expected integer, got boolean")
        return None
    if not isinstance(value, want):
        errors.append(f"{key}: expected {want.__name__}, got {type(value).__name__} ({value!r})")
        return None
    return value


def parse_config(text: str) -> RunConfig:
    """Validated :class:`RunConfig` from TOML text.

    Unknown keys, type mismatches and constraint violations are all
    collected and raised together as a :class:`ConfigError`, each message
    carrying the offending key path.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"<toml>: {exc}"]) from exc
    return parse_config_dict(raw)


def parse_config_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    errors: list[str] = []
    fields: dict = {}

    model_params = raw.pop("model_params", {})
    if not isinstance(model_params, dict):
        errors.append("model_params: expected a table of numeric parameters")
        model_params = {}
    else:
        for key, value in model_params.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errors.append(f"model_params.{key}: expected a number, got {value!r}")
    fields["model_params"] = {k: float(v) for k, v in model_params.items() if isinstance(v, (int, float)) and not isinstance(v, bool)}

    for key, value in raw.items():
        if key not in _SCHEMA:
            errors.append(f"{key}: unknown key")
            continue
        attr, want, description, ok = _SCHEMA[key]
        coerced = _coerce(key, value, want, errors)
        if coerced is None:
            continue
        if not ok(coerced):
            errors.append(f"{key}: must be {description}, got {coerced!r}")
            continue
        fields[attr] = coerced

    if "command" not in raw:
        errors.append("command: missing (required)")
    if errors:
        raise ConfigError(errors)

    config = RunConfig(**fields)
    try:
        make_model(config.model, **config.model_params)
    except ValueError as exc:
        raise ConfigError([f"model_params: {exc}"]) from exc
    return config


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------


def _open_out(out_dir: str, name: str) -> IO[str]:
    return open(os.path.join(out_dir, name), "w", newline="\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def _csv_name(config: RunConfig, seed: int) -> str:
    return f"{config.command}_{config.model}_{seed}.csv"


def _model_has_measure_correction(config: RunConfig) -> bool:
    cs = make_model(config.model, **config.model_params)
    rng = np.random.default_rng(0)
    mu = EmpiricalMeasure(rng.standard_normal((16, cs.d)) + 0.5)
    corr = measure_correction(cs, 0.0, np.zeros(cs.d), mu, variant=config.correction_variant)
    return bool(np.max(np.abs(corr)) > 1e-12)


def _cmd_simulate(config: RunConfig, out_dir: str) -> list[CriterionResult]:
    cs = make_model(config.model, **config.model_params)
    grid = TimeGrid(config.horizon, config.n_steps)
    initial = config.initial_law(cs.d)
    for seed in config.seed_list():
        bundle = generate(seed, grid, config.n_particles, cs.m)
        path = simulate(
            cs,
            Scheme(config.scheme),
            bundle,
            initial,
            variant=config.correction_variant,
            fd_fallback=config.fd_fallback,
        )
        with _open_out(out_dir, _csv_name(config, seed)) as fh:
            write_trajectory_csv(path, fh)
        with _open_out(out_dir, f"{config.command}_{config.model}_{seed}_summary.csv") as fh:
            write_summary_csv(path, fh)
    return []


def _cmd_equivalence(config: RunConfig, out_dir: str) -> list[CriterionResult]:
    cs = make_model(config.model, **config.model_params)
    grid = TimeGrid(config.horizon, config.n_steps)
    report = validate.equivalence_study(
        cs,
        config.n_particles,
        grid,
        config.levels,
        config.seed_list(),
        config.initial_law(cs.d),
        variant=config.correction_variant,
        fd_fallback=config.fd_fallback,
        n_threads=config.threads,
    )
    with _open_out(out_dir, _csv_name(config, config.base_seed)) as fh:
        fh.write("dt,corrected_gap,uncorrected_gap\n")
        for dt, cg, ug in zip(report.dts, report.corrected_gaps, report.uncorrected_gaps):
            fh.write(f"{_fmt(dt)},{_fmt(cg)},{_fmt(ug)}\n")
    return validate.equivalence_criteria(
        report, expect_uncorrected_bias=_model_has_measure_correction(config)
    )


def _cmd_closedform(config: RunConfig, out_dir: str) -> list[CriterionResult]:
    cs = make_model(config.model, **config.model_params)
    grid = TimeGrid(config.horizon, config.n_steps)
    seeds = config.seed_list()
    initial = config.initial_law(cs.d)
    main = validate.closedform_study(
        cs,
        config.n_particles,
        grid,
        config.levels,
        seeds,
        initial,
        scheme=Scheme(config.scheme),
        n_threads=config.threads,
    )
    reference = validate.closedform_study(
        cs,
        CLOSEDFORM_REFERENCE_N,
        grid,
        config.levels,
        seeds,
        initial,
        scheme=Scheme(config.scheme),
        n_threads=config.threads,
    )
    with _open_out(out_dir, _csv_name(config, config.base_seed)) as fh:
        fh.write(f"dt,error_n{config.n_particles},error_n{CLOSEDFORM_REFERENCE_N}\n")
        for dt, em, er in zip(main.dts, main.errors, reference.errors):
            fh.write(f"{_fmt(dt)},{_fmt(em)},{_fmt(er)}\n")
    return validate.closedform_criteria(main, reference)


def _cmd_bracket(config: RunConfig, out_dir: str) -> list[CriterionResult]:
    cs = make_model(config.model, **config.model_params)
    grid = TimeGrid(config.horizon, config.n_steps)
    report = validate.bracket_study(
        cs,
        config.n_particles,
        grid,
        config.seed_list(),
        config.initial_law(cs.d),
        variant=config.correction_variant,
        n_threads=config.threads,
    )
    with _open_out(out_dir, _csv_name(config, config.base_seed)) as fh:
        fh.write("quantity,value\n")
        fh.write(f"w0_bracket_mean,{_fmt(report.w0_bracket_mean)}\n")
        fh.write(f"correction_integral_mean,{_fmt(report.correction_integral_mean)}\n")
        fh.write(f"relative_deviation,{_fmt(report.relative_deviation)}\n")
        fh.write(f"w1_bracket_mean,{_fmt(report.w1_bracket_mean)}\n")
        fh.write(f"w1_bracket_se,{_fmt(report.w1_bracket_se)}\n")
        fh.write(f"w1_z_score,{_fmt(report.w1_z_score)}\n")
    return validate.bracket_criteria(report)


def _cmd_lions_sweep(config: RunConfig, out_dir: str) -> list[CriterionResult]:
    functionals = {name: factory() for name, factory in FUNCTIONAL_GALLERY.items()}
    report = validate.lions_sweep(
        functionals, LIONS_CLOUD_SIZES, LIONS_STEP_SIZES, seed=config.base_seed
    )
    with _open_out(out_dir, _csv_name(config, config.base_seed)) as fh:
        fh.write("functional,n_points,h,max_deviation,slope\n")
        for name in functionals:
            for n in report.cloud_sizes:
                slope = report.slopes[name][n]
                for h in report.step_sizes:
                    fh.write(
                        f"{name},{n},{_fmt(h)},{_fmt(report.deviations[name][n][h])},{_fmt(slope)}\n"
                    )
    return validate.lions_criteria(report)


def _cmd_verify_derivatives(config: RunConfig, out_dir: str) -> list[CriterionResult]:
    cs = make_model(config.model, **config.model_params)
    rng = np.random.default_rng(config.base_seed)
    # FD checks loop atoms entrywise; a small cloud keeps them fast and sharp
    mu = EmpiricalMeasure(rng.standard_normal((min(config.n_particles, 32), cs.d)) + config.init_mean)
    x = np.full(cs.d, config.init_mean)
    tol = 1e-5
    check = fd_check_derivatives(cs, 0.0, x, mu, tol)
    with _open_out(out_dir, _csv_name(config, config.base_seed)) as fh:
        fh.write("quantity,value\n")
        fh.write(f"max_deviation,{_fmt(check.max_deviation)}\n")
        if check.measure_deviation is not None:
            fh.write(f"measure_deviation,{_fmt(check.measure_deviation)}\n")
        if check.spatial_deviation is not None:
            fh.write(f"spatial_deviation,{_fmt(check.spatial_deviation)}\n")
    return [
        CriterionResult(
            "verify-derivatives/max-deviation",
            check.passed,
            f"model {config.model}: analytic vs FD derivative deviation "
            f"{check.max_deviation:.3e} (need <= {tol:g})",
        )
    ]


_HANDLERS = {
    "simulate": _cmd_simulate,
    "equivalence": _cmd_equivalence,
    "closedform": _cmd_closedform,
    "bracket": _cmd_bracket,
    "lions-sweep": _cmd_lions_sweep,
    "verify-derivatives": _cmd_verify_derivatives,
}


def run(config: RunConfig) -> int:
    """Execute one run: write CSV artifacts plus ``summary.txt``, return exit code."""
    out_dir = config.out_dir or os.environ.get(OUT_DIR_ENV) or "."
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        print(f"error: output directory {out_dir!r} not writable: {exc}", file=sys.stderr)
        return 2

    try:
        criteria = _HANDLERS[config.command](config, out_dir)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    with _open_out(out_dir, "summary.txt") as fh:
        fh.write(f"command: {config.command}\n")
        fh.write(f"model: {config.model} {dict(sorted(config.model_params.items()))}\n")
        fh.write(
            f"N: {config.n_particles}  T: {config.horizon}  n_steps: {config.n_steps}  "
            f"levels: {config.levels}  seeds: {config.seeds}  base_seed: {config.base_seed}\n"
        )
        if criteria:
            fh.write(format_criteria(criteria))
        else:
            fh.write("no criteria for this command; run completed\n")
    return 0 if all(c.passed for c in criteria) else 1


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError([f"--set {text!r}: expected key=value"])
    key, raw = text.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw  # bare string
    return key.strip(), value


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfsde",
        description="Run mean-field particle simulations and validation studies from a TOML config.",
    )
    parser.add_argument("config", help="path to the TOML run configuration")
    parser.add_argument("--seed", type=int, help="override the base seed")
    parser.add_argument("--threads", type=int, help="override the thread count")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any top-level scalar config key (repeatable)",
    )
    args = parser.parse_args(argv)

    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2

    overrides: dict[str, object] = {}
    try:
        for item in args.set:
            key, value = _parse_override(item)
            overrides[key] = value
    except ConfigError as exc:
        for line in exc.errors:
            print(f"error: {line}", file=sys.stderr)
        return 2
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.out is not None:
        overrides["out_dir"] = args.out

    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        print(f"error: <toml>: {exc}", file=sys.stderr)
        return 2
    raw.update(overrides)
    try:
        config = parse_config_dict(raw)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"error: {line}", file=sys.stderr)
        return 2

    return run(config)


if __name__ == "__main__":
    sys.exit(main())
