"""Command-line entry point.

Commands: run, sweep, converge, oracle-check, validate.  Inputs come
from a JSON config file and/or a named preset, with repeatable
`--set section.key=value` overrides.  Outputs (CSV, manifest, SVG
figures) are written atomically and are byte-identical across repeat
runs with the same inputs.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .channel import generate_channels, generate_topology
from .core import (
    ConfigError,
    Deployment,
    GaConfig,
    Regime,
    Scheme,
    SolverConfig,
    SystemConfig,
    apply_overrides,
    config_to_dict,
    load_config_file,
    parse_config_dict,
    replace_config,
    validate_config,
    validate_ga_config,
    validate_solver_config,
)
from .experiments import (
    AXIS_LABELS,
    Axis,
    PRESETS,
    SweepResult,
    SweepSpec,
    convergence_report,
    run_trial,
    run_sweep,
    trial_seed,
    write_aggregate_csv,
    write_manifest,
    write_trials_csv,
)
from .scheduling import Evaluator, exhaustive_oracle, usbda


def _atomic_write(path: Path, writer) -> None:
    """Write via a sibling temp file and rename, so readers never see
    a partial file and reruns replace outputs in one step."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(Path(tmp))
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return format(x, ".9g")
    return str(x)


# ---------------------------------------------------------------------------
# Config assembly
# ---------------------------------------------------------------------------


def _load_raw(args) -> dict:
    if args.preset and args.config:
        raise ConfigError("pass either --config or --preset, not both")
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; choices: {', '.join(sorted(PRESETS))}")
        import json

        raw = json.loads(json.dumps(PRESETS[args.preset]))
    elif args.config:
        import json

        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    else:
        raise ConfigError("one of --config or --preset is required")
    raw = apply_overrides(raw, args.set or [])
    if args.seed is not None:
        raw.setdefault("system", {})["rng_seed"] = args.seed
    if args.trials is not None:
        raw.setdefault("experiment", {})["n_trials"] = args.trials
    return raw


def _parse_enum(cls, text, default):
    if text is None:
        return default
    try:
        return cls(text)
    except ValueError as exc:
        choices = ", ".join(m.value for m in cls)
        raise ConfigError(f"bad {cls.__name__.lower()} {text!r}; choices: {choices}") from exc


def _experiment_single(exp: dict) -> tuple[Scheme, Deployment, Regime]:
    scheme = _parse_enum(Scheme, exp.get("scheme"), Scheme.MU)
    deployment = _parse_enum(Deployment, exp.get("deployment"), Deployment.CELL_FREE)
    regime = _parse_enum(Regime, exp.get("regime"), Regime.FBL)
    return scheme, deployment, regime


def _experiment_sweep(exp: dict) -> SweepSpec:
    if "axis" not in exp:
        raise ConfigError("sweep requires experiment.axis in the config or preset")
    axis = _parse_enum(Axis, exp["axis"], None)
    values = tuple(exp.get("values", ()))
    if not values:
        raise ConfigError("sweep requires a nonempty experiment.values list")
    schemes = tuple(_parse_enum(Scheme, s, None) for s in exp.get("schemes", [exp.get("scheme", "mu")]))
    deployments = tuple(
        _parse_enum(Deployment, d, None) for d in exp.get("deployments", [exp.get("deployment", "cell_free")])
    )
    regimes = tuple(_parse_enum(Regime, r, None) for r in exp.get("regimes", [exp.get("regime", "fbl")]))
    n_trials = int(exp.get("n_trials", 10))
    if n_trials < 1:
        raise ConfigError("experiment.n_trials must be positive")
    return SweepSpec(axis, values, schemes, deployments, regimes, n_trials)


def _validate_all(cfg, ga, solver) -> list[str]:
    report = validate_config(cfg)
    messages = [f"violation: {v}" for v in report.violations]
    messages += [f"warning: {w}" for w in report.warnings]
    for rep in (validate_ga_config(ga), validate_solver_config(solver)):
        messages += [f"violation: {v}" for v in rep.violations]
    return messages


def _require_valid(cfg, ga, solver) -> None:
    bad = [m for m in _validate_all(cfg, ga, solver) if m.startswith("violation")]
    if bad:
        raise ConfigError("; ".join(bad))


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def emit_figures(sweep_result: SweepResult | None, output_dir: str | Path) -> list[Path]:
    """One vector image per sweep plus a sibling CSV with the same data."""
    if sweep_result is None or not sweep_result.cells:
        return []
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "cellfree-ra"
    import matplotlib.pyplot as plt

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = sweep_result.spec
    label = AXIS_LABELS[spec.axis]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for scheme in spec.schemes:
        for deployment in spec.deployments:
            for regime in spec.regimes:
                xs, ys, es = [], [], []
                for value in spec.values:
                    stats = sweep_result.cell(value, scheme, deployment, regime)
                    xs.append(value)
                    ys.append(stats.mean_wtp)
                    es.append(stats.std_err)
                name = f"{scheme.value.upper()}/{deployment.value}/{regime.value}"
                ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=name)
    ax.set_xlabel(label)
    ax.set_ylabel("weighted throughput [bits]")
    if spec.axis is Axis.BLER_EPS:
        ax.set_xscale("log")
    ax.grid(True, alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()

    image = out / f"sweep_{spec.axis.value}.svg"
    _atomic_write(image, lambda p: fig.savefig(p, format="svg", metadata={"Date": None}))
    plt.close(fig)

    sibling = out / f"sweep_{spec.axis.value}.csv"
    _atomic_write(sibling, lambda p: write_aggregate_csv(sweep_result, p))
    return [image, sibling]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_validate(args) -> int:
    raw = _load_raw(args)
    cfg, ga, solver, _ = parse_config_dict(raw)
    messages = _validate_all(cfg, ga, solver)
    for m in messages:
        print(m)
    if any(m.startswith("violation") for m in messages):
        return 1
    print("configuration is valid")
    return 0


def _cmd_run(args) -> int:
    raw = _load_raw(args)
    cfg, ga, solver, exp = parse_config_dict(raw)
    _require_valid(cfg, ga, solver)
    scheme, deployment, regime = _experiment_single(exp)
    out = Path(args.out)
    seed = cfg.rng_seed
    result = run_trial(cfg, ga, solver, scheme, deployment, regime, seed)

    def write_result(path: Path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["user", "bits", "raw_bits", "weight", "min_bits"])
            for k in range(cfg.n_users):
                writer.writerow(
                    [
                        k,
                        _fmt(float(result.per_user_bits[k])),
                        _fmt(float(result.raw_per_user_bits[k])),
                        _fmt(float(cfg.weights[k])),
                        _fmt(float(cfg.min_bits[k])),
                    ]
                )

    _atomic_write(out / "result.csv", write_result)
    _atomic_write(
        out / "manifest.json",
        lambda p: write_manifest(raw, __version__, p, extra={"command": "run", "seed": seed}),
    )
    print(
        f"run: scheme={scheme.value} deployment={deployment.value} regime={regime.value} "
        f"wtp={_fmt(result.weighted_throughput)} feasible={result.feasible}"
    )
    return 0


def _cmd_sweep(args) -> int:
    raw = _load_raw(args)
    cfg, ga, solver, exp = parse_config_dict(raw)
    _require_valid(cfg, ga, solver)
    spec = _experiment_sweep(exp)
    result = run_sweep(spec, cfg, ga, solver, n_jobs=args.jobs)
    out = Path(args.out)
    _atomic_write(out / "trials.csv", lambda p: write_trials_csv(result, p))
    _atomic_write(out / "aggregate.csv", lambda p: write_aggregate_csv(result, p))
    _atomic_write(
        out / "manifest.json",
        lambda p: write_manifest(raw, __version__, p, extra={"command": "sweep"}),
    )
    emit_figures(result, out)
    for key, stats in result.cells.items():
        print(
            f"cell {AXIS_LABELS[spec.axis]}={key.value} scheme={key.scheme.value} "
            f"deployment={key.deployment.value} regime={key.regime.value}: "
            f"mean_wtp={_fmt(stats.mean_wtp)} service_rate={_fmt(stats.service_rate)}"
        )
    return 0


def _cmd_converge(args) -> int:
    raw = _load_raw(args)
    cfg, ga, solver, exp = parse_config_dict(raw)
    _require_valid(cfg, ga, solver)
    scheme, deployment, regime = _experiment_single(exp)
    bundle = convergence_report(cfg, ga, solver, scheme, deployment, regime, cfg.rng_seed)
    out = Path(args.out)

    def write_trace(name, values):
        def impl(path: Path):
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["iteration", name])
                for i, v in enumerate(values):
                    writer.writerow([i, _fmt(float(v))])

        return impl

    _atomic_write(out / "sca_trace.csv", write_trace("objective", bundle.sca_trace))
    _atomic_write(out / "ga_trace.csv", write_trace("best_fitness", bundle.ga_trace))
    _atomic_write(
        out / "manifest.json",
        lambda p: write_manifest(raw, __version__, p, extra={"command": "converge"}),
    )
    print(f"converge: {len(bundle.sca_trace)} inner iterations, {len(bundle.ga_trace)} generations")
    return 0


def _cmd_oracle_check(args) -> int:
    raw = _load_raw(args)
    cfg, ga, solver, exp = parse_config_dict(raw)
    _require_valid(cfg, ga, solver)
    if cfg.n_users * cfg.n_slots * cfg.n_subcarriers > 16:
        raise ConfigError("oracle-check requires K*T*F <= 16")
    _, _, regime = _experiment_single(exp)
    schemes = [Scheme(s) for s in exp.get("schemes", ["su", "fu", "mu"])]
    deployment = _parse_enum(Deployment, exp.get("deployment"), Deployment.CELL_FREE)
    topology = generate_topology(cfg, deployment)
    ch = generate_channels(topology, cfg)
    all_ok = True
    for scheme in schemes:
        _, oracle_value = exhaustive_oracle(ch, cfg, solver, scheme, regime, Evaluator.MMSE)
        _, _, _, trace = usbda(ch, cfg, ga, solver, scheme, regime, evaluator=Evaluator.MMSE)
        ga_value = trace.best_fitness_per_generation[-1]
        ok = ga_value <= oracle_value + 1e-9 and ga_value >= oracle_value - 1e-9 * max(1.0, abs(oracle_value))
        all_ok &= ok
        print(
            f"oracle-check scheme={scheme.value}: {'PASS' if ok else 'FAIL'} "
            f"(ga={_fmt(float(ga_value))}, oracle={_fmt(float(oracle_value))})"
        )
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellfree-ra",
        description="Resource allocation and Monte Carlo simulation for cell-free downlinks",
    )
    parser.add_argument("--version", action="version", version=f"cellfree-ra {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("run", "run a single seeded trial"),
        ("sweep", "run a Monte Carlo sweep and emit CSV plus figures"),
        ("converge", "record inner and outer convergence traces for one trial"),
        ("oracle-check", "compare the GA against exhaustive enumeration on a tiny instance"),
        ("validate", "parse and validate a configuration"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="JSON configuration file")
        p.add_argument("--preset", type=str, default=None, help=f"named preset ({', '.join(sorted(PRESETS))})")
        p.add_argument("--out", type=str, default="out", help="output directory")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a config entry, e.g. --set system.snr_db=30 (repeatable)",
        )
        p.add_argument("--seed", type=int, default=None, help="override system.rng_seed")
        p.add_argument("--trials", type=int, default=None, help="override experiment.n_trials")
        p.add_argument("--jobs", type=int, default=None, help="parallel workers for sweep trials")
    return parser


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "converge": _cmd_converge,
    "oracle-check": _cmd_oracle_check,
    "validate": _cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
