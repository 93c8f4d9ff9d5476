"""Command-line entry points: simulate, filtergen, moments, ser, sweep, verify."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .chem import make_ligand_receptor_network
from .demod import estimate_moments, required_moments
from .filtergen import generate_filter_spec, render_text, spec_to_dict
from .harness import (
    build_manifest,
    load_config,
    load_manifest,
    persist_results,
    run_from_manifest,
    run_ser,
    run_sweep,
    ser_csv,
    sweep_csv,
)
from .oracle import brute_force_filter_check, empirical_vs_exact
from .rdme import (
    Reflecting,
    TransmitterModel,
    VoxelGrid,
    build_system,
    observe,
    simulate,
)


def _parse_measure(value: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in value.split(",") if s.strip())


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config (TOML)")
    parser.add_argument("--seed", type=int, default=None, help="override run.base_seed")
    parser.add_argument("--out", default=None, help="output directory")


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    system = config.build_system()
    seed = config.base_seed if args.seed is None else args.seed
    traj = simulate(system, args.symbol, config.horizon, seed)
    out = Path(args.out or config.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectory.txt").write_text(traj.to_text())
    measured = _parse_measure(args.measure) if args.measure else config.measurement_choices[0]
    history = observe(traj, measured)
    (out / "observed.csv").write_text(history.to_csv())
    print(f"{traj.n_events} events, {history.n_events} observed; wrote {out}/trajectory.txt")
    return 0


def cmd_filtergen(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    network = config.build_network()
    choices = (
        [_parse_measure(args.measure)] if args.measure else list(config.measurement_choices)
    )
    payload = []
    for choice in choices:
        spec = generate_filter_spec(network, choice)
        sys.stdout.write(render_text(spec) + "\n")
        payload.append(spec_to_dict(spec))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "filter_spec.json").write_text(json.dumps(payload, indent=2) + "\n")
        print(f"wrote {out}/filter_spec.json")
    return 0


def cmd_moments(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    seed = config.base_seed if args.seed is None else args.seed
    system = config.build_system()
    network = config.build_network()
    needed = set()
    for choice in config.measurement_choices:
        needed |= required_moments(generate_filter_spec(network, choice))
    grid = np.linspace(0.0, config.horizon, config.moment_grid_points)
    lines = ["symbol,descriptor,time,value,stderr,n_runs"]
    for symbol in range(len(config.emission_rates)):
        tables = estimate_moments(
            system, symbol, needed, config.n_moment_runs, grid, seed + 1_000_000 * (symbol + 1)
        )
        for desc in sorted(tables, key=lambda d: d.label()):
            table = tables[desc]
            for t, v, se in zip(table.times, table.values, table.stderr):
                lines.append(
                    f"{symbol},{desc.label()},{float(t)!r},{float(v)!r},{float(se)!r},{table.n_runs}"
                )
    out = Path(args.out or config.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "moments.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out}/moments.csv")
    return 0


def cmd_ser(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.trials is not None:
        config = config.with_override("run.n_trials", args.trials)
    if args.measure:
        config = config.with_override(
            "measurement.choices", [list(_parse_measure(args.measure))]
        )
    seed = config.base_seed if args.seed is None else args.seed
    result = run_ser(config, base_seed=seed)
    n_symbols = len(config.emission_rates)
    text = ser_csv(result, n_symbols)
    sys.stdout.write(text)
    if args.out or config.output_dir:
        manifest = build_manifest(config, "ser", seed)
        persist_results(config, {"ser.csv": text}, manifest, args.out or config.output_dir)
        print(f"wrote {args.out or config.output_dir}/ser.csv")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.trials is not None:
        config = config.with_override("run.n_trials", args.trials)
    if args.seed is not None:
        config = config.with_override("run.base_seed", args.seed)
    values = [float(v) for v in args.values.split(",")]
    results = run_sweep(config, args.param, values)
    n_symbols = len(config.emission_rates)
    text = sweep_csv(args.param, results, n_symbols)
    sys.stdout.write(text)
    if args.out or config.output_dir:
        manifest = build_manifest(
            config, "sweep", config.base_seed, sweep={"param": args.param, "values": values}
        )
        persist_results(config, {"sweep.csv": text}, manifest, args.out or config.output_dir)
        print(f"wrote {args.out or config.output_dir}/sweep.csv")
    return 0


def cmd_rerun(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    outputs = run_from_manifest(manifest)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    for name, text in outputs.items():
        (out / name).write_text(text)
        print(f"wrote {out}/{name}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    """Reduced oracle suite: simulator vs exact transient, filter terms vs
    brute-force conditional frequencies."""
    failures = 0

    grid = VoxelGrid((1, 1, 1), 1.0, {"S": 0.0}, Reflecting())
    tx = TransmitterModel(0, (5.0,))
    network = make_ligand_receptor_network(2, (1.0, 1.0), (1.0, 1.0))
    system = build_system(grid, tx, network, 0, 2)

    tv = empirical_vs_exact(system, 1.0, args.runs, seed=args.seed, caps={"S": 25})
    ok = tv <= 0.05
    failures += 0 if ok else 1
    print(f"uniformization vs SSA: TV={tv:.4f} ({'PASS' if ok else 'FAIL'} at 0.05, {args.runs} runs)")

    tx3 = TransmitterModel(0, (15.0,))
    network3 = make_ligand_receptor_network(2, (1.0, 1.0), (0.7, 0.7))
    system3 = build_system(grid, tx3, network3, 0, 3)
    spec = generate_filter_spec(network3, ("C1", "C2"))
    checks = brute_force_filter_check(
        system3, spec, 0, t=0.5, dt=[0.01], n_runs=args.runs, seed=args.seed + 1, min_bin=50
    )
    check = checks[0]
    ok = check.max_z <= 3.5
    failures += 0 if ok else 1
    print(check.to_text())
    print(f"filter-term check: max |z|={check.max_z:.2f} ({'PASS' if ok else 'FAIL'} at 3.5)")
    return 1 if failures else 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="rskdemod",
        description="Simulate and demodulate reaction-shift-keyed molecular links.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one trajectory and export it")
    _add_common(p)
    p.add_argument("--symbol", type=int, default=0)
    p.add_argument("--measure", default=None, help="comma-separated species list")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("filtergen", help="generate filter terms for a measurement choice")
    _add_common(p)
    p.add_argument("--measure", default=None, help="comma-separated species list")
    p.set_defaults(func=cmd_filtergen)

    p = sub.add_parser("moments", help="estimate conditional moment tables")
    _add_common(p)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("ser", help="Monte-Carlo symbol error rate")
    _add_common(p)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--measure", default=None, help="restrict to one comma-separated choice")
    p.set_defaults(func=cmd_ser)

    p = sub.add_parser("sweep", help="SER over a swept config parameter")
    _add_common(p)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--param", required=True, help='dotted config path, e.g. "receiver.lambdas.1"')
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("rerun", help="re-run a persisted manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rerun)

    p = sub.add_parser("verify", help="reduced oracle verification suite")
    p.add_argument("--runs", type=int, default=5000)
    p.add_argument("--seed", type=int, default=20240)
    p.set_defaults(func=cmd_verify)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
