"""Experiment orchestration: configuration files, symbol-error-rate Monte
Carlo, parameter sweeps, and reproducible result persistence.

Configs are TOML; results are CSV plus a JSON manifest holding the full
resolved config, seed, and version stamps. Re-running a manifest reproduces
every CSV byte for byte.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .chem import ReactionNetwork, make_ligand_receptor_network, parse_reaction, species_list
from .demod import estimate_moments, integrate_filter, required_moments
from .filtergen import generate_filter_spec
from .rdme import (
    Absorbing,
    CtmpSystem,
    Reflecting,
    TransmitterModel,
    VoxelGrid,
    build_system,
    observe,
    simulate,
)

# Seed layout: moment-estimation runs and evaluation trials draw from
# disjoint ranges derived from the base seed; sweep points shift the base.
MOMENT_SEED_BLOCK = 1_000_000
EVAL_SEED_OFFSET = 777_000_000
SWEEP_SEED_STRIDE = 10_000_000_000


class ConfigError(ValueError):
    """Configuration file is missing keys or holds inconsistent values."""


def _require(raw: Mapping[str, Any], dotted: str) -> Any:
    node: Any = raw
    for part in dotted.split("."):
        if not isinstance(node, Mapping) or part not in node:
            raise ConfigError(f'missing key "{dotted}"')
        node = node[part]
    return node


def _optional(raw: Mapping[str, Any], dotted: str, default: Any) -> Any:
    try:
        return _require(raw, dotted)
    except ConfigError:
        return default


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description plus the raw config mapping."""

    raw: dict[str, Any]

    dims: tuple[int, int, int] = field(init=False)
    voxel_edge: float = field(init=False)
    diffusion_coeff: float = field(init=False)
    boundary: Reflecting | Absorbing = field(init=False)
    tx_position: tuple[int, int, int] = field(init=False)
    emission_rates: tuple[float, ...] = field(init=False)
    rx_position: tuple[int, int, int] = field(init=False)
    receptor_count: int = field(init=False)
    receptor_species: str = field(init=False)
    measurement_choices: tuple[tuple[str, ...], ...] = field(init=False)
    horizon: float = field(init=False)
    decision_time: float = field(init=False)
    n_trials: int = field(init=False)
    n_moment_runs: int = field(init=False)
    moment_grid_points: int = field(init=False)
    base_seed: int = field(init=False)
    output_dir: str | None = field(init=False)

    def __post_init__(self) -> None:
        raw = self.raw
        self.dims = tuple(int(x) for x in _require(raw, "grid.dims"))
        if len(self.dims) != 3:
            raise ConfigError('"grid.dims" must be three integers')
        self.voxel_edge = float(_require(raw, "grid.voxel_edge_um"))
        self.diffusion_coeff = float(_require(raw, "grid.diffusion_um2_per_s"))
        kind = str(_require(raw, "grid.boundary")).lower()
        if kind == "reflecting":
            self.boundary = Reflecting()
        elif kind == "absorbing":
            escape = _optional(raw, "grid.escape_rate", None)
            self.boundary = Absorbing(None if escape is None else float(escape))
        else:
            raise ConfigError(f'"grid.boundary" must be reflecting or absorbing, got {kind!r}')
        self.tx_position = tuple(int(x) for x in _require(raw, "transmitter.voxel"))
        self.emission_rates = tuple(float(x) for x in _require(raw, "transmitter.emission_rates"))
        if len(set(self.emission_rates)) != len(self.emission_rates):
            raise ConfigError("symbol emission rates must be distinct")
        self.rx_position = tuple(int(x) for x in _require(raw, "receiver.voxel"))
        self.receptor_count = int(_require(raw, "receiver.M"))
        self.receptor_species = str(_optional(raw, "receiver.receptor_species", "E"))
        choices = _require(raw, "measurement.choices")
        if not choices:
            raise ConfigError('"measurement.choices" must be nonempty')
        self.measurement_choices = tuple(tuple(str(s) for s in choice) for choice in choices)
        self.horizon = float(_optional(raw, "run.horizon_s", 1.0))
        self.decision_time = float(_optional(raw, "run.decision_time_s", self.horizon))
        self.n_trials = int(_require(raw, "run.n_trials"))
        if self.n_trials < 1:
            raise ConfigError('"run.n_trials" must be >= 1')
        self.n_moment_runs = int(_optional(raw, "run.n_moment_runs", 500))
        self.moment_grid_points = int(_optional(raw, "run.moment_grid_points", 101))
        self.base_seed = int(_require(raw, "run.base_seed"))
        self.output_dir = _optional(raw, "run.output_dir", None)
        network = self.build_network()
        for choice in self.measurement_choices:
            for name in choice:
                if name not in network.species_names:
                    raise ConfigError(f"measured species {name!r} not in receiver network")

    def build_network(self) -> ReactionNetwork:
        raw = self.raw
        if "n_sites" in raw.get("receiver", {}):
            n_sites = int(_require(raw, "receiver.n_sites"))
            lambdas = [float(x) for x in _require(raw, "receiver.lambdas")]
            mus = [float(x) for x in _require(raw, "receiver.mus")]
            return make_ligand_receptor_network(n_sites, lambdas, mus)
        names = [str(s) for s in _require(raw, "receiver.species")]
        reactions = tuple(
            parse_reaction(str(line), name=f"r{i}")
            for i, line in enumerate(_require(raw, "receiver.reactions"))
        )
        return ReactionNetwork(species_list(names), reactions)

    def build_grid(self) -> VoxelGrid:
        return VoxelGrid(
            self.dims,
            self.voxel_edge,
            {"S": self.diffusion_coeff},
            self.boundary,
        )

    def build_system(self) -> CtmpSystem:
        grid = self.build_grid()
        tx = TransmitterModel(grid.flat_from_position(self.tx_position), self.emission_rates)
        return build_system(
            grid,
            tx,
            self.build_network(),
            grid.flat_from_position(self.rx_position),
            self.receptor_count,
            receptor_species=self.receptor_species,
        )

    def with_override(self, dotted: str, value: Any) -> "ExperimentConfig":
        """Copy of the config with one (possibly list-indexed) field replaced."""
        raw = copy.deepcopy(self.raw)
        parts = dotted.split(".")
        node: Any = raw
        for i, part in enumerate(parts[:-1]):
            key: Any = int(part) if part.lstrip("-").isdigit() else part
            try:
                node = node[key]
            except (KeyError, IndexError, TypeError):
                raise ConfigError(f'sweep path "{dotted}" not in config (at {part!r})') from None
        last = parts[-1]
        key = int(last) if last.lstrip("-").isdigit() else last
        try:
            node[key]
        except (KeyError, IndexError, TypeError):
            raise ConfigError(f'sweep path "{dotted}" not in config (at {last!r})') from None
        node[key] = value
        return ExperimentConfig(raw)

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True, default=str).encode()
        ).hexdigest()


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as handle:
        raw = tomllib.load(handle)
    return ExperimentConfig(raw)


def wilson_interval(errors: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    p = errors / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return float(max(center - half, 0.0)), float(min(center + half, 1.0))


@dataclass
class ChoiceResult:
    """SER of one measurement choice over the shared trial set.

    `wrong` keeps the per-trial error indicator so paired comparisons across
    choices (run on the same trajectories) stay possible; it is not persisted.
    """

    measured: tuple[str, ...]
    trials: int
    errors: int
    confusion: dict[tuple[int, int], int]  # (sent, decided) -> count
    wrong: np.ndarray | None = None

    @property
    def ser(self) -> float:
        return self.errors / self.trials

    @property
    def interval(self) -> tuple[float, float]:
        return wilson_interval(self.errors, self.trials)


@dataclass
class SerResult:
    per_choice: list[ChoiceResult]
    n_trials: int
    base_seed: int
    config_hash: str
    runtime_s: float

    def choice(self, measured: Sequence[str]) -> ChoiceResult:
        key = tuple(measured)
        for entry in self.per_choice:
            if entry.measured == key:
                return entry
        raise KeyError(f"no result for measurement choice {key}")


def _moment_tables(config: ExperimentConfig, system: CtmpSystem, specs, base_seed: int):
    needed = set()
    for spec in specs:
        needed |= required_moments(spec)
    grid = np.linspace(0.0, config.horizon, config.moment_grid_points)
    tables = {}
    for symbol in range(len(config.emission_rates)):
        seed = base_seed + MOMENT_SEED_BLOCK * (symbol + 1)
        tables[symbol] = estimate_moments(
            system, symbol, needed, config.n_moment_runs, grid, seed
        )
    return tables


def run_ser(config: ExperimentConfig, base_seed: int | None = None) -> SerResult:
    """Two-phase SER estimate: estimate moment tables per symbol, then run
    uniformly drawn symbols through simulate/observe/demodulate and count
    decision errors per measurement choice. Fully determined by the seed."""
    start = time.perf_counter()
    seed = config.base_seed if base_seed is None else base_seed
    system = config.build_system()
    network = config.build_network()
    specs = [generate_filter_spec(network, choice) for choice in config.measurement_choices]
    tables = _moment_tables(config, system, specs, seed)

    n_symbols = len(config.emission_rates)
    symbol_rng = np.random.default_rng(seed)
    counters = [
        ChoiceResult(choice, 0, 0, {}, np.zeros(config.n_trials, dtype=bool))
        for choice in config.measurement_choices
    ]
    for trial in range(config.n_trials):
        sent = int(symbol_rng.integers(n_symbols))
        traj = simulate(system, sent, config.horizon, seed + EVAL_SEED_OFFSET + trial)
        for spec, counter in zip(specs, counters):
            history = observe(traj, spec.measured)
            decision = integrate_filter(spec, tables, history, config.decision_time)
            counter.trials += 1
            key = (sent, decision.symbol)
            counter.confusion[key] = counter.confusion.get(key, 0) + 1
            if decision.symbol != sent:
                counter.errors += 1
                assert counter.wrong is not None
                counter.wrong[trial] = True
    return SerResult(
        counters, config.n_trials, seed, config.hash(), time.perf_counter() - start
    )


def run_sweep(
    config: ExperimentConfig, param_path: str, values: Sequence[Any]
) -> list[tuple[Any, SerResult]]:
    """One SER run per parameter value; value k is run at the shared base
    seed plus k times a fixed stride, so a single-value sweep reproduces
    `run_ser` exactly."""
    results = []
    for idx, value in enumerate(values):
        swept = config.with_override(param_path, value)
        seed = config.base_seed + SWEEP_SEED_STRIDE * idx
        results.append((value, run_ser(swept, base_seed=seed)))
    return results


# -- persistence -------------------------------------------------------------


def ser_csv(result: SerResult, n_symbols: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    confusion_cols = [
        f"sent{s}_decided{d}" for s in range(n_symbols) for d in range(n_symbols)
    ]
    writer.writerow(["measured", "trials", "errors", "ser", "ci_low", "ci_high"] + confusion_cols)
    for entry in result.per_choice:
        lo, hi = entry.interval
        row = [
            "+".join(entry.measured),
            entry.trials,
            entry.errors,
            repr(entry.ser),
            repr(lo),
            repr(hi),
        ]
        row += [
            entry.confusion.get((s, d), 0)
            for s in range(n_symbols)
            for d in range(n_symbols)
        ]
        writer.writerow(row)
    return buf.getvalue()


def sweep_csv(
    param_path: str, results: Sequence[tuple[Any, SerResult]], n_symbols: int
) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["param", "value", "measured", "trials", "errors", "ser", "ci_low", "ci_high"]
    )
    for value, result in results:
        for entry in result.per_choice:
            lo, hi = entry.interval
            writer.writerow(
                [
                    param_path,
                    repr(float(value)) if isinstance(value, float) else value,
                    "+".join(entry.measured),
                    entry.trials,
                    entry.errors,
                    repr(entry.ser),
                    repr(lo),
                    repr(hi),
                ]
            )
    return buf.getvalue()


def build_manifest(
    config: ExperimentConfig,
    command: str,
    base_seed: int,
    sweep: dict[str, Any] | None = None,
) -> dict[str, Any]:
    return {
        "command": command,
        "config": config.raw,
        "config_sha256": config.hash(),
        "base_seed": base_seed,
        "sweep": sweep,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "rskdemod": __version__,
        },
    }


def persist_results(
    config: ExperimentConfig,
    outputs: Mapping[str, str],
    manifest: Mapping[str, Any],
    out_dir: str | Path,
) -> dict[str, Path]:
    """Write CSV outputs plus manifest.json under out_dir; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    for name, text in outputs.items():
        path = out / name
        path.write_text(text)
        written[name] = path
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written["manifest.json"] = manifest_path
    return written


def run_from_manifest(manifest: Mapping[str, Any]) -> dict[str, str]:
    """Re-run the experiment a manifest describes; returns CSV name -> text.

    With an unchanged environment the outputs are byte-identical to the
    originals.
    """
    config = ExperimentConfig(copy.deepcopy(dict(manifest["config"])))
    seed = int(manifest["base_seed"])
    n_symbols = len(config.emission_rates)
    command = manifest.get("command", "ser")
    if command == "ser":
        result = run_ser(config, base_seed=seed)
        return {"ser.csv": ser_csv(result, n_symbols)}
    if command == "sweep":
        sweep = manifest.get("sweep") or {}
        results = run_sweep(config, str(sweep["param"]), list(sweep["values"]))
        return {"sweep.csv": sweep_csv(str(sweep["param"]), results, n_symbols)}
    raise ConfigError(f"manifest command {command!r} not recognized")


def load_manifest(path: str | Path) -> dict[str, Any]:
    with open(path) as handle:
        return json.load(handle)
