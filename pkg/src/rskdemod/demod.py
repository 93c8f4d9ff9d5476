"""Moment estimation and the parallel log-posterior demodulation filters.

The exact conditional moments of the unmeasured counts would themselves
require a filtering solution, so the demodulator substitutes the
symbol-conditioned, history-free means estimated by Monte Carlo: matched
filter style prior knowledge. Each candidate symbol then gets a running
statistic Z_s built from the observed event history: a log of the summed
matching channel rates at every observed event, minus the time integral of
the total event rate. The decided symbol maximizes Z_s.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .chem import NetworkError
from .filtergen import FilterSpec, MomentDescriptor
from .rdme import CtmpSystem, ObservedHistory, sample_counts


class ModelMismatchError(ValueError):
    """An observed event's delta matches no filter channel."""


@dataclass(frozen=True)
class MomentTable:
    """Monte-Carlo estimate of one unmeasured-count monomial mean over time,
    conditioned on the transmitted symbol."""

    symbol: int
    descriptor: MomentDescriptor
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    n_runs: int

    def __post_init__(self) -> None:
        if len(self.times) != len(self.values) or len(self.times) != len(self.stderr):
            raise NetworkError("moment table arrays must share a length")
        if len(self.times) < 2:
            raise NetworkError("moment table needs at least two grid points")
        if np.any(np.diff(self.times) <= 0):
            raise NetworkError("moment grid must be strictly increasing")
        if np.any(self.values < 0):
            raise NetworkError("moment values must be >= 0")

    def at(self, t: float | np.ndarray) -> np.ndarray:
        """Linear interpolation, clamped to the edge values outside the grid."""
        return np.interp(t, self.times, self.values)


def required_moments(spec: FilterSpec) -> set[MomentDescriptor]:
    """Deduplicated non-constant moment descriptors the spec's channels need."""
    return spec.moment_descriptors()


def estimate_moments(
    system: CtmpSystem,
    symbol: int,
    descriptors: Iterable[MomentDescriptor],
    n_runs: int,
    grid_times: Sequence[float],
    base_seed: int,
) -> dict[MomentDescriptor, MomentTable]:
    """Sample means of the requested monomials at the receiver voxel.

    Runs `n_runs` independent realizations (seeds base_seed .. base_seed +
    n_runs - 1), samples the receiver-voxel counts at the grid times, and
    averages each descriptor's monomial across runs.
    """
    if n_runs < 2:
        raise NetworkError(f"need at least 2 runs for a standard error, got {n_runs}")
    grid = np.asarray(grid_times, dtype=np.float64)
    descriptors = list(descriptors)
    horizon = float(grid[-1])
    counts = np.empty((n_runs, len(grid), system.n_species), dtype=np.float64)
    for r in range(n_runs):
        counts[r] = sample_counts(system, symbol, horizon, base_seed + r, grid, system.rx_voxel)
    sp_index = {name: i for i, name in enumerate(system.species_names)}
    tables: dict[MomentDescriptor, MomentTable] = {}
    for desc in descriptors:
        vals = np.ones((n_runs, len(grid)), dtype=np.float64)
        for name, exp in desc.exponents:
            vals *= counts[:, :, sp_index[name]] ** exp
        mean = vals.mean(axis=0)
        stderr = vals.std(axis=0, ddof=1) / np.sqrt(n_runs)
        tables[desc] = MomentTable(symbol, desc, grid, mean, stderr, n_runs)
    return tables


@dataclass
class DemodState:
    """Running filter outputs: one log-posterior statistic per symbol."""

    z: dict[int, float]
    time: float
    floor_hits: int = 0


@dataclass(frozen=True)
class Decision:
    """MAP decision: the symbol whose filter output is largest (ties go to
    the lowest symbol index). exp(z) is proportional to the posterior."""

    symbol: int
    z: dict[int, float]
    time: float
    floor_hits: int = 0


def decide(state: DemodState) -> Decision:
    symbols = sorted(state.z)
    if not symbols:
        raise NetworkError("no filter outputs to decide over")
    best = symbols[0]
    for s in symbols[1:]:
        if state.z[s] > state.z[best]:
            best = s
    return Decision(best, dict(state.z), state.time, state.floor_hits)


def _union_grid(moment_times: np.ndarray, event_times: np.ndarray, t_d: float) -> np.ndarray:
    pts = np.concatenate([moment_times[moment_times <= t_d], event_times, [0.0, t_d]])
    return np.unique(pts)


class _SpecEvaluator:
    """Per-history evaluation grid shared by every symbol's filter."""

    def __init__(self, spec: FilterSpec, history: ObservedHistory, t_d: float, moment_times: np.ndarray):
        hist = history.truncated(t_d)
        if tuple(hist.measured) != tuple(spec.measured):
            raise NetworkError(
                f"history measures {hist.measured}, spec expects {spec.measured}"
            )
        self.spec = spec
        self.t_d = float(t_d)
        self.event_times = hist.times
        self.event_deltas = hist.deltas
        self.grid = _union_grid(moment_times, hist.times, t_d)
        # Measured counts on each inter-point segment (left-closed): segment k
        # spans [grid[k], grid[k+1]) and the counts there are the counts right
        # after the last event at or before grid[k].
        n_ev_before = np.searchsorted(hist.times, self.grid[:-1], side="right")
        cum = np.vstack([hist.initial, hist.initial + np.cumsum(hist.deltas, axis=0)])
        self.segment_counts = cum[n_ev_before].astype(np.float64)
        self.segment_widths = np.diff(self.grid)
        # Counts just before each event, for the jump terms.
        ev_idx = np.arange(len(hist.times))
        self.pre_event_counts = cum[ev_idx].astype(np.float64)
        self.name_col = {name: j for j, name in enumerate(spec.measured)}
        self.delta_groups = spec.channels_by_delta()
        self.delta_keys = {delta: ids for delta, ids in self.delta_groups.items()}
        # Monomial of each channel on segments and at event left-limits.
        self.channel_monomial_seg = []
        self.channel_monomial_pre = []
        for ch in spec.channels:
            seg = np.ones(len(self.segment_widths), dtype=np.float64)
            pre = np.ones(len(hist.times), dtype=np.float64)
            for name, exp in ch.observed_monomial:
                seg *= self.segment_counts[:, self.name_col[name]] ** exp
                pre *= self.pre_event_counts[:, self.name_col[name]] ** exp
            self.channel_monomial_seg.append(seg)
            self.channel_monomial_pre.append(pre)

    def z_for_symbol(
        self,
        tables: Mapping[MomentDescriptor, MomentTable],
        rate_floor: float,
        include_constant_drift: bool,
        trace: bool = False,
    ) -> tuple[float, int, np.ndarray | None]:
        spec = self.spec
        grid = self.grid
        mid_widths = self.segment_widths
        # Moment value of each channel at every grid point (linear interp).
        moment_grid = np.empty((spec.n_channels, len(grid)), dtype=np.float64)
        moment_at_events = np.empty((spec.n_channels, len(self.event_times)), dtype=np.float64)
        for i, ch in enumerate(spec.channels):
            if ch.moment.is_constant:
                moment_grid[i] = 1.0
                moment_at_events[i] = 1.0
            else:
                try:
                    table = tables[ch.moment]
                except KeyError:
                    raise NetworkError(
                        f"no moment table for descriptor {ch.moment.label()}"
                    ) from None
                moment_grid[i] = table.at(grid)
                moment_at_events[i] = table.at(self.event_times)

        # Drift: integral of the total rate of history-visible channels.
        # On each segment the measured monomial is constant and the moment is
        # piecewise linear, so per-segment trapezoids are exact.
        drift_increments = np.zeros(len(mid_widths), dtype=np.float64)
        for i, ch in enumerate(spec.channels):
            if ch.is_silent:
                continue  # invisible events cancel against the no-change term
            if not include_constant_drift and ch.moment.is_constant:
                continue
            seg_moment = 0.5 * (moment_grid[i, :-1] + moment_grid[i, 1:])
            drift_increments += (
                ch.rate_constant * self.channel_monomial_seg[i] * seg_moment * mid_widths
            )

        # Jumps: at each observed event, log of the summed matching rates
        # evaluated just before the event.
        floor_hits = 0
        jump_values = np.zeros(len(self.event_times), dtype=np.float64)
        for j in range(len(self.event_times)):
            delta_key = tuple(
                (name, int(d))
                for name, d in zip(spec.measured, self.event_deltas[j])
                if d != 0
            )
            ids = self.delta_groups.get(tuple(sorted(delta_key)))
            if ids is None:
                raise ModelMismatchError(
                    f"observed delta {dict(delta_key)} at t={self.event_times[j]:.6g} "
                    f"matches no filter channel"
                )
            rate = 0.0
            for i in ids:
                rate += (
                    spec.channels[i].rate_constant
                    * self.channel_monomial_pre[i][j]
                    * moment_at_events[i, j]
                )
            if rate < rate_floor:
                rate = rate_floor
                floor_hits += 1
            jump_values[j] = np.log(rate)

        if not trace:
            z = float(jump_values.sum() - drift_increments.sum())
            return z, floor_hits, None
        # Z at every grid point: cumulative drift plus jumps applied at and
        # after each event time.
        z_path = np.concatenate([[0.0], -np.cumsum(drift_increments)])
        for j, te in enumerate(self.event_times):
            z_path[np.searchsorted(grid, te):] += jump_values[j]
        return float(z_path[-1]), floor_hits, z_path


def _moment_grid_times(tables: Mapping[int, Mapping[MomentDescriptor, MomentTable]]) -> np.ndarray:
    for per_symbol in tables.values():
        for table in per_symbol.values():
            return table.times
    return np.array([0.0])


def integrate_filter(
    spec: FilterSpec,
    tables: Mapping[int, Mapping[MomentDescriptor, MomentTable]],
    history: ObservedHistory,
    t_d: float,
    rate_floor: float = 1e-12,
    include_constant_drift: bool = True,
) -> Decision:
    """Run the K parallel filters on one observed history and decide at t_d.

    `tables` maps each candidate symbol to its moment tables (covering every
    descriptor the spec needs). Channel rates are clamped below at
    `rate_floor` before the log; clamp occurrences are counted on the
    decision. Setting `include_constant_drift=False` drops drift terms whose
    rate carries no moment factor; those are identical across symbols, so
    decisions are unchanged.
    """
    if not t_d > 0:
        raise NetworkError(f"decision time must be positive, got {t_d}")
    if not tables:
        raise NetworkError("need moment tables for at least one symbol")
    evaluator = _SpecEvaluator(spec, history, t_d, _moment_grid_times(tables))
    z: dict[int, float] = {}
    floor_hits = 0
    for symbol in sorted(tables):
        z_s, hits, _ = evaluator.z_for_symbol(
            tables[symbol], rate_floor, include_constant_drift
        )
        z[symbol] = z_s
        floor_hits += hits
    return decide(DemodState(z, float(t_d), floor_hits))


def z_trace(
    spec: FilterSpec,
    tables: Mapping[int, Mapping[MomentDescriptor, MomentTable]],
    history: ObservedHistory,
    t_d: float,
    rate_floor: float = 1e-12,
    include_constant_drift: bool = True,
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Filter outputs over time for plotting: (times, {symbol: Z path})."""
    evaluator = _SpecEvaluator(spec, history, t_d, _moment_grid_times(tables))
    paths: dict[int, np.ndarray] = {}
    for symbol in sorted(tables):
        _, _, path = evaluator.z_for_symbol(
            tables[symbol], rate_floor, include_constant_drift, trace=True
        )
        assert path is not None
        paths[symbol] = path
    return evaluator.grid, paths


def z_trace_csv(times: np.ndarray, paths: Mapping[int, np.ndarray]) -> str:
    """CSV export of a filter trace: time column plus one Z column per symbol."""
    symbols = sorted(paths)
    lines = ["time," + ",".join(f"Z_{s}" for s in symbols)]
    for k, t in enumerate(times):
        lines.append(",".join([repr(float(t))] + [repr(float(paths[s][k])) for s in symbols]))
    return "\n".join(lines) + "\n"
