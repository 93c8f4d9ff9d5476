"""Independent verification engines for the simulator and the filter
generator: exact transient distributions of small systems via
uniformization, and brute-force conditional-probability estimates that
check generated filter terms against direct trajectory frequencies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .chem import NetworkError
from .filtergen import FilterSpec
from .rdme import CtmpSystem, observe, simulate


class StateSpaceError(RuntimeError):
    """State enumeration exceeded its size bound."""


class EmptyBinError(RuntimeError):
    """No observed-history bin was large enough to condition on."""


MAX_STATES = 100_000


@dataclass
class StateSpace:
    """Enumerated reachable states of a capped system, as count tuples."""

    states: list[tuple[int, ...]]
    index: dict[tuple[int, ...], int]
    caps: dict[str, int]

    @property
    def n_states(self) -> int:
        return len(self.states)


def _cap_vector(system: CtmpSystem, caps: Mapping[str, int]) -> np.ndarray:
    cap = np.full(system.n_voxels * system.n_species, np.inf)
    for name, bound in caps.items():
        if name not in system.species_names:
            raise NetworkError(f"capped species {name!r} not in network")
        col = system.species_names.index(name)
        cap[col :: system.n_species] = bound
    return cap


def enumerate_states(
    system: CtmpSystem, symbol: int = 0, caps: Mapping[str, int] | None = None
) -> StateSpace:
    """Breadth-first enumeration of states reachable from the initial state.

    Transitions that would push a capped species past its cap are dropped
    (the cap reflects); everything else must stay within MAX_STATES.
    """
    caps = dict(caps or {})
    cap_vec = _cap_vector(system, caps)
    initial = tuple(int(x) for x in system.initial_counts)
    states = [initial]
    index = {initial: 0}
    frontier = [initial]
    while frontier:
        nxt: list[tuple[int, ...]] = []
        for state in frontier:
            counts = np.asarray(state, dtype=np.float64)
            props = system.propensities(counts, symbol)
            for c in np.nonzero(props > 0)[0]:
                target = counts.copy()
                target[system._delta_idx[c]] += system._delta_val[c]
                if target.min() < 0 or np.any(target > cap_vec):
                    continue
                key = tuple(int(x) for x in target)
                if key not in index:
                    index[key] = len(states)
                    states.append(key)
                    nxt.append(key)
                    if len(states) > MAX_STATES:
                        raise StateSpaceError(
                            f"reachable state space exceeds {MAX_STATES} states"
                        )
        frontier = nxt
    return StateSpace(states, index, caps)


@dataclass
class TransientDistribution:
    """Exact (uniformized) state distribution of a capped system at time t."""

    space: StateSpace
    probabilities: np.ndarray
    t: float
    truncation_error: float
    species_names: tuple[str, ...] = ()
    n_species: int = 0

    def probability_of(self, state: tuple[int, ...]) -> float:
        idx = self.space.index.get(state)
        return float(self.probabilities[idx]) if idx is not None else 0.0

    def cap_boundary_mass(self) -> float:
        """Probability mass sitting on states where a capped species is at
        its cap; a proxy for how much the cap distorts the distribution."""
        if not self.space.caps or not self.n_species:
            return 0.0
        mass = 0.0
        for state, p in zip(self.space.states, self.probabilities):
            for name, bound in self.space.caps.items():
                col = self.species_names.index(name)
                if any(state[col :: self.n_species][v] >= bound for v in range(len(state) // self.n_species)):
                    mass += float(p)
                    break
        return mass


def master_equation_transient(
    system: CtmpSystem,
    t: float,
    symbol: int = 0,
    caps: Mapping[str, int] | None = None,
    tol: float = 1e-8,
) -> TransientDistribution:
    """Transient distribution at time t by uniformizing the generator.

    Builds the full generator over the enumerated (capped) state space and
    evaluates the Poisson-weighted power series of the uniformized chain,
    truncated once the remaining Poisson mass drops below `tol`.
    """
    if t < 0:
        raise NetworkError(f"time must be >= 0, got {t}")
    space = enumerate_states(system, symbol, caps)
    n = space.n_states
    cap_vec = _cap_vector(system, dict(caps or {}))

    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    outflow = np.zeros(n)
    for i, state in enumerate(space.states):
        counts = np.asarray(state, dtype=np.float64)
        props = system.propensities(counts, symbol)
        for c in np.nonzero(props > 0)[0]:
            target = counts.copy()
            target[system._delta_idx[c]] += system._delta_val[c]
            if target.min() < 0 or np.any(target > cap_vec):
                continue  # capped transition: dropped, mass stays put
            j = space.index[tuple(int(x) for x in target)]
            rows.append(i)
            cols.append(j)
            vals.append(float(props[c]))
            outflow[i] += float(props[c])

    rate = float(outflow.max()) if n else 0.0
    pi = np.zeros(n)
    pi[space.index[tuple(int(x) for x in system.initial_counts)]] = 1.0
    if t == 0 or rate == 0.0:
        return TransientDistribution(
            space, pi, t, 0.0, system.species_names, system.n_species
        )

    jump = sp.csr_matrix((vals, (rows, cols)), shape=(n, n)) / rate
    stay = sp.diags(1.0 - outflow / rate)
    transition = (jump + stay).tocsr()

    # Poisson(rate*t)-weighted powers, accumulated until the tail is < tol.
    lam = rate * t
    log_weight = -lam  # log Poisson pmf at k=0
    weight_sum = 0.0
    result = np.zeros(n)
    vec = pi
    k = 0
    max_terms = int(lam + 12.0 * np.sqrt(lam) + 50)
    while weight_sum < 1.0 - tol and k <= max_terms:
        w = float(np.exp(log_weight))
        result += w * vec
        weight_sum += w
        k += 1
        log_weight += np.log(lam) - np.log(k)
        vec = vec @ transition
    return TransientDistribution(
        space, result, t, 1.0 - weight_sum, system.species_names, system.n_species
    )


def total_variation(p: Mapping[tuple[int, ...], float], q: Mapping[tuple[int, ...], float]) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical_vs_exact(
    system: CtmpSystem,
    t: float,
    n_runs: int,
    seed: int,
    symbol: int = 0,
    caps: Mapping[str, int] | None = None,
) -> float:
    """Total-variation distance between the SSA empirical distribution at
    time t and the uniformization result."""
    exact = master_equation_transient(system, t, symbol, caps)
    counts: dict[tuple[int, ...], int] = {}
    for r in range(n_runs):
        traj = simulate(system, symbol, t + 1e-9, seed + r)
        key = tuple(int(x) for x in traj.counts_at(t))
        counts[key] = counts.get(key, 0) + 1
    empirical = {k: v / n_runs for k, v in counts.items()}
    exact_map = {
        state: float(p) for state, p in zip(exact.space.states, exact.probabilities)
    }
    return total_variation(empirical, exact_map)


# -- brute-force check of generated filter terms ----------------------------


@dataclass(frozen=True)
class DeltaCheckRow:
    """One observed-delta class: empirical window frequency vs the filter's
    predicted mass, with their Monte-Carlo standard errors."""

    delta: tuple[tuple[str, int], ...]
    empirical: float
    empirical_se: float
    predicted: float
    predicted_se: float

    @property
    def discrepancy(self) -> float:
        return abs(self.empirical - self.predicted)

    @property
    def z_score(self) -> float:
        scale = float(np.hypot(self.empirical_se, self.predicted_se))
        if scale == 0.0:
            return 0.0 if self.discrepancy == 0.0 else np.inf
        return self.discrepancy / scale


@dataclass
class FilterCheckResult:
    """Per-delta comparison within one conditioning bin at one window size."""

    symbol: int
    t: float
    dt: float
    bin_history: tuple[tuple[tuple[str, int], ...], ...]
    bin_size: int
    rows: list[DeltaCheckRow]
    other_mass: float  # windows whose net change matched no single channel

    @property
    def max_discrepancy(self) -> float:
        return max(row.discrepancy for row in self.rows)

    @property
    def max_z(self) -> float:
        return max(row.z_score for row in self.rows)

    def to_text(self) -> str:
        head = (
            f"symbol={self.symbol} t={self.t:g} dt={self.dt:g} "
            f"bin_size={self.bin_size} history={list(map(dict, self.bin_history))}"
        )
        lines = [head]
        for row in self.rows:
            label = dict(row.delta) if row.delta else "none"
            lines.append(
                f"  delta {label}: empirical {row.empirical:.5f} (se {row.empirical_se:.5f})"
                f" vs predicted {row.predicted:.5f} (se {row.predicted_se:.5f})"
                f" |z|={row.z_score:.2f}"
            )
        lines.append(f"  unmatched-window mass {self.other_mass:.5f}")
        return "\n".join(lines)


def _history_key(
    history_times: np.ndarray, history_deltas: np.ndarray, measured: tuple[str, ...], t: float
) -> tuple[tuple[tuple[str, int], ...], ...]:
    stop = int(np.searchsorted(history_times, t, side="right"))
    key = []
    for row in history_deltas[:stop]:
        key.append(tuple(sorted((n, int(d)) for n, d in zip(measured, row) if d != 0)))
    return tuple(key)


def _window_delta(
    history_times: np.ndarray,
    history_deltas: np.ndarray,
    measured: tuple[str, ...],
    t: float,
    dt: float,
) -> tuple[tuple[str, int], ...]:
    lo = int(np.searchsorted(history_times, t, side="right"))
    hi = int(np.searchsorted(history_times, t + dt, side="right"))
    if hi == lo:
        return ()
    net = history_deltas[lo:hi].sum(axis=0)
    return tuple(sorted((n, int(d)) for n, d in zip(measured, net) if d != 0))


def brute_force_filter_check(
    system: CtmpSystem,
    spec: FilterSpec,
    symbol: int,
    t: float,
    dt: float | Sequence[float],
    n_runs: int,
    seed: int,
    min_bin: int = 200,
) -> FilterCheckResult | list[FilterCheckResult]:
    """Check the generated filter terms against direct trajectory statistics.

    Simulates `n_runs` realizations, bins them by their observed event
    sequence up to time t (event order and deltas; times discarded), picks
    the largest bin in which every channel has positive predicted mass
    (falling back to the largest bin), and compares, for each observed-delta
    class, the empirical frequency of that net change over (t, t+dt] with
    the filter's predicted mass using bin-estimated conditional moments.

    Passing a sequence of dt values evaluates every window size on the same
    trajectory ensemble and returns one result per dt.
    """
    dts = [float(dt)] if np.isscalar(dt) else [float(x) for x in dt]
    if any(x <= 0 for x in dts):
        raise NetworkError("dt values must be positive")
    horizon = t + max(dts)
    measured = tuple(spec.measured)

    bins: dict[tuple, list[int]] = {}
    run_histories = []
    run_state_at_t = []
    for r in range(n_runs):
        traj = simulate(system, symbol, horizon + 1e-9, seed + r)
        hist = observe(traj, measured)
        key = _history_key(hist.times, hist.deltas, measured, t)
        bins.setdefault(key, []).append(r)
        run_histories.append(hist)
        run_state_at_t.append(traj.counts_at(t))

    eligible = {k: v for k, v in bins.items() if len(v) >= min_bin}
    if not eligible:
        raise EmptyBinError(
            f"no observed-history bin reached {min_bin} members (largest: "
            f"{max((len(v) for v in bins.values()), default=0)})"
        )

    def bin_prediction(members: list[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # Per-channel conditional rate via bin-averaged unmeasured monomials.
        n_ch = spec.n_channels
        rates = np.zeros(n_ch)
        rate_ses = np.zeros(n_ch)
        obs_counts = _measured_counts(system, run_state_at_t[members[0]], measured)
        for i, ch in enumerate(spec.channels):
            samples = np.array(
                [
                    _monomial(system, run_state_at_t[m], ch.moment.exponents)
                    for m in members
                ]
            )
            mono = 1.0
            for name, exp in ch.observed_monomial:
                mono *= obs_counts[name] ** exp
            rates[i] = ch.rate_constant * mono * samples.mean()
            rate_ses[i] = (
                ch.rate_constant * mono * samples.std(ddof=1) / np.sqrt(len(members))
            )
        return rates, rate_ses, obs_counts

    def pick_bin() -> tuple:
        ranked = sorted(eligible, key=lambda k: -len(eligible[k]))
        for key in ranked:
            rates, _, _ = bin_prediction(eligible[key])
            if np.all(rates > 0):
                return key
        return ranked[0]

    chosen = pick_bin()
    members = eligible[chosen]
    # Sanity: identical observed history implies identical measured counts.
    ref = _measured_counts(system, run_state_at_t[members[0]], measured)
    for m in members[1:]:
        if _measured_counts(system, run_state_at_t[m], measured) != ref:
            raise RuntimeError("observed-history bin mixes distinct measured counts")

    rates, rate_ses, _ = bin_prediction(members)
    delta_groups = spec.channels_by_delta()
    n_bin = len(members)

    results = []
    for window in dts:
        observed_classes: dict[tuple, int] = {}
        for m in members:
            hist = run_histories[m]
            net = _window_delta(hist.times, hist.deltas, measured, t, window)
            observed_classes[net] = observed_classes.get(net, 0) + 1

        rows = []
        matched = 0
        for delta, ids in delta_groups.items():
            pred = float(sum(rates[i] for i in ids)) * window
            pred_se = float(np.sqrt(sum(rate_ses[i] ** 2 for i in ids))) * window
            emp_count = observed_classes.get(delta, 0)
            matched += emp_count
            emp = emp_count / n_bin
            emp_se = float(np.sqrt(max(emp * (1 - emp), 1e-30) / n_bin))
            rows.append(DeltaCheckRow(delta, emp, emp_se, pred, pred_se))
        # No-change class: 1 minus the sum over every channel.
        silent = [i for i, ch in enumerate(spec.channels) if ch.is_silent]
        pred_none = 1.0 - float(rates.sum()) * window + float(sum(rates[i] for i in silent)) * window
        pred_none_se = float(np.linalg.norm(rate_ses)) * window
        emp_none_count = observed_classes.get((), 0)
        matched += emp_none_count
        emp_none = emp_none_count / n_bin
        emp_none_se = float(np.sqrt(max(emp_none * (1 - emp_none), 1e-30) / n_bin))
        rows.append(DeltaCheckRow((), emp_none, emp_none_se, pred_none, pred_none_se))

        results.append(
            FilterCheckResult(
                symbol,
                t,
                window,
                chosen,
                n_bin,
                rows,
                other_mass=(n_bin - matched) / n_bin,
            )
        )
    return results[0] if np.isscalar(dt) else results


def _measured_counts(
    system: CtmpSystem, counts: np.ndarray, measured: tuple[str, ...]
) -> dict[str, float]:
    return {
        name: float(counts[system._flat(system.rx_voxel, name)]) for name in measured
    }


def _monomial(
    system: CtmpSystem, counts: np.ndarray, exponents: tuple[tuple[str, int], ...]
) -> float:
    value = 1.0
    for name, exp in exponents:
        value *= float(counts[system._flat(system.rx_voxel, name)]) ** exp
    return value
