"""Voxel-lattice continuous-time Markov process and its exact simulation.

The end-to-end channel model: signalling molecules are emitted by a
transmitter voxel as a Poisson process, hop between neighbouring cubic
voxels at rate D/W^2 per molecule, optionally escape through the medium
boundary, and react with receptor species pinned to a receiver voxel.
Trajectories are sampled exactly with Gillespie's direct method.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .chem import NetworkError, ReactionNetwork, net_change


class SimulationError(RuntimeError):
    """The simulator hit a guard (propensity overflow, event cap)."""


@dataclass(frozen=True)
class Reflecting:
    """Closed boundary: molecules never leave the medium."""


@dataclass(frozen=True)
class Absorbing:
    """Open boundary: molecules on a boundary voxel may leave for good.

    `escape_rate` is the per-molecule per-outward-face rate; None means
    one fiftieth of the species' hop rate.
    """

    escape_rate: float | None = None

    def __post_init__(self) -> None:
        if self.escape_rate is not None and self.escape_rate < 0:
            raise NetworkError(f"escape rate must be >= 0, got {self.escape_rate}")


@dataclass(frozen=True)
class VoxelGrid:
    """Cubic voxel lattice with per-species diffusion coefficients.

    `dims` is (Nx, Ny, Nz); `voxel_edge` is W in um; `diffusion` maps a
    species name to its coefficient D in um^2/s. Species absent from
    `diffusion` do not move (receptor species stay in their voxel).
    """

    dims: tuple[int, int, int]
    voxel_edge: float
    diffusion: Mapping[str, float] = field(default_factory=dict)
    boundary: Reflecting | Absorbing = Reflecting()

    def __post_init__(self) -> None:
        if len(self.dims) != 3 or any(n < 1 for n in self.dims):
            raise NetworkError(f"grid dims must be three integers >= 1, got {self.dims}")
        if not self.voxel_edge > 0:
            raise NetworkError(f"voxel edge must be positive, got {self.voxel_edge}")
        for name, coeff in self.diffusion.items():
            if coeff < 0:
                raise NetworkError(f"diffusion coefficient of {name} must be >= 0")

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def hop_rate(self, species: str) -> float:
        """Per-molecule rate of hopping to one given neighbour: D / W^2."""
        return self.diffusion.get(species, 0.0) / self.voxel_edge**2

    def flat(self, pos: tuple[int, int, int]) -> int:
        """Flat index of a 0-based (x, y, z) coordinate."""
        x, y, z = pos
        nx, ny, nz = self.dims
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
            raise NetworkError(f"voxel {pos} outside grid of dims {self.dims}")
        return x + nx * (y + ny * z)

    def flat_from_position(self, pos: tuple[int, int, int]) -> int:
        """Flat index of a 1-based (x, y, z) grid position."""
        x, y, z = pos
        return self.flat((x - 1, y - 1, z - 1))

    def coords(self, voxel: int) -> tuple[int, int, int]:
        nx, ny, nz = self.dims
        return voxel % nx, (voxel // nx) % ny, voxel // (nx * ny)

    def neighbors(self, voxel: int) -> list[int]:
        x, y, z = self.coords(voxel)
        nx, ny, nz = self.dims
        out = []
        for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            u, v, w = x + dx, y + dy, z + dz
            if 0 <= u < nx and 0 <= v < ny and 0 <= w < nz:
                out.append(self.flat((u, v, w)))
        return out

    def boundary_faces(self, voxel: int) -> int:
        """Number of faces of this voxel lying on the medium surface."""
        return 6 - len(self.neighbors(voxel))


@dataclass(frozen=True)
class TransmitterModel:
    """Constant-rate Poisson emission of one species, one rate per symbol."""

    voxel: int
    emission_rates: tuple[float, ...]
    species: str = "S"

    def __post_init__(self) -> None:
        object.__setattr__(self, "emission_rates", tuple(float(r) for r in self.emission_rates))
        if any(r < 0 for r in self.emission_rates):
            raise NetworkError("emission rates must be >= 0")
        if not self.emission_rates:
            raise NetworkError("need at least one symbol emission rate")


@dataclass(frozen=True)
class JumpEvent:
    """One jump of the process: when, through which channel, changing what.

    `delta` maps (voxel, species name) to the signed count change.
    """

    time: float
    kind: str  # "reaction" | "diffusion" | "escape" | "emission"
    detail: tuple
    delta: dict[tuple[int, str], int]


class CtmpSystem:
    """All jump channels of the end-to-end model, ready for simulation.

    Built by `build_system`. The channel list is laid out as flat numpy
    arrays so a full propensity vector is two gathers and a product:
    channel c has rate ``kappa[c] * n[r0[c]] * n[r1[c]]`` where r0/r1 index
    a counts array extended with a trailing constant 1.
    """

    def __init__(
        self,
        grid: VoxelGrid,
        tx: TransmitterModel | None,
        network: ReactionNetwork,
        rx_voxel: int,
        receptor_count: int,
        initial_molecules: Mapping[tuple[int, str], int] | None = None,
        receptor_species: str = "E",
        max_total_propensity: float = 1e12,
    ) -> None:
        self.grid = grid
        self.tx = tx
        self.network = network
        self.rx_voxel = rx_voxel
        self.receptor_count = receptor_count
        self.receptor_species = receptor_species
        self.max_total_propensity = max_total_propensity
        self.species_names = network.species_names
        self.n_species = len(self.species_names)
        self.n_voxels = grid.n_voxels
        self._sp_index = {name: i for i, name in enumerate(self.species_names)}

        if not 0 <= rx_voxel < self.n_voxels:
            raise NetworkError(f"receiver voxel {rx_voxel} outside grid")
        if tx is not None and not 0 <= tx.voxel < self.n_voxels:
            raise NetworkError(f"transmitter voxel {tx.voxel} outside grid")
        if tx is not None and tx.species not in self._sp_index:
            raise NetworkError(f"transmitter species {tx.species!r} not in network")
        if receptor_count < 0:
            raise NetworkError("receptor count must be >= 0")
        if receptor_count > 0 and receptor_species not in self._sp_index:
            raise NetworkError(f"receptor species {receptor_species!r} not in network")
        for name in grid.diffusion:
            if name not in self._sp_index:
                raise NetworkError(f"diffusing species {name!r} not in network")

        size = self.n_voxels * self.n_species
        self._size = size
        initial = np.zeros(size, dtype=np.float64)
        if receptor_count > 0:
            initial[self._flat(rx_voxel, receptor_species)] = receptor_count
        if initial_molecules:
            for (voxel, name), count in initial_molecules.items():
                if not 0 <= voxel < self.n_voxels:
                    raise NetworkError(f"initial-molecule voxel {voxel} outside grid")
                if count < 0:
                    raise NetworkError("initial molecule counts must be >= 0")
                initial[self._flat(voxel, name)] += count
        self.initial_counts = initial

        self._build_channels()

    def _flat(self, voxel: int, species: str) -> int:
        return voxel * self.n_species + self._sp_index[species]

    def _build_channels(self) -> None:
        dummy = self._size  # extended counts slot holding constant 1
        kappa: list[float] = []
        r0: list[int] = []
        r1: list[int] = []
        delta_idx: list[np.ndarray] = []
        delta_val: list[np.ndarray] = []
        kinds: list[str] = []
        details: list[tuple] = []
        has_high_order = False

        def add(rate: float, reactant_slots: list[int], delta: dict[int, int], kind: str, detail: tuple) -> None:
            slots = list(reactant_slots) + [dummy, dummy]
            kappa.append(rate)
            r0.append(slots[0])
            r1.append(slots[1])
            items = sorted(delta.items())
            delta_idx.append(np.array([i for i, _ in items], dtype=np.int64))
            delta_val.append(np.array([v for _, v in items], dtype=np.float64))
            kinds.append(kind)
            details.append(detail)

        # Receiver reactions, mass action with plain count powers.
        for rid, rxn in enumerate(self.network.reactions):
            slots: list[int] = []
            for name, stoich in rxn.reactants.items():
                slots.extend([self._flat(self.rx_voxel, name)] * stoich)
                if stoich > 1:
                    has_high_order = True
            delta = {
                self._flat(self.rx_voxel, name): d for name, d in net_change(rxn).items()
            }
            add(rxn.rate_constant, slots, delta, "reaction", (rid, rxn.name))

        # Diffusion hops, one directed channel per neighbouring pair.
        for name, coeff in self.grid.diffusion.items():
            hop = self.grid.hop_rate(name)
            if hop <= 0:
                continue
            for voxel in range(self.n_voxels):
                src = self._flat(voxel, name)
                for other in self.grid.neighbors(voxel):
                    dst = self._flat(other, name)
                    add(hop, [src], {src: -1, dst: +1}, "diffusion", (name, voxel, other))

        # Boundary escape, one channel per outward face of a boundary voxel.
        if isinstance(self.grid.boundary, Absorbing):
            for name in self.grid.diffusion:
                rate = self.grid.boundary.escape_rate
                if rate is None:
                    rate = self.grid.hop_rate(name) / 50.0
                if rate <= 0:
                    continue
                for voxel in range(self.n_voxels):
                    faces = self.grid.boundary_faces(voxel)
                    src = self._flat(voxel, name)
                    for face in range(faces):
                        add(rate, [src], {src: -1}, "escape", (name, voxel))

        # Transmitter emission: a single Poisson channel, rate set per symbol.
        self._emission_channel: int | None = None
        if self.tx is not None:
            self._emission_channel = len(kappa)
            dst = self._flat(self.tx.voxel, self.tx.species)
            add(0.0, [], {dst: +1}, "emission", (self.tx.species, self.tx.voxel))

        self.n_channels = len(kappa)
        self._kappa = np.array(kappa, dtype=np.float64)
        self._r0 = np.array(r0, dtype=np.int64)
        self._r1 = np.array(r1, dtype=np.int64)
        self._delta_idx = delta_idx
        self._delta_val = delta_val
        self.channel_kinds = tuple(kinds)
        self.channel_details = tuple(details)
        self._check_negative = has_high_order

    # -- propensities ------------------------------------------------------

    def _kappa_for(self, symbol: int) -> np.ndarray:
        kappa = self._kappa.copy()
        if self._emission_channel is not None:
            assert self.tx is not None
            try:
                kappa[self._emission_channel] = self.tx.emission_rates[symbol]
            except IndexError:
                raise NetworkError(f"symbol {symbol} has no emission rate") from None
        elif symbol != 0:
            raise NetworkError("system has no transmitter; only symbol 0 is valid")
        return kappa

    def _extended(self, counts: np.ndarray) -> np.ndarray:
        ext = np.empty(self._size + 1, dtype=np.float64)
        ext[: self._size] = counts
        ext[self._size] = 1.0
        return ext

    def propensities(self, counts: np.ndarray, symbol: int = 0) -> np.ndarray:
        """Propensity of every channel in the given state."""
        ext = self._extended(counts)
        return self._kappa_for(symbol) * ext[self._r0] * ext[self._r1]

    def propensity(self, counts: np.ndarray, channel: int, symbol: int = 0) -> float:
        """Propensity of one channel: mass-action product, hop rate times
        occupancy, escape rate times occupancy, or the symbol's emission rate."""
        ext = self._extended(counts)
        kappa = self._kappa_for(symbol)
        return float(kappa[channel] * ext[self._r0[channel]] * ext[self._r1[channel]])

    def channel_delta(self, channel: int) -> dict[tuple[int, str], int]:
        """The sparse (voxel, species) count change of one channel."""
        idx = self._delta_idx[channel]
        val = self._delta_val[channel]
        return {
            (int(i) // self.n_species, self.species_names[int(i) % self.n_species]): int(v)
            for i, v in zip(idx, val)
        }

    def observed_projection(self, measured: Sequence[str]) -> np.ndarray:
        """Per-channel net change of the measured receiver species,
        shape (n_channels, len(measured))."""
        cols = [self._flat(self.rx_voxel, name) for name in measured]
        proj = np.zeros((self.n_channels, len(cols)), dtype=np.int64)
        for c in range(self.n_channels):
            for i, v in zip(self._delta_idx[c], self._delta_val[c]):
                if int(i) in cols:
                    proj[c, cols.index(int(i))] = int(v)
        return proj

    # -- simulation --------------------------------------------------------

    def _run(
        self,
        symbol: int,
        horizon: float,
        rng: np.random.Generator,
        sample_times: np.ndarray | None = None,
        sample_slice: slice | None = None,
        record: bool = True,
        max_events: int | None = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        """Direct-method SSA loop shared by `simulate` and `sample_counts`."""
        if not horizon > 0:
            raise NetworkError(f"horizon must be positive, got {horizon}")
        kappa = self._kappa_for(symbol)
        ext = self._extended(self.initial_counts)
        r0, r1 = self._r0, self._r1
        delta_idx, delta_val = self._delta_idx, self._delta_val
        cap = self.max_total_propensity
        check_negative = self._check_negative

        samples: np.ndarray | None = None
        sp = 0
        if sample_times is not None:
            if sample_slice is None:
                sample_slice = slice(0, self._size)
            samples = np.empty((len(sample_times), len(ext[sample_slice])), dtype=np.float64)

        times: list[float] = []
        chans: list[int] = []
        t = 0.0
        n_events = 0
        while True:
            p = kappa * ext[r0] * ext[r1]
            a0 = float(p.sum())
            if a0 > cap:
                raise SimulationError(
                    f"total propensity {a0:.3g}/s exceeds guard {cap:.3g}/s at t={t:.6g}"
                )
            t_next = t + rng.exponential(1.0 / a0) if a0 > 0.0 else np.inf
            stop = t_next >= horizon
            if samples is not None:
                edge = horizon if stop else t_next
                while sp < len(sample_times) and sample_times[sp] < edge:
                    samples[sp] = ext[sample_slice]
                    sp += 1
            if stop:
                break
            u = rng.random() * a0
            c = int(np.searchsorted(np.cumsum(p), u, side="right"))
            if c >= self.n_channels:  # guard against float roundoff at the top edge
                c = self.n_channels - 1
            ext[delta_idx[c]] += delta_val[c]
            if check_negative and ext[delta_idx[c]].min() < 0:
                raise SimulationError(
                    f"channel {c} drove a count negative at t={t_next:.6g}"
                )
            t = t_next
            if record:
                times.append(t)
                chans.append(c)
            n_events += 1
            if max_events is not None and n_events > max_events:
                raise SimulationError(f"event cap {max_events} exceeded")
        if samples is not None:
            while sp < len(sample_times):
                samples[sp] = ext[sample_slice]
                sp += 1
        return (
            np.asarray(times, dtype=np.float64),
            np.asarray(chans, dtype=np.int64),
            samples,
        )


def build_system(
    grid: VoxelGrid,
    tx: TransmitterModel | None,
    rx_network: ReactionNetwork,
    rx_voxel: int,
    receptor_count: int,
    initial_molecules: Mapping[tuple[int, str], int] | None = None,
    receptor_species: str = "E",
) -> CtmpSystem:
    """Assemble the end-to-end jump process.

    The initial state holds `receptor_count` unbound receptors in the
    receiver voxel (plus any `initial_molecules` overlay) and nothing else.
    """
    return CtmpSystem(
        grid,
        tx,
        rx_network,
        rx_voxel,
        receptor_count,
        initial_molecules=initial_molecules,
        receptor_species=receptor_species,
    )


@dataclass
class Trajectory:
    """One exact realization: initial counts plus the ordered jump record.

    Events are stored compactly as (time, channel id) pairs; each channel's
    count change is static, so the full state at any time is recovered by
    replay.
    """

    system: CtmpSystem
    symbol: int
    horizon: float
    seed: int
    times: np.ndarray
    channels: np.ndarray

    @property
    def n_events(self) -> int:
        return len(self.times)

    def events(self) -> Iterator[JumpEvent]:
        sys = self.system
        for t, c in zip(self.times, self.channels):
            yield JumpEvent(
                float(t),
                sys.channel_kinds[c],
                sys.channel_details[c],
                sys.channel_delta(int(c)),
            )

    def replay(self, validate: bool = True) -> Iterator[tuple[float, np.ndarray]]:
        """Yield (event time, counts after event); optionally assert counts >= 0."""
        sys = self.system
        counts = sys.initial_counts.copy()
        for t, c in zip(self.times, self.channels):
            counts[sys._delta_idx[c]] += sys._delta_val[c]
            if validate and counts[sys._delta_idx[c]].min() < 0:
                raise SimulationError(f"negative count after event at t={t:.6g}")
            yield float(t), counts

    def final_counts(self) -> np.ndarray:
        counts = self.system.initial_counts.copy()
        for _, c in zip(self.times, self.channels):
            counts[self.system._delta_idx[c]] += self.system._delta_val[c]
        return counts

    def counts_at(self, t: float) -> np.ndarray:
        """State at time t (right-continuous)."""
        counts = self.system.initial_counts.copy()
        stop = np.searchsorted(self.times, t, side="right")
        for c in self.channels[:stop]:
            counts[self.system._delta_idx[c]] += self.system._delta_val[c]
        return counts

    def sample_voxel(self, sample_times: Sequence[float], voxel: int) -> np.ndarray:
        """Counts of every species in one voxel at the given times,
        shape (len(sample_times), n_species). Right-continuous sampling."""
        sys = self.system
        n_sp = sys.n_species
        lo, hi = voxel * n_sp, (voxel + 1) * n_sp
        counts = sys.initial_counts.copy()
        out = np.empty((len(sample_times), n_sp), dtype=np.float64)
        k = 0
        order = np.argsort(np.asarray(sample_times), kind="stable")
        tq = np.asarray(sample_times)[order]
        for t, c in zip(self.times, self.channels):
            while k < len(tq) and tq[k] < t:
                out[order[k]] = counts[lo:hi]
                k += 1
            counts[sys._delta_idx[c]] += sys._delta_val[c]
        while k < len(tq):
            out[order[k]] = counts[lo:hi]
            k += 1
        return out

    def to_text(self) -> str:
        """Line-per-event debug export: time, channel kind, detail, delta triples."""
        lines = []
        for ev in self.events():
            delta = ",".join(
                f"{voxel}:{name}:{change:+d}" for (voxel, name), change in sorted(ev.delta.items())
            )
            detail = " ".join(str(x) for x in ev.detail)
            lines.append(f"{ev.time!r}\t{ev.kind}\t{detail}\t{delta}")
        return "\n".join(lines) + ("\n" if lines else "")


def simulate(
    system: CtmpSystem,
    symbol: int,
    horizon: float,
    seed: int,
    max_events: int | None = None,
) -> Trajectory:
    """Exact SSA realization (direct method), deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    times, chans, _ = system._run(symbol, horizon, rng, record=True, max_events=max_events)
    return Trajectory(system, symbol, horizon, seed, times, chans)


def sample_counts(
    system: CtmpSystem,
    symbol: int,
    horizon: float,
    seed: int,
    sample_times: Sequence[float],
    voxel: int,
) -> np.ndarray:
    """Counts of every species in `voxel` at the given (sorted) times, from a
    fresh SSA run that skips event recording. Same seed, same law as
    `simulate`: the two draw identical random streams."""
    tq = np.asarray(sample_times, dtype=np.float64)
    if len(tq) and (np.any(np.diff(tq) < 0) or tq[0] < 0 or tq[-1] > horizon):
        raise NetworkError("sample times must be sorted within [0, horizon]")
    rng = np.random.default_rng(seed)
    n_sp = system.n_species
    sl = slice(voxel * n_sp, (voxel + 1) * n_sp)
    _, _, samples = system._run(
        symbol, horizon, rng, sample_times=tq, sample_slice=sl, record=False
    )
    assert samples is not None
    return samples


@dataclass
class ObservedHistory:
    """Projection of a trajectory onto the measured receiver species.

    Events whose measured-species change is zero are dropped; times and
    ordering are preserved. `deltas` has one row per retained event.
    """

    measured: tuple[str, ...]
    initial: np.ndarray  # counts of measured species at t=0
    times: np.ndarray
    deltas: np.ndarray  # shape (n_events, len(measured)), integer
    horizon: float

    @property
    def n_events(self) -> int:
        return len(self.times)

    def counts_after(self) -> np.ndarray:
        """Measured counts right after each event, shape (n_events, m)."""
        if self.n_events == 0:
            return np.empty((0, len(self.measured)), dtype=np.int64)
        return self.initial[None, :] + np.cumsum(self.deltas, axis=0)

    def counts_at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right"))
        if k == 0:
            return self.initial.copy()
        return self.initial + self.deltas[:k].sum(axis=0)

    def truncated(self, t: float) -> "ObservedHistory":
        k = int(np.searchsorted(self.times, t, side="right"))
        return ObservedHistory(
            self.measured, self.initial, self.times[:k], self.deltas[:k], min(t, self.horizon)
        )

    def to_csv(self) -> str:
        """CSV export with columns time, species, delta (row per species change)."""
        lines = ["time,species,delta"]
        for t, row in zip(self.times, self.deltas):
            for name, change in zip(self.measured, row):
                if change != 0:
                    lines.append(f"{float(t)!r},{name},{int(change)}")
        return "\n".join(lines) + "\n"


def observe(traj: Trajectory, measured: Sequence[str]) -> ObservedHistory:
    """Project a trajectory onto the counts of measured receiver species."""
    measured = tuple(measured)
    if not measured:
        raise NetworkError("measured species set must be nonempty")
    sys = traj.system
    for name in measured:
        if name not in sys.species_names:
            raise NetworkError(f"measured species {name!r} not in network")
    proj = sys.observed_projection(measured)
    keep = proj[traj.channels].any(axis=1)
    initial = np.array(
        [sys.initial_counts[sys._flat(sys.rx_voxel, name)] for name in measured],
        dtype=np.int64,
    )
    return ObservedHistory(
        measured,
        initial,
        traj.times[keep],
        proj[traj.channels[keep]],
        traj.horizon,
    )
