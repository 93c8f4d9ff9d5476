"""Mechanical generation of Bayesian-filter terms for a receiver circuit.

Given a reaction network and a choice of measured species, the one-step
predictive distribution of the measured counts decomposes into one term per
reaction that involves a measured species, plus a no-reaction term. Each
reaction term is an indicator on the reaction's net measured-count change
multiplied by the conditional mean reaction rate times dt; the conditional
mean factors into the (known) measured-count monomial and a moment of the
unmeasured reactant counts. This module builds that decomposition for any
network and any measured set, so demodulation filters never have to be
derived by hand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .chem import NetworkError, Reaction, ReactionNetwork, net_change


class DtTooLargeError(ValueError):
    """Channel probabilities summed past 1; shrink the time step."""


@dataclass(frozen=True)
class MomentDescriptor:
    """The monomial of unmeasured species whose conditional expectation a
    filter channel needs: a sorted tuple of (species name, exponent) pairs.

    Counts refer to the receiver voxel. An empty descriptor denotes the
    constant 1 (the channel's rate depends only on measured counts).
    """

    exponents: tuple[tuple[str, int], ...] = ()

    def __post_init__(self) -> None:
        items = tuple(sorted((str(n), int(e)) for n, e in self.exponents))
        if any(e < 1 for _, e in items):
            raise NetworkError("moment exponents must be positive integers")
        object.__setattr__(self, "exponents", items)

    @classmethod
    def from_dict(cls, exponents: Mapping[str, int]) -> "MomentDescriptor":
        return cls(tuple(exponents.items()))

    def as_dict(self) -> dict[str, int]:
        return dict(self.exponents)

    @property
    def is_constant(self) -> bool:
        return not self.exponents

    def evaluate(self, counts: Mapping[str, float]) -> float:
        value = 1.0
        for name, exp in self.exponents:
            value *= counts[name] ** exp
        return value

    def label(self) -> str:
        if self.is_constant:
            return "1"
        inner = "*".join(
            f"n({name})" if exp == 1 else f"n({name})^{exp}" for name, exp in self.exponents
        )
        return f"E[{inner}]"


@dataclass(frozen=True)
class FilterChannel:
    """One reaction's contribution to the one-step predictive distribution.

    The channel's probability mass over (t, t+dt] is

        rate_constant * prod(measured_count ** monomial) * moment * dt

    attached to the indicator that the measured counts changed by exactly
    `observed_delta`. A channel with empty `observed_delta` is silent: its
    events are invisible in the measured history and merge with the
    no-reaction term.
    """

    reaction_index: int
    reaction_name: str
    rate_constant: float
    observed_delta: tuple[tuple[str, int], ...]
    observed_monomial: tuple[tuple[str, int], ...]
    moment: MomentDescriptor

    def __post_init__(self) -> None:
        object.__setattr__(self, "observed_delta", tuple(sorted(self.observed_delta)))
        object.__setattr__(self, "observed_monomial", tuple(sorted(self.observed_monomial)))

    @property
    def is_silent(self) -> bool:
        return not self.observed_delta

    def delta_dict(self) -> dict[str, int]:
        return dict(self.observed_delta)

    def monomial_dict(self) -> dict[str, int]:
        return dict(self.observed_monomial)

    def rate(self, observed_counts: Mapping[str, float], moment_value: float) -> float:
        """Conditional mean rate: kappa * measured monomial * moment value."""
        value = self.rate_constant * moment_value
        for name, exp in self.observed_monomial:
            value *= observed_counts[name] ** exp
        return value


@dataclass(frozen=True)
class FilterSpec:
    """The generated filter: measured species and one channel per involved
    reaction, ordered by reaction declaration order. The no-reaction term
    is implicit: 1 minus the sum of all channel masses."""

    measured: tuple[str, ...]
    channels: tuple[FilterChannel, ...]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def channels_by_delta(self) -> dict[tuple[tuple[str, int], ...], tuple[int, ...]]:
        groups: dict[tuple[tuple[str, int], ...], list[int]] = {}
        for i, ch in enumerate(self.channels):
            if not ch.is_silent:
                groups.setdefault(ch.observed_delta, []).append(i)
        return {delta: tuple(ids) for delta, ids in groups.items()}

    def moment_descriptors(self) -> set[MomentDescriptor]:
        return {ch.moment for ch in self.channels if not ch.moment.is_constant}


@dataclass(frozen=True)
class ReactionGraph:
    """Bipartite species/reaction graph restricted to reactions that touch a
    measured species. Measured species are the circle nodes, unmeasured ones
    the squares, reactions the rectangles; edges run reactant -> reaction and
    reaction -> product."""

    measured_nodes: frozenset[str]
    unmeasured_nodes: frozenset[str]
    reaction_nodes: tuple[int, ...]
    reactant_edges: tuple[tuple[str, int], ...]  # species -> reaction index
    product_edges: tuple[tuple[int, str], ...]  # reaction index -> species

    @property
    def m_observed(self) -> int:
        return len(self.measured_nodes)

    @property
    def m_reactions(self) -> int:
        return len(self.reaction_nodes)

    @property
    def m_unmeasured(self) -> int:
        return len(self.unmeasured_nodes)


def _check_measured(network: ReactionNetwork, measured: Sequence[str]) -> tuple[str, ...]:
    measured = tuple(measured)
    if not measured:
        raise NetworkError("measured species set must be nonempty")
    if len(set(measured)) != len(measured):
        raise NetworkError(f"duplicate measured species in {measured}")
    unknown = set(measured) - set(network.species_names)
    if unknown:
        raise NetworkError(f"measured species {sorted(unknown)} not in network")
    return measured


def _involves(rxn: Reaction, measured: set[str]) -> bool:
    return bool(rxn.species_names() & measured)


def build_reaction_graph(network: ReactionNetwork, measured: Sequence[str]) -> ReactionGraph:
    """Reaction graph for one measurement choice. Reactions touching no
    measured species are excluded, along with species incident only to them."""
    measured = _check_measured(network, measured)
    mset = set(measured)
    reaction_nodes: list[int] = []
    unmeasured: set[str] = set()
    reactant_edges: list[tuple[str, int]] = []
    product_edges: list[tuple[int, str]] = []
    for rid, rxn in enumerate(network.reactions):
        if not _involves(rxn, mset):
            continue
        reaction_nodes.append(rid)
        unmeasured |= rxn.species_names() - mset
        for name in rxn.reactants:
            reactant_edges.append((name, rid))
        for name in rxn.products:
            product_edges.append((rid, name))
    return ReactionGraph(
        frozenset(measured),
        frozenset(unmeasured),
        tuple(reaction_nodes),
        tuple(reactant_edges),
        tuple(product_edges),
    )


def general_form_coefficients(
    network: ReactionNetwork, measured: Sequence[str], reaction_index: int
) -> tuple[dict[str, int], dict[str, int], dict[str, int], dict[str, int]]:
    """Stoichiometric coefficient row of one reaction split by measurement:
    (measured reactants, unmeasured reactants, measured products, unmeasured
    products). Zero coefficients are omitted."""
    measured = set(_check_measured(network, measured))
    rxn = network.reactions[reaction_index]
    a = {n: s for n, s in rxn.reactants.items() if n in measured}
    b = {n: s for n, s in rxn.reactants.items() if n not in measured}
    c = {n: s for n, s in rxn.products.items() if n in measured}
    d = {n: s for n, s in rxn.products.items() if n not in measured}
    return a, b, c, d


def generate_filter_spec(network: ReactionNetwork, measured: Sequence[str]) -> FilterSpec:
    """Write down the filter directly from the reaction graph.

    For each included reaction: the observed delta is the net measured-count
    change, the observed monomial collects measured-reactant exponents, and
    the moment descriptor collects unmeasured-reactant exponents. Channels
    keep the network's reaction declaration order so output is deterministic.
    """
    measured = _check_measured(network, measured)
    graph = build_reaction_graph(network, measured)
    mset = set(measured)
    channels: list[FilterChannel] = []
    for rid in graph.reaction_nodes:
        rxn = network.reactions[rid]
        a, b, _, _ = general_form_coefficients(network, measured, rid)
        delta = {n: d for n, d in net_change(rxn).items() if n in mset}
        channels.append(
            FilterChannel(
                reaction_index=rid,
                reaction_name=rxn.name,
                rate_constant=rxn.rate_constant,
                observed_delta=tuple(delta.items()),
                observed_monomial=tuple(a.items()),
                moment=MomentDescriptor(tuple(b.items())),
            )
        )
    return FilterSpec(measured, tuple(channels))


def evaluate_channel_probability(
    channel: FilterChannel,
    observed_counts: Mapping[str, float],
    moment_value: float,
    dt: float,
) -> float:
    """Probability mass the channel assigns to its observed delta over dt."""
    if moment_value < 0:
        raise NetworkError(f"moment value must be >= 0, got {moment_value}")
    if not dt > 0:
        raise NetworkError(f"dt must be positive, got {dt}")
    return channel.rate(observed_counts, moment_value) * dt


def no_reaction_probability(
    spec: FilterSpec,
    observed_counts: Mapping[str, float],
    moment_values: Mapping[MomentDescriptor, float],
    dt: float,
) -> float:
    """The no-reaction mass: one minus the sum over every channel."""
    total = 0.0
    for ch in spec.channels:
        value = 1.0 if ch.moment.is_constant else moment_values[ch.moment]
        total += evaluate_channel_probability(ch, observed_counts, value, dt)
    if total > 1.0:
        raise DtTooLargeError(
            f"channel masses sum to {total:.6g} > 1; dt={dt:.3g} is too large"
        )
    return 1.0 - total


# -- rendering and round-trip form ----------------------------------------


def render_text(spec: FilterSpec) -> str:
    """Human-readable listing of the generated filter terms."""
    lines = [f"measured: {', '.join(spec.measured)}"]
    for i, ch in enumerate(spec.channels, start=1):
        monomial = "*".join(
            f"n({name})" if exp == 1 else f"n({name})^{exp}"
            for name, exp in ch.observed_monomial
        )
        factors = [repr(ch.rate_constant)]
        if monomial:
            factors.append(monomial)
        factors.append(ch.moment.label())
        factors.append("dt")
        if ch.is_silent:
            delta = "silent (no measured change)"
        else:
            delta = ", ".join(f"{name}:{d:+d}" for name, d in ch.observed_delta)
        lines.append(
            f"Q[{i}] = {' * '.join(factors)}   | delta {delta} | reaction "
            f"{ch.reaction_name or ch.reaction_index}"
        )
    lines.append(f"Q[none] = 1 - (Q[1] + ... + Q[{spec.n_channels}])")
    return "\n".join(lines) + "\n"


def spec_to_dict(spec: FilterSpec) -> dict:
    """Machine-readable form; `spec_from_dict` inverts it losslessly."""
    return {
        "measured": list(spec.measured),
        "channels": [
            {
                "reaction_index": ch.reaction_index,
                "reaction_name": ch.reaction_name,
                "rate_constant": ch.rate_constant,
                "observed_delta": {n: d for n, d in ch.observed_delta},
                "observed_monomial": {n: e for n, e in ch.observed_monomial},
                "moment": ch.moment.as_dict(),
            }
            for ch in spec.channels
        ],
    }


def spec_from_dict(data: Mapping) -> FilterSpec:
    channels = tuple(
        FilterChannel(
            reaction_index=int(entry["reaction_index"]),
            reaction_name=str(entry["reaction_name"]),
            rate_constant=float(entry["rate_constant"]),
            observed_delta=tuple((str(n), int(d)) for n, d in entry["observed_delta"].items()),
            observed_monomial=tuple(
                (str(n), int(e)) for n, e in entry["observed_monomial"].items()
            ),
            moment=MomentDescriptor.from_dict(entry["moment"]),
        )
        for entry in data["channels"]
    )
    return FilterSpec(tuple(str(n) for n in data["measured"]), channels)
