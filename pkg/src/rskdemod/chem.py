"""Chemical species, elementary mass-action reactions, and reaction networks.

Rate constants throughout this package are count-based: per second for
unimolecular channels and per second per molecule pair for bimolecular ones.
Converting a concentration-based bimolecular constant is an explicit step
(`scale_rate`), never an implicit one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


class NetworkError(ValueError):
    """A species, reaction, or network failed validation."""


@dataclass(frozen=True)
class Species:
    """A chemical species: a small non-negative index plus a display name."""

    index: int
    name: str

    def __post_init__(self) -> None:
        if self.index < 0:
            raise NetworkError(f"species index must be >= 0, got {self.index}")
        if not self.name:
            raise NetworkError("species name must be nonempty")


@dataclass(frozen=True)
class RateScaling:
    """Voxel volume (in um^3) used to convert concentration-based constants."""

    volume: float

    def __post_init__(self) -> None:
        if not self.volume > 0:
            raise NetworkError(f"voxel volume must be positive, got {self.volume}")


def scale_rate(rate_constant: float, scaling: RateScaling, order: int = 2) -> float:
    """Convert a concentration-based rate constant to its count-based value.

    Bimolecular constants (order 2) are divided by the voxel volume;
    unimolecular constants (order 1) pass through unchanged. The caller
    states the molecularity because the constant alone does not carry it.
    """
    if not rate_constant > 0:
        raise NetworkError(f"rate constant must be positive, got {rate_constant}")
    if order == 1:
        return rate_constant
    if order == 2:
        return rate_constant / scaling.volume
    raise NetworkError(f"molecularity must be 1 or 2, got {order}")


@dataclass(frozen=True)
class Reaction:
    """One irreversible elementary reaction with a count-based rate constant.

    Reactants and products map species names to stoichiometric multiplicities.
    A species may appear on both sides (catalytic forms); total reactant
    multiplicity is limited to two, matching elementary kinetics.
    """

    reactants: dict[str, int]
    products: dict[str, int]
    rate_constant: float
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "reactants", _clean_side(self.reactants, "reactant"))
        object.__setattr__(self, "products", _clean_side(self.products, "product"))
        if not self.reactants and not self.products:
            raise NetworkError("reaction must have at least one reactant or product")
        if sum(self.reactants.values()) > 2:
            raise NetworkError(
                f"total reactant multiplicity must be <= 2 "
                f"(elementary reactions only), got {sum(self.reactants.values())}"
            )
        if not self.rate_constant > 0:
            raise NetworkError(
                f"rate constant must be positive, got {self.rate_constant}"
            )

    @property
    def order(self) -> int:
        """Molecularity: total reactant multiplicity (0, 1, or 2)."""
        return sum(self.reactants.values())

    def species_names(self) -> set[str]:
        return set(self.reactants) | set(self.products)


def _clean_side(side: dict[str, int], label: str) -> dict[str, int]:
    cleaned: dict[str, int] = {}
    for name, stoich in side.items():
        if stoich < 0:
            raise NetworkError(f"{label} stoichiometry must be >= 0, got {name}:{stoich}")
        if stoich > 0:
            cleaned[name] = int(stoich)
    return cleaned


def net_change(reaction: Reaction) -> dict[str, int]:
    """Net stoichiometric change of a reaction: products minus reactants.

    Species with zero net change (catalysts) are omitted.
    """
    delta: dict[str, int] = {}
    for name, stoich in reaction.products.items():
        delta[name] = delta.get(name, 0) + stoich
    for name, stoich in reaction.reactants.items():
        delta[name] = delta.get(name, 0) - stoich
    return {name: d for name, d in delta.items() if d != 0}


@dataclass
class ReactionNetwork:
    """An ordered list of species plus an ordered list of reactions.

    Treat instances as immutable after construction; they are shared freely
    across concurrent simulation trials.
    """

    species: tuple[Species, ...]
    reactions: tuple[Reaction, ...]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.species = tuple(self.species)
        self.reactions = tuple(self.reactions)
        names = [sp.name for sp in self.species]
        indices = [sp.index for sp in self.species]
        if len(set(names)) != len(names):
            raise NetworkError(f"duplicate species names: {names}")
        if len(set(indices)) != len(indices):
            raise NetworkError(f"duplicate species indices: {indices}")
        self._index = {sp.name: i for i, sp in enumerate(self.species)}
        for rxn in self.reactions:
            missing = rxn.species_names() - set(names)
            if missing:
                raise NetworkError(
                    f"reaction {rxn.name or format_reaction(rxn)!r} references "
                    f"undeclared species {sorted(missing)}"
                )

    @property
    def species_names(self) -> tuple[str, ...]:
        return tuple(sp.name for sp in self.species)

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise NetworkError(f"unknown species {name!r}") from None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ReactionNetwork):
            return NotImplemented
        return self.species == other.species and self.reactions == other.reactions


def species_list(names: list[str] | tuple[str, ...]) -> tuple[Species, ...]:
    """Build a species tuple with indices assigned by position."""
    return tuple(Species(i, name) for i, name in enumerate(names))


def make_ligand_receptor_network(
    n_sites: int, lambdas: tuple[float, ...] | list[float], mus: tuple[float, ...] | list[float]
) -> ReactionNetwork:
    """Receiver circuit: a receptor E with `n_sites` sequential binding sites.

    Species are S (the signalling ligand), E (unbound receptor), and the
    complexes C1..Cn. The chain is

        S + E   <-> C1
        S + C_k <-> C_{k+1}      for k = 1 .. n_sites-1

    with forward constants ``lambdas[k]`` (already volume-scaled,
    count-based) and reverse constants ``mus[k]``. The forward/reverse pair
    is stored as two independent irreversible reactions named ``bind{k}``
    and ``unbind{k}``.
    """
    if n_sites < 1:
        raise NetworkError(f"n_sites must be >= 1, got {n_sites}")
    if len(lambdas) != n_sites or len(mus) != n_sites:
        raise NetworkError(
            f"need {n_sites} forward and reverse constants, "
            f"got {len(lambdas)} and {len(mus)}"
        )
    names = ["S", "E"] + [f"C{k}" for k in range(1, n_sites + 1)]
    reactions: list[Reaction] = []
    for k in range(1, n_sites + 1):
        partner = "E" if k == 1 else f"C{k - 1}"
        complex_k = f"C{k}"
        reactions.append(
            Reaction({"S": 1, partner: 1}, {complex_k: 1}, lambdas[k - 1], name=f"bind{k}")
        )
        reactions.append(
            Reaction({complex_k: 1}, {"S": 1, partner: 1}, mus[k - 1], name=f"unbind{k}")
        )
    return ReactionNetwork(species_list(names), tuple(reactions))


_TERM_RE = re.compile(r"^\s*(?:(\d+)\s*\*?\s*)?([A-Za-z_]\w*)\s*$")


def parse_reaction(text: str, name: str = "") -> Reaction:
    """Parse ``"S + E -> C1 @ 1.5"`` into a Reaction.

    Either side may be empty (``"-> S @ 10"`` is a pure source); a ``"0"``
    term also denotes an empty side. Multiplicities are written as a
    leading integer (``"2 S"``).
    """
    if "@" not in text:
        raise NetworkError(f"missing '@ rate' in reaction {text!r}")
    body, rate_text = text.rsplit("@", 1)
    if "->" not in body:
        raise NetworkError(f"missing '->' in reaction {text!r}")
    lhs, rhs = body.split("->", 1)
    try:
        rate = float(rate_text)
    except ValueError:
        raise NetworkError(f"bad rate {rate_text!r} in reaction {text!r}") from None
    return Reaction(_parse_side(lhs, text), _parse_side(rhs, text), rate, name=name)


def _parse_side(side: str, context: str) -> dict[str, int]:
    side = side.strip()
    if not side or side == "0":
        return {}
    out: dict[str, int] = {}
    for term in side.split("+"):
        m = _TERM_RE.match(term)
        if m is None:
            raise NetworkError(f"bad term {term.strip()!r} in reaction {context!r}")
        mult = int(m.group(1)) if m.group(1) else 1
        out[m.group(2)] = out.get(m.group(2), 0) + mult
    return out


def format_reaction(reaction: Reaction) -> str:
    """Inverse of `parse_reaction` (up to whitespace)."""

    def fmt(side: dict[str, int]) -> str:
        if not side:
            return "0"
        return " + ".join(
            name if mult == 1 else f"{mult} {name}" for name, mult in side.items()
        )

    return f"{fmt(reaction.reactants)} -> {fmt(reaction.products)} @ {reaction.rate_constant!r}"
