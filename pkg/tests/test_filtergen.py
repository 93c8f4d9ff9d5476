import json

import pytest
from hypothesis import given, settings, strategies as st

from rskdemod.chem import (
    NetworkError,
    Reaction,
    ReactionNetwork,
    make_ligand_receptor_network,
    species_list,
)
from rskdemod.filtergen import (
    DtTooLargeError,
    MomentDescriptor,
    build_reaction_graph,
    evaluate_channel_probability,
    general_form_coefficients,
    generate_filter_spec,
    no_reaction_probability,
    render_text,
    spec_from_dict,
    spec_to_dict,
)

LAM1, MU1, LAM2, MU2 = 2.0, 3.0, 5.0, 7.0


@pytest.fixture
def two_site():
    return make_ligand_receptor_network(2, (LAM1, LAM2), (MU1, MU2))


def by_constant(spec):
    return {ch.rate_constant: ch for ch in spec.channels}


class TestReactionGraph:
    def test_measure_both_complexes(self, two_site):
        graph = build_reaction_graph(two_site, ("C1", "C2"))
        assert graph.measured_nodes == {"C1", "C2"}
        assert graph.unmeasured_nodes == {"S", "E"}
        assert graph.m_reactions == 4
        assert (graph.m_observed, graph.m_unmeasured) == (2, 2)

    def test_measure_c2_only_excludes_first_site(self, two_site):
        graph = build_reaction_graph(two_site, ("C2",))
        assert graph.m_observed == 1
        assert graph.unmeasured_nodes == {"S", "C1"}
        assert graph.m_reactions == 2
        names = {two_site.reactions[r].name for r in graph.reaction_nodes}
        assert names == {"bind2", "unbind2"}

    def test_measure_c1_only(self, two_site):
        graph = build_reaction_graph(two_site, ("C1",))
        assert graph.m_observed == 1
        assert graph.unmeasured_nodes == {"S", "E", "C2"}
        assert graph.m_reactions == 4

    def test_isolated_reaction_excluded(self):
        net = ReactionNetwork(
            species_list(["A", "B", "X"]),
            (
                Reaction({"A": 1}, {"B": 1}, 1.0, name="decay"),
                Reaction({"X": 1}, {"A": 1}, 1.0, name="feed"),
            ),
        )
        graph = build_reaction_graph(net, ("X",))
        assert len(graph.reaction_nodes) == 1
        assert net.reactions[graph.reaction_nodes[0]].name == "feed"

    def test_edges_follow_reactant_product_direction(self, two_site):
        graph = build_reaction_graph(two_site, ("C2",))
        bind2 = two_site.reactions[2]
        assert bind2.name == "bind2"
        assert ("S", 2) in graph.reactant_edges
        assert ("C1", 2) in graph.reactant_edges
        assert (2, "C2") in graph.product_edges

    def test_unknown_measured_species_rejected(self, two_site):
        with pytest.raises(NetworkError):
            build_reaction_graph(two_site, ("C9",))
        with pytest.raises(NetworkError):
            build_reaction_graph(two_site, ())


class TestGoldenCoefficientTables:
    """The generated general-form rows for the two-binding-site circuit."""

    def test_measure_c1_rows(self, two_site):
        rows = {
            two_site.reactions[r].rate_constant: general_form_coefficients(two_site, ("C1",), r)
            for r in build_reaction_graph(two_site, ("C1",)).reaction_nodes
        }
        assert rows[LAM2] == ({"C1": 1}, {"S": 1}, {}, {"C2": 1})
        assert rows[MU2] == ({}, {"C2": 1}, {"C1": 1}, {"S": 1})
        assert rows[LAM1] == ({}, {"S": 1, "E": 1}, {"C1": 1}, {})
        assert rows[MU1] == ({"C1": 1}, {}, {}, {"S": 1, "E": 1})

    def test_measure_c2_rows(self, two_site):
        rows = {
            two_site.reactions[r].rate_constant: general_form_coefficients(two_site, ("C2",), r)
            for r in build_reaction_graph(two_site, ("C2",)).reaction_nodes
        }
        assert rows[LAM2] == ({}, {"S": 1, "C1": 1}, {"C2": 1}, {})
        assert rows[MU2] == ({"C2": 1}, {}, {}, {"S": 1, "C1": 1})
        assert set(rows) == {LAM2, MU2}

    def test_measure_both_rows(self, two_site):
        rows = {
            two_site.reactions[r].rate_constant: general_form_coefficients(
                two_site, ("C1", "C2"), r
            )
            for r in build_reaction_graph(two_site, ("C1", "C2")).reaction_nodes
        }
        assert rows[LAM2] == ({"C1": 1}, {"S": 1}, {"C2": 1}, {})
        assert rows[MU2] == ({"C2": 1}, {}, {"C1": 1}, {"S": 1})
        assert rows[LAM1] == ({}, {"S": 1, "E": 1}, {"C1": 1}, {})
        assert rows[MU1] == ({"C1": 1}, {}, {}, {"S": 1, "E": 1})


class TestGoldenFilterSpecs:
    """Channel deltas, monomials, moments, and constants for the two-site
    circuit match the hand-derived filter terms for every measurement choice."""

    def test_measure_c1_terms(self, two_site):
        spec = generate_filter_spec(two_site, ("C1",))
        assert spec.n_channels == 4
        ch = by_constant(spec)
        assert ch[LAM2].delta_dict() == {"C1": -1}
        assert ch[LAM2].monomial_dict() == {"C1": 1}
        assert ch[LAM2].moment.as_dict() == {"S": 1}
        assert ch[MU1].delta_dict() == {"C1": -1}
        assert ch[MU1].monomial_dict() == {"C1": 1}
        assert ch[MU1].moment.is_constant
        assert ch[LAM1].delta_dict() == {"C1": +1}
        assert ch[LAM1].monomial_dict() == {}
        assert ch[LAM1].moment.as_dict() == {"S": 1, "E": 1}
        assert ch[MU2].delta_dict() == {"C1": +1}
        assert ch[MU2].monomial_dict() == {}
        assert ch[MU2].moment.as_dict() == {"C2": 1}

    def test_measure_c2_terms(self, two_site):
        spec = generate_filter_spec(two_site, ("C2",))
        assert spec.n_channels == 2
        ch = by_constant(spec)
        assert ch[LAM2].delta_dict() == {"C2": +1}
        assert ch[LAM2].monomial_dict() == {}
        assert ch[LAM2].moment.as_dict() == {"S": 1, "C1": 1}
        assert ch[MU2].delta_dict() == {"C2": -1}
        assert ch[MU2].monomial_dict() == {"C2": 1}
        assert ch[MU2].moment.is_constant

    def test_measure_both_terms(self, two_site):
        spec = generate_filter_spec(two_site, ("C1", "C2"))
        assert spec.n_channels == 4
        ch = by_constant(spec)
        assert ch[LAM2].delta_dict() == {"C1": -1, "C2": +1}
        assert ch[LAM2].monomial_dict() == {"C1": 1}
        assert ch[LAM2].moment.as_dict() == {"S": 1}
        assert ch[MU2].delta_dict() == {"C1": +1, "C2": -1}
        assert ch[MU2].monomial_dict() == {"C2": 1}
        assert ch[MU2].moment.is_constant
        assert ch[LAM1].delta_dict() == {"C1": +1}
        assert ch[LAM1].moment.as_dict() == {"S": 1, "E": 1}
        assert ch[MU1].delta_dict() == {"C1": -1}
        assert ch[MU1].monomial_dict() == {"C1": 1}
        assert ch[MU1].moment.is_constant

    def test_channel_order_follows_declaration(self, two_site):
        spec = generate_filter_spec(two_site, ("C1",))
        assert [ch.reaction_name for ch in spec.channels] == [
            "bind1",
            "unbind1",
            "bind2",
            "unbind2",
        ]

    def test_five_term_structure_when_measuring_both(self, two_site):
        # Four reaction indicators plus the implicit no-change term.
        spec = generate_filter_spec(two_site, ("C1", "C2"))
        deltas = {ch.observed_delta for ch in spec.channels}
        assert deltas == {
            (("C1", -1), ("C2", 1)),
            (("C1", 1), ("C2", -1)),
            (("C1", 1),),
            (("C1", -1),),
        }


class TestChannelProbability:
    def test_arithmetic(self, two_site):
        spec = generate_filter_spec(two_site, ("C1",))
        ladder = by_constant(spec)[LAM2]
        # rate_constant * b1 * E[n_S] * dt with lam2=5, b1=2, moment 3.
        value = evaluate_channel_probability(ladder, {"C1": 2}, 3.0, 1e-3)
        assert value == pytest.approx(5.0 * 2 * 3 * 1e-3)

    def test_zero_count_zero_probability(self, two_site):
        spec = generate_filter_spec(two_site, ("C1",))
        ladder = by_constant(spec)[LAM2]
        assert evaluate_channel_probability(ladder, {"C1": 0}, 3.0, 1e-3) == 0.0

    def test_no_reaction_complement(self, two_site):
        spec = generate_filter_spec(two_site, ("C2",))
        moments = {
            MomentDescriptor.from_dict({"S": 1, "C1": 1}): 4.0,
        }
        counts = {"C2": 2}
        dt = 1e-2
        total = LAM2 * 4.0 * dt + MU2 * 2 * dt
        q_none = no_reaction_probability(spec, counts, moments, dt)
        assert q_none == pytest.approx(1.0 - total, abs=1e-15)

    def test_dt_too_large(self, two_site):
        spec = generate_filter_spec(two_site, ("C2",))
        moments = {MomentDescriptor.from_dict({"S": 1, "C1": 1}): 50.0}
        with pytest.raises(DtTooLargeError):
            no_reaction_probability(spec, {"C2": 5}, moments, 0.5)


class TestSilentChannels:
    def test_catalytic_measured_reactant_kept_but_silent(self):
        net = ReactionNetwork(
            species_list(["C", "S", "P"]),
            (Reaction({"C": 1, "S": 1}, {"C": 1, "P": 1}, 1.5, name="catalyze"),),
        )
        spec = generate_filter_spec(net, ("C",))
        assert spec.n_channels == 1
        ch = spec.channels[0]
        assert ch.is_silent
        assert ch.monomial_dict() == {"C": 1}
        assert ch.moment.as_dict() == {"S": 1}
        # Silent channels never appear in the delta lookup used for jumps.
        assert spec.channels_by_delta() == {}
        # They still count against the no-reaction mass.
        q_none = no_reaction_probability(
            spec, {"C": 2}, {MomentDescriptor.from_dict({"S": 1}): 1.0}, 0.01
        )
        assert q_none == pytest.approx(1.0 - 1.5 * 2 * 1.0 * 0.01)


class TestRoundTrip:
    def test_dict_round_trip(self, two_site):
        for measured in [("C1",), ("C2",), ("C1", "C2")]:
            spec = generate_filter_spec(two_site, measured)
            again = spec_from_dict(json.loads(json.dumps(spec_to_dict(spec))))
            assert again == spec

    def test_render_mentions_all_terms(self, two_site):
        text = render_text(generate_filter_spec(two_site, ("C1",)))
        term_lines = [ln for ln in text.splitlines() if ln.startswith("Q[")]
        assert len(term_lines) == 5  # four channels plus the no-reaction line
        assert "E[n(E)*n(S)]" in text
        assert "n(C1)" in text

    def test_empty_moment_renders_as_one(self, two_site):
        text = render_text(generate_filter_spec(two_site, ("C2",)))
        assert "* 1 * dt" in text


# -- property tests over random networks ------------------------------------

NAMES = ["A", "B", "C", "D", "F"]


@st.composite
def networks(draw):
    n_species = draw(st.integers(2, 5))
    names = NAMES[:n_species]
    n_reactions = draw(st.integers(1, 4))
    reactions = []
    for i in range(n_reactions):
        reactants = draw(
            st.dictionaries(st.sampled_from(names), st.integers(1, 2), max_size=2)
        )
        while sum(reactants.values()) > 2:
            reactants.popitem()
        products = draw(
            st.dictionaries(st.sampled_from(names), st.integers(1, 2), max_size=2)
        )
        if not reactants and not products:
            products = {names[0]: 1}
        rate = draw(st.floats(0.1, 10.0))
        reactions.append(Reaction(reactants, products, rate, name=f"r{i}"))
    measured = draw(
        st.lists(st.sampled_from(names), min_size=1, max_size=n_species, unique=True)
    )
    return ReactionNetwork(species_list(names), tuple(reactions)), tuple(measured)


@given(networks())
@settings(max_examples=200, deadline=None)
def test_channel_count_is_number_of_involved_reactions(net_measured):
    network, measured = net_measured
    spec = generate_filter_spec(network, measured)
    involved = [
        r for r in network.reactions if set(r.reactants) | set(r.products) & set(measured)
        and (set(r.reactants) | set(r.products)) & set(measured)
    ]
    assert spec.n_channels == len(involved)
    graph = build_reaction_graph(network, measured)
    assert graph.m_reactions == spec.n_channels


@given(networks())
@settings(max_examples=200, deadline=None)
def test_exclusion_rule(net_measured):
    network, measured = net_measured
    spec = generate_filter_spec(network, measured)
    mset = set(measured)
    in_spec = {ch.reaction_index for ch in spec.channels}
    for rid, rxn in enumerate(network.reactions):
        touches = bool((set(rxn.reactants) | set(rxn.products)) & mset)
        assert (rid in in_spec) == touches


@given(networks(), st.data())
@settings(max_examples=200, deadline=None)
def test_normalization_sums_to_one(net_measured, data):
    network, measured = net_measured
    spec = generate_filter_spec(network, measured)
    counts = {
        name: data.draw(st.integers(0, 10), label=f"count[{name}]") for name in measured
    }
    moments = {
        ch.moment: data.draw(st.floats(0.0, 5.0), label="moment")
        for ch in spec.channels
        if not ch.moment.is_constant
    }
    total_rate = sum(
        ch.rate(counts, 1.0 if ch.moment.is_constant else moments[ch.moment])
        for ch in spec.channels
    )
    dt = 0.5 / (total_rate + 1.0)
    q_sum = sum(
        evaluate_channel_probability(
            ch, counts, 1.0 if ch.moment.is_constant else moments[ch.moment], dt
        )
        for ch in spec.channels
    )
    q_none = no_reaction_probability(spec, counts, moments, dt)
    assert abs(q_sum + q_none - 1.0) <= 1e-12


@given(networks())
@settings(max_examples=150, deadline=None)
def test_relabeling_symmetry(net_measured):
    network, measured = net_measured
    mapping = {name: f"{name}x" for name in network.species_names}

    renamed_net = ReactionNetwork(
        species_list([mapping[sp.name] for sp in network.species]),
        tuple(
            Reaction(
                {mapping[n]: s for n, s in r.reactants.items()},
                {mapping[n]: s for n, s in r.products.items()},
                r.rate_constant,
                name=r.name,
            )
            for r in network.reactions
        ),
    )
    spec = generate_filter_spec(network, measured)
    renamed_spec = generate_filter_spec(renamed_net, tuple(mapping[m] for m in measured))
    assert len(spec.channels) == len(renamed_spec.channels)
    for a, b in zip(spec.channels, renamed_spec.channels):
        assert b.rate_constant == a.rate_constant
        assert b.delta_dict() == {mapping[n]: d for n, d in a.delta_dict().items()}
        assert b.monomial_dict() == {mapping[n]: e for n, e in a.monomial_dict().items()}
        assert b.moment.as_dict() == {mapping[n]: e for n, e in a.moment.as_dict().items()}
