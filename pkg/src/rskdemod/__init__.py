"""Stochastic simulation and MAP demodulation of reaction-shift-keyed
molecular communication links on a voxel lattice."""

from .chem import (
    NetworkError,
    RateScaling,
    Reaction,
    ReactionNetwork,
    Species,
    format_reaction,
    make_ligand_receptor_network,
    net_change,
    parse_reaction,
    scale_rate,
    species_list,
)
from .demod import (
    Decision,
    DemodState,
    ModelMismatchError,
    MomentTable,
    decide,
    estimate_moments,
    integrate_filter,
    required_moments,
    z_trace,
    z_trace_csv,
)
from .filtergen import (
    DtTooLargeError,
    FilterChannel,
    FilterSpec,
    MomentDescriptor,
    ReactionGraph,
    build_reaction_graph,
    evaluate_channel_probability,
    general_form_coefficients,
    generate_filter_spec,
    no_reaction_probability,
    render_text,
    spec_from_dict,
    spec_to_dict,
)
from .rdme import (
    Absorbing,
    CtmpSystem,
    JumpEvent,
    ObservedHistory,
    Reflecting,
    SimulationError,
    Trajectory,
    TransmitterModel,
    VoxelGrid,
    build_system,
    observe,
    sample_counts,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "Absorbing",
    "CtmpSystem",
    "Decision",
    "DemodState",
    "DtTooLargeError",
    "FilterChannel",
    "FilterSpec",
    "JumpEvent",
    "ModelMismatchError",
    "MomentDescriptor",
    "MomentTable",
    "NetworkError",
    "ObservedHistory",
    "RateScaling",
    "Reaction",
    "ReactionGraph",
    "ReactionNetwork",
    "Reflecting",
    "SimulationError",
    "Species",
    "Trajectory",
    "TransmitterModel",
    "VoxelGrid",
    "build_reaction_graph",
    "build_system",
    "decide",
    "estimate_moments",
    "evaluate_channel_probability",
    "format_reaction",
    "general_form_coefficients",
    "generate_filter_spec",
    "integrate_filter",
    "make_ligand_receptor_network",
    "net_change",
    "no_reaction_probability",
    "observe",
    "parse_reaction",
    "render_text",
    "required_moments",
    "sample_counts",
    "scale_rate",
    "simulate",
    "spec_from_dict",
    "spec_to_dict",
    "species_list",
    "z_trace",
    "z_trace_csv",
]
