"""Preparation of the D=2 matrix-product-state path by RG and sequential circuits."""

from __future__ import annotations

from .circuit import Circuit, Gate
from .gate_compiler import (
    GateSequence,
    Isometry,
    check_block_symmetry,
    compile_circuit,
    decompose_isometry_generic,
    decompose_structured_16x4,
    embed_isometry_as_unitary,
)
from .layout_router import (
    CouplingMap,
    Layout,
    RoutedCircuit,
    heavy_hex_graph,
    native_depth,
    ring_layout,
    route_circuit,
)
from .observables import (
    ObservableSum,
    PauliString,
    energy_density,
    evaluate,
    hamiltonian,
    string_local,
    string_nonlocal,
)
from .rg_synthesis import (
    approximated_state,
    approximation_error,
    block_and_decompose,
    fixed_point_state,
    make_plan,
    rg_step,
    synthesize_rg_circuit,
)
from .sequential_synthesis import make_sequential_plan, postselect_probability, synthesize_seq_circuit
from .simulator import NoiseModel, SimResult, run_exact, run_mps, run_statevector, run_trajectories
from .uniform_mps import (
    DomainError,
    FiniteMps,
    UniformMps,
    build_target_tensor,
    correlation_length,
    target_state,
    transfer_spectrum,
)

__version__ = "0.1.0"
