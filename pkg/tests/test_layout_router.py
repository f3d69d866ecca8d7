from __future__ import annotations

import networkx as nx
import numpy as np
import pytest

from mpsprep.circuit import Circuit, Gate
from mpsprep.layout_router import (
    RG_BLOCK,
    CouplingMap,
    Layout,
    LayoutError,
    RoutingError,
    find_ring_layout,
    heavy_hex_graph,
    native_depth,
    ring_layout,
    route_circuit,
    standard_deposits,
)
from mpsprep.rg_synthesis import synthesize_rg_circuit
from mpsprep.sequential_synthesis import synthesize_seq_circuit
from oracles import fidelity, simulate

NS = (16, 32, 48, 64, 80)


@pytest.fixture(scope="module")
def cmap():
    return heavy_hex_graph(8, 16)


def _expected_counts(rows: int, cols: int) -> tuple[int, int]:
    bridges = 0
    for gap in range(rows - 1):
        first = 3 if gap % 2 == 0 else 1
        bridges += len([c for c in range(cols) if c % 4 == first])
    return rows * cols + bridges, rows * (cols - 1) + 2 * bridges


def test_reference_device(cmap):
    assert len(cmap.vertices) == 156
    assert cmap.max_degree() == 3
    assert nx.is_connected(cmap.graph)


@pytest.mark.parametrize(("rows", "cols"), [(2, 4), (2, 8), (3, 5), (3, 8), (4, 12), (5, 9), (8, 16)])
def test_heavy_hex_counts_and_shape(rows, cols):
    cm = heavy_hex_graph(rows, cols)
    nv, ne = _expected_counts(rows, cols)
    assert (len(cm.vertices), len(cm.edges)) == (nv, ne)
    assert cm.max_degree() <= 3
    # Every edge of the underlying hexagonal lattice is subdivided, so two
    # degree-3 vertices are never adjacent.
    deg = dict(cm.graph.degree)
    assert not any(deg[a] == 3 and deg[b] == 3 for a, b in cm.edges)


def test_heavy_hex_elementary_cycles_have_length_12():
    cm = heavy_hex_graph(3, 8)
    lengths = {len(c) for c in nx.minimum_cycle_basis(cm.graph)}
    assert lengths == {12}


def test_degenerate_sizes_rejected():
    with pytest.raises(ValueError):
        heavy_hex_graph(1, 16)
    with pytest.raises(ValueError):
        heavy_hex_graph(4, 2)


def test_coupling_map_json_round_trip(cmap):
    back = CouplingMap.from_json(cmap.to_json())
    assert back == cmap and back.topology == cmap.topology


def _check_rg_layout(layout, cm):
    assert len(set(layout.assignment)) == layout.n_sites
    cyc = layout.cycle
    for a, b in zip(cyc, cyc[1:] + cyc[:1]):
        assert cm.has_edge(a, b)
    for block in layout.blocks():
        assert len(block) == RG_BLOCK
        line = [block[s] for s in (0, 1, 3, 4, 5, 7)]
        for a, b in zip(line, line[1:]):
            assert cm.has_edge(a, b)
        assert cm.has_edge(block[2], block[1]) and cm.has_edge(block[6], block[4])
    last = layout.blocks()
    for left, right in zip(last, last[1:] + last[:1]):
        assert cm.has_edge(left[7], right[0])


def test_rg_layout_examples(cmap):
    layout = ring_layout(16, cmap, "rg")
    assert len(layout.blocks()) == 2
    _check_rg_layout(layout, cmap)
    big = ring_layout(80, cmap, "rg")
    _check_rg_layout(big, cmap)
    with pytest.raises(ValueError):
        ring_layout(20, cmap, "rg")


@pytest.mark.parametrize("n", NS)
def test_sequential_layouts(cmap, n):
    layout = ring_layout(n, cmap, "sequential")
    assert len(set(layout.assignment)) == n + 2
    cyc = layout.cycle
    assert len(cyc) == n - 4
    for a, b in zip(cyc, cyc[1:] + cyc[:1]):
        assert cmap.has_edge(a, b)
    on_cycle = set(cyc)
    deposits = set(layout.deposits)
    assert deposits == set(standard_deposits(n))
    for k in deposits:
        p = layout.assignment[k + 1]
        assert p not in on_cycle
        assert any(nb in on_cycle for nb in cmap.graph[p])


def test_layout_json_round_trip(cmap):
    layout = ring_layout(32, cmap, "sequential")
    assert Layout.from_json(layout.to_json()) == layout


def test_no_ring_on_small_map():
    with pytest.raises(LayoutError):
        find_ring_layout(80, heavy_hex_graph(2, 8), "rg")


def _synthetic_rg_map() -> CouplingMap:
    # One eight-qubit block closed on itself: a six-cycle with two pendants.
    cycle = [(i, (i + 1) % 6) for i in range(6)]
    return CouplingMap.from_edges(cycle + [(1, 6), (3, 7)])


def test_routed_rg_semantics_on_synthetic_ring():
    cm = _synthetic_rg_map()
    circuit = synthesize_rg_circuit(0.5, 8, 4)
    routed = route_circuit(circuit, find_ring_layout(8, cm, "rg"), cm)
    a, _ = simulate(circuit)
    b, _ = simulate(routed.circuit)
    assert fidelity(a, b) >= 1 - 1e-9


def test_routed_sequential_semantics_on_synthetic_ring():
    n = 8
    cm = CouplingMap.from_edges([(i, (i + 1) % (n + 2)) for i in range(n + 2)])
    circuit = synthesize_seq_circuit(0.3, n)
    routed = route_circuit(circuit, find_ring_layout(n, cm, "sequential"), cm)
    assert routed.swap_count == 0
    a, pa = simulate(circuit)
    b, pb = simulate(routed.circuit)
    assert fidelity(a, b) >= 1 - 1e-9
    assert pa == pytest.approx(pb, abs=1e-10)


@pytest.mark.parametrize("g", [0.5, -0.7])
def test_routed_semantics_on_device(cmap, g):
    circuit = synthesize_rg_circuit(g, 16, 4)
    routed = route_circuit(circuit, ring_layout(16, cmap, "rg"), cmap)
    a, _ = simulate(circuit)
    b, _ = simulate(routed.circuit)
    assert fidelity(a, b) >= 1 - 1e-9


def test_routed_sequential_on_device(cmap):
    n = 16
    circuit = synthesize_seq_circuit(0.5, n, standard_deposits(n))
    routed = route_circuit(circuit, ring_layout(n, cmap, "sequential"), cmap)
    assert routed.swap_count == 0
    a, pa = simulate(circuit)
    b, pb = simulate(routed.circuit)
    assert fidelity(a, b) >= 1 - 1e-9
    assert pa == pytest.approx(pb, abs=1e-10)


def _assert_legal(routed, cm):
    for g in routed.circuit.gates:
        if len(g.qubits) == 2 and g.kind != "postselect":
            assert g.kind == "cx"
            assert cm.has_edge(routed.physical[g.qubits[0]], routed.physical[g.qubits[1]])


@pytest.mark.parametrize(("g", "q"), [(0.5, 4), (-0.5, 4), (0.1, 8), (-0.1, 8)])
def test_rg_depth_constant_in_n(cmap, g, q):
    depths = set()
    for n in NS:
        routed = route_circuit(synthesize_rg_circuit(g, n, q), ring_layout(n, cmap, "rg"), cmap)
        _assert_legal(routed, cmap)
        depths.add(routed.two_qubit_depth)
        assert native_depth(routed) == routed.two_qubit_depth
    assert len(depths) == 1


def test_sequential_depth_affine_in_n(cmap):
    depths = []
    for n in NS:
        routed = route_circuit(
            synthesize_seq_circuit(0.5, n, standard_deposits(n)), ring_layout(n, cmap, "sequential"), cmap
        )
        _assert_legal(routed, cmap)
        assert routed.swap_count == 0
        depths.append(routed.two_qubit_depth)
    steps = np.diff(depths)
    assert len(set(steps.tolist())) == 1 and steps[0] > 0


def test_native_depth_empty_and_serial():
    assert native_depth(Circuit(3)) == 0
    c = Circuit(3, [Gate("cx", (0, 1)), Gate("cx", (1, 2)), Gate("cx", (0, 1))])
    assert native_depth(c) == 3
    par = Circuit(4, [Gate("cx", (0, 1)), Gate("cx", (2, 3))])
    assert native_depth(par) == 1


def test_unroutable_gate():
    cm = CouplingMap.from_edges([(0, 1), (2, 3)])
    layout = Layout("custom", 4, (0, 1, 2, 3), ())
    c = Circuit(4, [Gate("cx", (0, 3))], list(range(4)))
    with pytest.raises(RoutingError):
        route_circuit(c, layout, cm)
