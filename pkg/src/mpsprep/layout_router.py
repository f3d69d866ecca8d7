"""Heavy-hex coupling maps, ring layouts and SWAP-chain routing.

Heavy-hex graphs here consist of ``rows`` horizontal lines of ``cols`` qubits.
Consecutive lines are joined by bridge qubits: gap ``r`` has bridges at
columns ``c = 3 (mod 4)`` when ``r`` is even and ``c = 1 (mod 4)`` when ``r``
is odd. ``rows=8, cols=16`` gives the 156-qubit reference device.

Ring layouts are simple cycles of the coupling map. Every cycle of a
heavy-hex graph is the boundary of a connected set of hexagons, so the search
enumerates such sets in a fixed order and keeps the first one whose boundary
has the requested length and can host the required pendant qubits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Mapping, Sequence

import networkx as nx

from .circuit import Circuit, Gate
from .gate_compiler import compile_circuit

SUPPORTED_RING_SIZES = (16, 32, 48, 64, 80)
REFERENCE_SHAPE = (8, 16)
RG_BLOCK = 8
# Block sites along the ring, and the pendant sites with the ring offset of
# their host. Chosen to minimise SWAPs of the compiled block isometries.
RG_CYCLE_SITES = (0, 1, 3, 4, 5, 7)
RG_PENDANTS = {2: 1, 6: 3}


class LayoutError(ValueError):
    """Raised when no layout with the requested shape exists on the map."""


class RoutingError(ValueError):
    """Raised when gate operands cannot be brought together."""


@dataclass(frozen=True)
class CouplingMap:
    vertices: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    topology: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        vs = set(self.vertices)
        for a, b in self.edges:
            if a == b or a not in vs or b not in vs:
                raise ValueError(f"invalid edge ({a}, {b})")

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.vertices)
        g.add_edges_from(self.edges)
        return g

    def has_edge(self, a: int, b: int) -> bool:
        return self.graph.has_edge(a, b)

    def max_degree(self) -> int:
        return max((d for _, d in self.graph.degree), default=0)

    def to_json(self) -> dict:
        return {"topology": self.topology, "vertices": list(self.vertices), "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_json(cls, payload: Mapping) -> CouplingMap:
        edges = tuple(tuple(sorted(e)) for e in payload["edges"])
        return cls(tuple(payload["vertices"]), edges, dict(payload.get("topology", {})))

    @classmethod
    def from_edges(cls, edges: Sequence[tuple[int, int]]) -> CouplingMap:
        verts = sorted({q for e in edges for q in e})
        return cls(tuple(verts), tuple(tuple(sorted(e)) for e in edges), {"kind": "custom"})


def _bridge_columns(gap: int, cols: int) -> list[int]:
    return list(range(3 if gap % 2 == 0 else 1, cols, 4))


def heavy_hex_graph(rows: int = REFERENCE_SHAPE[0], cols: int = REFERENCE_SHAPE[1]) -> CouplingMap:
    """Heavy-hex map with ``rows`` qubit lines of length ``cols``.

    Row qubit ``(r, c)`` has id ``r * cols + c``; bridge qubits follow in gap order.
    """
    if rows < 2 or cols < 4:
        raise ValueError(f"heavy-hex needs rows >= 2 and cols >= 4, got {rows}x{cols}")
    edges = []
    for r in range(rows):
        edges += [(r * cols + c, r * cols + c + 1) for c in range(cols - 1)]
    nxt = rows * cols
    for gap in range(rows - 1):
        for c in _bridge_columns(gap, cols):
            edges += [(gap * cols + c, nxt), ((gap + 1) * cols + c, nxt)]
            nxt += 1
    cmap = CouplingMap(tuple(range(nxt)), tuple(tuple(sorted(e)) for e in edges), {"kind": "heavy_hex", "rows": rows, "cols": cols})
    if not nx.is_connected(cmap.graph):
        raise ValueError(f"heavy-hex {rows}x{cols} is disconnected")
    return cmap


def _hexagons(cmap: CouplingMap) -> list[frozenset[frozenset[int]]]:
    """Edge sets of the elementary 12-cycles of a heavy-hex map."""
    rows, cols = cmap.topology["rows"], cmap.topology["cols"]
    bridge_id: dict[tuple[int, int], int] = {}
    nxt = rows * cols
    for gap in range(rows - 1):
        for c in _bridge_columns(gap, cols):
            bridge_id[(gap, c)] = nxt
            nxt += 1
    hexes = []
    for gap in range(rows - 1):
        cs = _bridge_columns(gap, cols)
        for c0, c1 in zip(cs, cs[1:]):
            edges = set()
            for r in (gap, gap + 1):
                edges |= {frozenset((r * cols + c, r * cols + c + 1)) for c in range(c0, c1)}
            for c in (c0, c1):
                b = bridge_id[(gap, c)]
                edges |= {frozenset((gap * cols + c, b)), frozenset(((gap + 1) * cols + c, b))}
            hexes.append(frozenset(edges))
    return hexes


def _boundary_cycle(edges: set[frozenset[int]]) -> list[int] | None:
    """Vertices of ``edges`` in cycle order if they form one simple cycle."""
    adj: dict[int, list[int]] = {}
    for e in edges:
        a, b = tuple(e)
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    if any(len(v) != 2 for v in adj.values()):
        return None
    start = min(adj)
    order, prev, cur = [start], None, start
    while True:
        a, b = sorted(adj[cur])
        nxt = a if a != prev else b
        if nxt == start:
            break
        order.append(nxt)
        prev, cur = cur, nxt
    return order if len(order) == len(adj) else None


def _polyhex_cycles(cmap: CouplingMap, length: int) -> Iterator[list[int]]:
    hexes = _hexagons(cmap)
    nbrs = [sorted(j for j in range(len(hexes)) if j != i and hexes[i] & hexes[j]) for i in range(len(hexes))]
    max_cells = (length + 4 * 3 * 6) // 12 + 1
    for size in range(1, min(max_cells, len(hexes)) + 1):
        for root in range(len(hexes)):
            for cells in _connected_sets(root, size, nbrs):
                boundary: set[frozenset[int]] = set()
                for c in cells:
                    boundary ^= hexes[c]
                if len(boundary) != length:
                    continue
                cycle = _boundary_cycle(boundary)
                if cycle is not None:
                    yield cycle


def _connected_sets(root: int, size: int, nbrs: list[list[int]]) -> Iterator[tuple[int, ...]]:
    """Connected cell sets of ``size`` whose smallest member is ``root`` (each once)."""

    def extend(current: tuple[int, ...], frontier: list[int], banned: frozenset[int]):
        if len(current) == size:
            yield current
            return
        for i, cell in enumerate(frontier):
            new_banned = banned | frozenset(frontier[: i + 1])
            added = [x for x in nbrs[cell] if x > root and x not in new_banned and x not in current]
            rest = frontier[i + 1 :] + [x for x in added if x not in frontier]
            yield from extend(current + (cell,), rest, new_banned | frozenset(added))

    start = [x for x in nbrs[root] if x > root]
    yield from extend((root,), start, frozenset(start) | {root})


def _generic_cycles(cmap: CouplingMap, length: int) -> Iterator[list[int]]:
    seen = set()
    for cyc in nx.simple_cycles(cmap.graph, length_bound=length):
        if len(cyc) != length:
            continue
        key = frozenset(cyc)
        if key in seen:
            continue
        seen.add(key)
        # Normalise to a walk along edges starting at the smallest vertex.
        i = cyc.index(min(cyc))
        yield cyc[i:] + cyc[:i]


def _cycles(cmap: CouplingMap, length: int) -> Iterator[list[int]]:
    if length < 3:
        return iter(())
    if cmap.topology.get("kind") == "heavy_hex":
        return _polyhex_cycles(cmap, length)
    return _generic_cycles(cmap, length)


def _orientations(cycle: list[int]) -> Iterator[list[int]]:
    L = len(cycle)
    for direction in (1, -1):
        for offset in range(L):
            yield [cycle[(offset + direction * i) % L] for i in range(L)]


def _match_pendants(cmap: CouplingMap, ring: list[int], hosts: Sequence[int]) -> dict[int, int] | None:
    """Distinct off-ring neighbours for the ring positions ``hosts``."""
    on_ring = set(ring)
    g = nx.Graph()
    left = [("h", p) for p in hosts]
    g.add_nodes_from(left)
    for p in hosts:
        free = [v for v in sorted(cmap.graph[ring[p]]) if v not in on_ring]
        if not free:
            return None
        g.add_edges_from((("h", p), ("v", v)) for v in free)
    match = nx.bipartite.hopcroft_karp_matching(g, top_nodes=left)
    if any(("h", p) not in match for p in hosts):
        return None
    return {p: match[("h", p)][1] for p in hosts}


@dataclass(frozen=True)
class Layout:
    """Assignment of logical qubits to physical qubits.

    Attributes:
        protocol: ``"rg"`` or ``"sequential"``.
        n_sites: Number of ring sites.
        assignment: Physical qubit of every logical qubit.
        cycle: Physical cycle in ring order.
        deposits: Sequential sites whose qubit hangs off the cycle.
    """

    protocol: str
    n_sites: int
    assignment: tuple[int, ...]
    cycle: tuple[int, ...]
    deposits: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if len(set(self.assignment)) != len(self.assignment):
            raise ValueError("layout assignment is not injective")

    def blocks(self) -> list[tuple[int, ...]]:
        if self.protocol != "rg":
            return []
        a = self.assignment
        return [a[i : i + RG_BLOCK] for i in range(0, len(a), RG_BLOCK)]

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "n_sites": self.n_sites,
            "assignment": list(self.assignment),
            "cycle": list(self.cycle),
            "deposits": list(self.deposits),
        }

    @classmethod
    def from_json(cls, payload: Mapping) -> Layout:
        return cls(
            payload["protocol"],
            int(payload["n_sites"]),
            tuple(payload["assignment"]),
            tuple(payload["cycle"]),
            tuple(payload.get("deposits", ())),
        )


def standard_deposits(n: int) -> frozenset[int]:
    """Deposit sites used on heavy-hex rings: three near each end of the staircases."""
    if n < 16:
        raise ValueError("standard deposits need n >= 16")
    return frozenset({1, 4, 7, n - 1, n - 4, n - 7})


def _sequential_hosts(n: int, deposits: frozenset[int]) -> tuple[list[int], dict[int, int]]:
    """Cycle qubits in order and, for each deposit qubit, its host qubit."""
    m = n // 2
    dep_q = {k + 1 for k in deposits}
    ring = [q for q in range(n + 2) if q not in dep_q]
    hosts = {}
    for k in sorted(deposits):
        q = k + 1
        hosts[q] = max(r for r in ring if r < q) if k < m else min(r for r in ring if r > q)
    return ring, hosts


def find_ring_layout(
    n: int, cmap: CouplingMap, protocol: str, deposits: frozenset[int] | set[int] | None = None
) -> Layout:
    """Search for a ring layout of any size (no restriction to the reference sizes)."""
    if protocol == "rg":
        if n % RG_BLOCK or n < RG_BLOCK:
            raise LayoutError(f"rg layouts need n divisible by {RG_BLOCK}")
        length = len(RG_CYCLE_SITES) * n // RG_BLOCK
        host_pos = [j * 6 + off for j in range(n // RG_BLOCK) for off in sorted(RG_PENDANTS.values())]
        for cycle in _cycles(cmap, length):
            for ring in _orientations(cycle):
                pend = _match_pendants(cmap, ring, host_pos)
                if pend is None:
                    continue
                assignment = []
                for j in range(n // RG_BLOCK):
                    block = {}
                    for idx, s in enumerate(RG_CYCLE_SITES):
                        block[s] = ring[6 * j + idx]
                    for s, off in RG_PENDANTS.items():
                        block[s] = pend[6 * j + off]
                    assignment += [block[s] for s in range(RG_BLOCK)]
                return Layout("rg", n, tuple(assignment), tuple(ring))
        raise LayoutError(f"no rg ring of {n} sites on this coupling map")
    if protocol == "sequential":
        if n % 2 or n < 4:
            raise LayoutError("sequential layouts need an even n >= 4")
        deposits = frozenset(deposits or ())
        ring_q, hosts = _sequential_hosts(n, deposits)
        if len(set(hosts.values())) != len(hosts):
            raise LayoutError("two deposits share a host qubit")
        pos = {q: i for i, q in enumerate(ring_q)}
        host_pos = sorted(pos[h] for h in hosts.values())
        for cycle in _cycles(cmap, len(ring_q)):
            for ring in _orientations(cycle):
                pend = _match_pendants(cmap, ring, host_pos)
                if pend is None:
                    continue
                assignment = [0] * (n + 2)
                for q, i in pos.items():
                    assignment[q] = ring[i]
                for q, h in hosts.items():
                    assignment[q] = pend[pos[h]]
                return Layout("sequential", n, tuple(assignment), tuple(ring), tuple(sorted(deposits)))
        raise LayoutError(f"no sequential ring of {len(ring_q)} qubits on this coupling map")
    raise ValueError(f"unknown protocol {protocol!r}")


def ring_layout(n: int, cmap: CouplingMap, protocol: str) -> Layout:
    """Reference ring layout for ``n`` in ``SUPPORTED_RING_SIZES``.

    RG rings repeat the eight-qubit block (a six-qubit line with pendants on
    its second and fourth qubit). Sequential rings carry the staircase on a
    cycle of ``n - 4`` qubits with the six ``standard_deposits`` hanging off it.
    """
    if n not in SUPPORTED_RING_SIZES:
        raise ValueError(f"ring size {n} not in {SUPPORTED_RING_SIZES}")
    if protocol == "sequential":
        return find_ring_layout(n, cmap, protocol, standard_deposits(n))
    return find_ring_layout(n, cmap, protocol)


# ---------------------------------------------------------------- routing


@dataclass
class RoutedCircuit:
    """Physical circuit with only nearest-neighbour CNOTs.

    ``circuit`` is written over compact wire labels; ``physical[w]`` is the
    device qubit of wire ``w``. ``circuit.outputs`` already accounts for the
    final qubit permutation.
    """

    circuit: Circuit
    physical: tuple[int, ...]
    swap_count: int
    two_qubit_depth: int
    initial: tuple[int, ...]
    final: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "circuit": self.circuit.to_json(),
            "physical": list(self.physical),
            "swap_count": self.swap_count,
            "two_qubit_depth": self.two_qubit_depth,
            "initial": list(self.initial),
            "final": list(self.final),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


def two_qubit_depth(circuit: Circuit) -> int:
    """Number of CNOT layers; single-qubit gates are free."""
    level: dict[int, int] = {}
    depth = 0
    for g in circuit.gates:
        if g.kind in ("cx", "swap", "unitary") and len(g.qubits) == 2:
            cost = 3 if g.kind == "swap" else 1
            t = max(level.get(q, 0) for q in g.qubits) + cost
            for q in g.qubits:
                level[q] = t
            depth = max(depth, t)
    return depth


def native_depth(rc: RoutedCircuit | Circuit) -> int:
    return two_qubit_depth(rc.circuit if isinstance(rc, RoutedCircuit) else rc)


def _unit_regions(circuit: Circuit, assignment: Sequence[int]) -> dict[int, frozenset[int]]:
    regions: dict[int, set[int]] = {}
    for g in circuit.gates:
        regions.setdefault(g.unit, set()).update(assignment[q] for q in g.qubits)
    return {u: frozenset(r) for u, r in regions.items()}


def _remap_units(meta: dict, start: Mapping[int, int], end: Mapping[int, int]) -> dict:
    """Rewrite unit wire labels: inputs at their start position, sites at their end position."""
    out = dict(meta)
    units = []
    for info in meta.get("units", []):
        info = dict(info)
        kind = info["kind"]
        if kind == "block":
            info["inputs"] = [start[q] for q in info["inputs"]]
            info["qubits"] = [end[q] for q in info["qubits"]]
        elif kind == "site":
            info["qubits"] = [start[q] for q in info["qubits"]]
            info["bond_out"] = start[info["bond_out"]]
        else:
            info["qubits"] = [start[q] for q in info["qubits"]]
        units.append(info)
    if "units" in meta:
        out["units"] = units
    return out


def route_circuit(circuit: Circuit, layout: Layout, cmap: CouplingMap) -> RoutedCircuit:
    """Lower to CNOTs and single-qubit gates and insert SWAP chains for distant operands.

    The operand with the lower logical index walks along a shortest path
    towards the other one. Paths are confined to the qubits of the gate's unit
    when possible, so RG blocks are routed independently of each other.
    """
    return route_compiled(compile_circuit(circuit), layout, cmap)


def route_compiled(compiled: Circuit, layout: Layout, cmap: CouplingMap) -> RoutedCircuit:
    """Route a circuit that is already lowered to ``cx``/``u``/``postselect`` gates."""
    circuit = compiled
    if len(layout.assignment) != circuit.n:
        raise RoutingError(f"layout covers {len(layout.assignment)} qubits, circuit has {circuit.n}")
    if any(v not in cmap.graph for v in layout.assignment):
        raise RoutingError("layout uses qubits outside the coupling map")
    used = sorted(set(layout.assignment))
    wire = {p: i for i, p in enumerate(used)}
    where = {q: layout.assignment[q] for q in range(circuit.n)}
    who = {p: q for q, p in where.items()}
    regions = _unit_regions(compiled, layout.assignment)
    graph = cmap.graph
    gates: list[Gate] = []
    swaps = 0

    for g in compiled.gates:
        if g.kind == "cx":
            a, b = g.qubits
            if not graph.has_edge(where[a], where[b]):
                mover, target = (a, b) if a < b else (b, a)
                region = regions.get(g.unit, frozenset())
                sub = graph.subgraph(region)
                try:
                    path = nx.shortest_path(sub, where[mover], where[target])
                except (nx.NetworkXNoPath, nx.NodeNotFound):
                    try:
                        path = nx.shortest_path(graph, where[mover], where[target])
                    except nx.NetworkXNoPath as exc:
                        raise RoutingError(f"operands {a}, {b} are disconnected") from exc
                for p0, p1 in zip(path[:-2], path[1:-1]):
                    w0, w1 = wire.setdefault(p0, len(wire)), wire.setdefault(p1, len(wire))
                    gates += [Gate("cx", (w0, w1), unit=g.unit), Gate("cx", (w1, w0), unit=g.unit), Gate("cx", (w0, w1), unit=g.unit)]
                    swaps += 1
                    q0, q1 = who.get(p0), who.get(p1)
                    who[p0], who[p1] = q1, q0
                    for q, p in ((q1, p0), (q0, p1)):
                        if q is None:
                            who.pop(p, None)
                        else:
                            where[q] = p
                    who = {p: q for p, q in who.items() if q is not None}
        gates.append(Gate(g.kind, tuple(wire.setdefault(where[q], len(wire)) for q in g.qubits), g.matrix, None, g.expected_outcome, g.label, g.unit))

    physical = tuple(sorted(wire, key=wire.get))
    start = {q: wire[layout.assignment[q]] for q in range(circuit.n)}
    end = {q: wire[where[q]] for q in range(circuit.n)}
    meta = _remap_units(compiled.meta, start, end)
    meta["layout"] = layout.to_json()
    out = Circuit(len(physical), gates, [end[q] for q in compiled.outputs], meta)
    for gate in out.gates:
        if gate.kind == "cx" and not graph.has_edge(physical[gate.qubits[0]], physical[gate.qubits[1]]):
            raise RoutingError(f"cx on non-edge {gate.qubits}")
    return RoutedCircuit(
        out,
        physical,
        swaps,
        two_qubit_depth(out),
        tuple(start[q] for q in range(circuit.n)),
        tuple(end[q] for q in range(circuit.n)),
    )
