"""Experiment driver: synthesize, verify, sweep and report.

Every stage is deterministic under ``master_seed``. Rows are processed in
parallel threads but written in a fixed order, and per-row trajectory seeds
are derived from the master seed and the row key only.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .circuit import Circuit
from .layout_router import (
    RoutedCircuit,
    heavy_hex_graph,
    ring_layout,
    route_circuit,
    standard_deposits,
)
from .observables import ObservableSum, PauliString, evaluate, hamiltonian, string_local
from .rg_synthesis import approximation_error, synthesize_rg_circuit
from .sequential_synthesis import synthesize_seq_circuit
from .simulator import NoiseModel, run_exact, run_statevector, run_trajectories
from .uniform_mps import target_state

log = logging.getLogger("mpsprep")

DEFAULT_G_GRID = (-0.9, -0.7, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_N_VALUES = (16, 32, 48, 64, 80)
EPSILON_LIMIT = 0.075
CSV_SCHEMA = "# mpsprep-results v1"
OBSERVABLES = ("S_I", "S_ZY", "eta")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class SchemaError(ValueError):
    """CSV input that does not follow the results schema."""


def default_q(g: float) -> int:
    """Blocking number: 8 for the two points closest to the transition, 4 elsewhere."""
    return 8 if abs(abs(g) - 0.1) < 1e-12 else 4


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep definition. Round-trips losslessly through ``to_json``/``from_json``."""

    g_grid: tuple[float, ...] = DEFAULT_G_GRID
    n_values: tuple[int, ...] = DEFAULT_N_VALUES
    q_policy: tuple[tuple[float, int], ...] = ()
    protocols: tuple[str, ...] = ("rg", "sequential")
    noise_p: float = 0.003
    idle_p: float = 0.003
    trajectories: int = 4000
    master_seed: int = 0
    observables: tuple[str, ...] = OBSERVABLES
    device_shape: tuple[int, int] = (8, 16)
    dense_max_qubits: int = 16
    small_n_checks: tuple[int, ...] = (8, 12, 14)
    out_dir: str = "out"
    record_wall_time: bool = False

    def __post_init__(self) -> None:
        if not self.q_policy:
            object.__setattr__(self, "q_policy", tuple((g, default_q(g)) for g in self.g_grid))

    def q_for(self, g: float) -> int:
        for key, q in self.q_policy:
            if abs(key - g) < 1e-12:
                return q
        return default_q(g)

    def validate(self) -> None:
        if not self.g_grid or not self.n_values:
            raise ConfigError("g_grid and n_values must be non-empty")
        for g in self.g_grid:
            if not -1.0 <= g <= 1.0 or g == 0:
                raise ConfigError(f"g={g} outside [-1, 1] or at the critical point")
        if set(self.protocols) - {"rg", "sequential"} or not self.protocols:
            raise ConfigError(f"unknown protocols {self.protocols}")
        if set(self.observables) - set(OBSERVABLES):
            raise ConfigError(f"unknown observables {self.observables}")
        for g, q in self.q_policy:
            if q not in (4, 8):
                raise ConfigError(f"unsupported q={q} for g={g}")
        if "rg" in self.protocols:
            for g in self.g_grid:
                q = self.q_for(g)
                for n in self.n_values:
                    if n % q:
                        raise ConfigError(f"q={q} does not divide n={n} (g={g})")
        for p in (self.noise_p, self.idle_p):
            if not 0 <= p < 1:
                raise ConfigError("noise probabilities must lie in [0, 1)")
        if self.trajectories < 0:
            raise ConfigError("trajectories must be non-negative")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must fit in 64 bits")

    def to_json(self) -> dict:
        d = asdict(self)
        d["q_policy"] = [list(pair) for pair in self.q_policy]
        for key in ("g_grid", "n_values", "protocols", "observables", "device_shape", "small_n_checks"):
            d[key] = list(d[key])
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, payload: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        d = dict(payload)
        tuple_keys = ("g_grid", "n_values", "protocols", "observables", "device_shape", "small_n_checks")
        for key in tuple_keys:
            if key in d:
                d[key] = tuple(d[key])
        if "q_policy" in d:
            d["q_policy"] = tuple((float(g), int(q)) for g, q in d["q_policy"])
        if "g_grid" in d:
            d["g_grid"] = tuple(float(g) for g in d["g_grid"])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RowKey:
    g: float
    n: int
    protocol: str
    q: int

    @property
    def name(self) -> str:
        suffix = f"_q{self.q}" if self.protocol == "rg" else ""
        return f"{self.protocol}_g{self.g:+.3f}_n{self.n:03d}{suffix}"


def row_keys(config: ExperimentConfig) -> list[RowKey]:
    keys = []
    for protocol in config.protocols:
        for g in config.g_grid:
            for n in config.n_values:
                keys.append(RowKey(g, n, protocol, config.q_for(g) if protocol == "rg" else 0))
    return keys


def row_seed(master_seed: int, key: RowKey) -> int:
    """64-bit trajectory seed of a row, derived from the master seed and the row name."""
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(key.name.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------- synthesize


def _layout_cache(config: ExperimentConfig):
    cmap = heavy_hex_graph(*config.device_shape)
    cache: dict[tuple[int, str], object] = {}

    def get(n: int, protocol: str):
        if (n, protocol) not in cache:
            cache[(n, protocol)] = ring_layout(n, cmap, protocol)
        return cache[(n, protocol)]

    return cmap, get


def build_circuit(key: RowKey, cmap, layout) -> RoutedCircuit:
    if key.protocol == "rg":
        logical = synthesize_rg_circuit(key.g, key.n, key.q)
    else:
        logical = synthesize_seq_circuit(key.g, key.n, standard_deposits(key.n))
    return route_circuit(logical, layout, cmap)


def circuit_path(config: ExperimentConfig, key: RowKey) -> Path:
    return Path(config.out_dir) / "circuits" / f"{key.name}.json"


def _pmap(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def cmd_synthesize(config: ExperimentConfig, threads: int = 1) -> tuple[list[Path], list[str]]:
    """Write one routed circuit file per row; failures are collected, not fatal."""
    config.validate()
    keys = row_keys(config)
    cmap, layout_for = _layout_cache(config)
    for n in sorted(config.n_values):
        for protocol in config.protocols:
            layout_for(n, protocol)

    def work(key: RowKey):
        try:
            return build_circuit(key, cmap, layout_for(key.n, key.protocol)), None
        except Exception as exc:  # per-row failure, the run continues
            return None, f"{key.name}: {exc}"

    results = _pmap(work, keys, threads)
    written, failures = [], []
    for key, (rc, err) in zip(keys, results):
        if err:
            failures.append(err)
            continue
        path = circuit_path(config, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(rc.dumps())
        written.append(path)
    return written, failures


def load_routed(path: Path) -> tuple[Circuit, dict]:
    payload = json.loads(path.read_text())
    return Circuit.from_json(payload["circuit"]), payload


# ---------------------------------------------------------------- verify


@dataclass
class VerifyReport:
    checks: list[dict] = field(default_factory=list)

    def add(self, name: str, ok: bool, **info) -> None:
        self.checks.append({"check": name, "ok": bool(ok), **info})

    @property
    def failures(self) -> list[dict]:
        return [c for c in self.checks if not c["ok"]]


def epsilon_table(g_grid: Iterable[float], n: int, qs: Sequence[int] = (4, 8)) -> dict[tuple[float, int], float]:
    return {(g, q): approximation_error(g, n, q) for g in g_grid for q in qs if n % q == 0}


def cmd_verify(config: ExperimentConfig) -> VerifyReport:
    """Approximation-error policy checks and small-n fidelity oracles."""
    config.validate()
    report = VerifyReport()
    if "rg" in config.protocols:
        for n in config.n_values:
            for g in config.g_grid:
                q = config.q_for(g)
                eps = approximation_error(g, n, q)
                ok = eps <= EPSILON_LIMIT if n == 80 else True
                report.add("epsilon_policy", ok, g=g, n=n, q=q, epsilon=eps)
        for g in config.g_grid:
            if config.q_for(g) != 4 and 80 in config.n_values:
                eps4 = approximation_error(g, 80, 4)
                report.add("epsilon_q4_flag", eps4 > EPSILON_LIMIT, g=g, n=80, q=4, epsilon=eps4)
        for key in row_keys(replace(config, protocols=("rg",))):
            if key.n > config.dense_max_qubits:
                continue
            path = circuit_path(config, key)
            if not path.exists():
                raise FileNotFoundError(f"missing circuit {path}; run synthesize first")
            circuit, _ = load_routed(path)
            psi = run_statevector(circuit)
            fid = abs(np.vdot(target_state(key.g, key.n).to_dense(), psi))
            expected = 1 - approximation_error(key.g, key.n, key.q)
            report.add("rg_statevector", abs(fid - expected) <= 1e-9, g=key.g, n=key.n, q=key.q, overlap=fid, expected=expected)
    if "sequential" in config.protocols:
        for n in config.small_n_checks:
            for g in config.g_grid:
                psi = run_statevector(synthesize_seq_circuit(g, n))
                fid = abs(np.vdot(target_state(g, n).to_dense(), psi))
                report.add("sequential_exact", 1 - fid <= 1e-9, g=g, n=n, epsilon=1 - fid)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify.json").write_text(json.dumps(report.checks, sort_keys=True, indent=1))
    return report


# ---------------------------------------------------------------- sweep

CSV_FIELDS = (
    "g",
    "n",
    "q",
    "protocol",
    "p",
    "observable",
    "value",
    "stderr",
    "ideal",
    "epsilon",
    "two_qubit_depth",
    "cnot_count",
    "swap_count",
    "seed",
    "wall_time",
)


@dataclass(frozen=True)
class ResultRow:
    g: float
    n: int
    q: int
    protocol: str
    p: float
    observable: str
    value: float
    stderr: float
    ideal: float
    epsilon: float
    two_qubit_depth: int
    cnot_count: int
    swap_count: int
    seed: int
    wall_time: float | None = None

    def to_csv(self) -> list[str]:
        out = []
        for name in CSV_FIELDS:
            v = getattr(self, name)
            out.append("" if v is None else repr(v) if isinstance(v, float) else str(v))
        return out

    @classmethod
    def from_csv(cls, record: dict[str, str], line: int) -> ResultRow:
        try:
            kw = {}
            for f in fields(cls):
                raw = record[f.name]
                if f.name in ("n", "q", "two_qubit_depth", "cnot_count", "swap_count", "seed"):
                    kw[f.name] = int(raw)
                elif f.name in ("protocol", "observable"):
                    if not raw:
                        raise ValueError(f"empty {f.name}")
                    kw[f.name] = raw
                elif f.name == "wall_time":
                    kw[f.name] = float(raw) if raw else None
                else:
                    kw[f.name] = float(raw)
            return cls(**kw)
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(f"line {line}: {exc}") from None


def observable_set(g: float, n: int, names: Sequence[str]) -> dict[str, PauliString | ObservableSum]:
    out: dict[str, PauliString | ObservableSum] = {}
    for name in names:
        if name == "S_I":
            out[name] = string_local(n, "trivial")
        elif name == "S_ZY":
            out[name] = string_local(n, "spt")
        elif name == "eta":
            h = hamiltonian(g, n)
            out[name] = ObservableSum(tuple(PauliString(t.letters, t.coefficient / n) for t in h.terms))
    return out


def _sweep_row(config: ExperimentConfig, key: RowKey) -> list[ResultRow]:
    start = time.perf_counter()
    circuit, payload = load_routed(circuit_path(config, key))
    obs = observable_set(key.g, key.n, config.observables)
    ideal_state = target_state(key.g, key.n)
    ideal = {name: evaluate(ideal_state, o) for name, o in obs.items()}
    eps = approximation_error(key.g, key.n, key.q) if key.protocol == "rg" else 0.0
    seed = row_seed(config.master_seed, key)
    common = dict(
        g=key.g,
        n=key.n,
        q=key.q,
        protocol=key.protocol,
        epsilon=eps,
        two_qubit_depth=int(payload["two_qubit_depth"]),
        cnot_count=circuit.count("cx"),
        swap_count=int(payload["swap_count"]),
        seed=seed,
    )
    results = [(0.0, run_exact(circuit, obs))]
    if config.noise_p > 0 or config.idle_p > 0:
        if config.trajectories > 0:
            noise = NoiseModel(config.noise_p, config.idle_p)
            results.append((config.noise_p, run_trajectories(circuit, noise, config.trajectories, seed, obs)))
    wall = time.perf_counter() - start if config.record_wall_time else None
    rows = []
    for p, res in results:
        for name in obs:
            mean, err = res.estimates[name]
            rows.append(ResultRow(p=p, observable=name, value=mean, stderr=err, ideal=ideal[name], wall_time=wall, **common))
    return rows


def write_csv(rows: Iterable[ResultRow], path: Path) -> None:
    buf = io.StringIO()
    buf.write(CSV_SCHEMA + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        writer.writerow(row.to_csv())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def read_csv(path: Path) -> list[ResultRow]:
    text = Path(path).read_text()
    if not text.strip():
        return []
    lines = text.splitlines()
    if lines[0] != CSV_SCHEMA:
        raise SchemaError(f"line 1: expected schema header {CSV_SCHEMA!r}")
    if len(lines) < 2:
        return []
    reader = csv.reader(lines[1:])
    header = next(reader)
    if tuple(header) != CSV_FIELDS:
        raise SchemaError("line 2: column header does not match the schema")
    rows = []
    for offset, record in enumerate(reader):
        line = offset + 3
        if len(record) != len(CSV_FIELDS):
            raise SchemaError(f"line {line}: expected {len(CSV_FIELDS)} fields, got {len(record)}")
        rows.append(ResultRow.from_csv(dict(zip(CSV_FIELDS, record)), line))
    return rows


def cmd_sweep(config: ExperimentConfig, threads: int = 1) -> tuple[Path, list[str]]:
    """Exact and noisy observables for every row, written to ``results.csv``."""
    config.validate()
    keys = row_keys(config)
    missing = [str(circuit_path(config, k)) for k in keys if not circuit_path(config, k).exists()]
    if missing:
        raise FileNotFoundError(f"missing circuits (run synthesize first): {missing[:3]}")

    def work(key: RowKey):
        try:
            return _sweep_row(config, key), None
        except Exception as exc:
            return [], f"{key.name}: {exc}"

    results = _pmap(work, keys, threads)
    rows = [r for rs, _ in results for r in rs]
    failures = [err for _, err in results if err]
    path = Path(config.out_dir) / "results.csv"
    write_csv(rows, path)
    return path, failures


# ---------------------------------------------------------------- report


def find_crossover(ns: Sequence[int], seq_err: Sequence[float], rg_err: Sequence[float]) -> float | None:
    """First ``n`` (linearly interpolated) where the sequential error exceeds the RG error."""
    diff = [s - r for s, r in zip(seq_err, rg_err)]
    for i, d in enumerate(diff):
        if d > 0:
            if i == 0:
                return float(ns[0])
            d0 = diff[i - 1]
            return float(ns[i - 1] + (ns[i] - ns[i - 1]) * (-d0) / (d - d0))
    return None


def _table(title: str, header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    lines = [f"### {title}", "", "| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(row) + " |" for row in body]
    return "\n".join(lines) + "\n"


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.6g}"


def build_report(rows: Sequence[ResultRow]) -> str:
    if not rows:
        return ""
    parts = []
    noisy_p = sorted({r.p for r in rows if r.p > 0})
    p_show = noisy_p[-1] if noisy_p else 0.0
    ns = sorted({r.n for r in rows})
    gs = sorted({r.g for r in rows})
    observables = [o for o in OBSERVABLES if any(r.observable == o for r in rows)]
    index = {(r.protocol, r.g, r.n, r.p, r.observable): r for r in rows}
    # g sweeps
    for protocol in ("sequential", "rg"):
        for obs in observables:
            body = []
            for g in gs:
                cells = [_fmt(index[(protocol, g, n, p_show, obs)].value) if (protocol, g, n, p_show, obs) in index else "-" for n in ns]
                ideal = next((r.ideal for r in rows if r.g == g and r.observable == obs), None)
                body.append([f"{g:+.2f}", *cells, _fmt(ideal)])
            if any(c != "-" for row in body for c in row[1:-1]):
                parts.append(_table(f"{obs} vs g, {protocol}, p={p_show}", ["g", *[f"n={n}" for n in ns], "ideal"], body))
    # n sweeps with crossover
    for g in gs:
        for obs in observables:
            seq = [index.get(("sequential", g, n, p_show, obs)) for n in ns]
            rg = [index.get(("rg", g, n, p_show, obs)) for n in ns]
            if not all(seq) or not all(rg):
                continue
            seq_err = [abs(r.value - r.ideal) for r in seq]
            rg_err = [abs(r.value - r.ideal) for r in rg]
            cross = find_crossover(ns, seq_err, rg_err)
            body = [[str(n), _fmt(s.value), _fmt(r.value), _fmt(s.ideal), _fmt(se), _fmt(re)] for n, s, r, se, re in zip(ns, seq, rg, seq_err, rg_err)]
            title = f"{obs} vs n at g={g:+.2f}, p={p_show}; crossover n* = {_fmt(cross)}"
            parts.append(_table(title, ["n", "sequential", "rg", "ideal", "err seq", "err rg"], body))
    # approximation error
    eps = epsilon_table(gs, 80)
    body = [[f"{g:+.2f}", _fmt(eps.get((g, 4))), _fmt(eps.get((g, 8)))] for g in gs]
    parts.append(_table("approximation error at n=80", ["g", "eps(q=4)", "eps(q=8)"], body))
    # depths
    depth_rows = sorted({(r.protocol, r.q, r.g, r.n, r.two_qubit_depth, r.cnot_count, r.swap_count) for r in rows})
    body = [[p, str(q), f"{g:+.2f}", str(n), str(d), str(c), str(s)] for p, q, g, n, d, c, s in depth_rows]
    parts.append(_table("circuit cost", ["protocol", "q", "g", "n", "2q depth", "cx", "swaps"], body))
    return "\n".join(parts)


def cmd_report(csv_path: str | Path, out: str | Path | None = None) -> str:
    rows = read_csv(Path(csv_path))
    text = build_report(rows)
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    return text


# ---------------------------------------------------------------- CLI


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpsprep", description="MPS preparation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synthesize", "verify", "sweep", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, help="JSON experiment config")
        p.add_argument("--out", type=str, help="output directory")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        if name == "report":
            p.add_argument("--csv", type=str, help="results CSV (default OUT/results.csv)")
    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.out:
        config = replace(config, out_dir=args.out)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    return config


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns 0 on success, 1 on assertion failures, 2 on usage errors."""
    if not log.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return 2
    try:
        config = _config_from_args(args)
        config.validate()
    except (ConfigError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "synthesize":
            written, failures = cmd_synthesize(config, args.threads)
            log.info("wrote %d circuits", len(written))
            for f in failures:
                log.error("FAIL %s", f)
            return 1 if failures else 0
        if args.command == "verify":
            report = cmd_verify(config)
            for c in report.failures:
                log.error("FAIL %s", json.dumps(c, sort_keys=True))
            log.info("%d checks, %d failures", len(report.checks), len(report.failures))
            return 1 if report.failures else 0
        if args.command == "sweep":
            path, failures = cmd_sweep(config, args.threads)
            log.info("wrote %s", path)
            for f in failures:
                log.error("FAIL %s", f)
            return 1 if failures else 0
        csv_path = args.csv or str(Path(config.out_dir) / "results.csv")
        text = cmd_report(csv_path, Path(config.out_dir) / "report.md")
        sys.stdout.write(text)
        return 0
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 2
