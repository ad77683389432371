"""Information-cascade simulation over a random directed network.

A cascade starts from a uniformly chosen source at time zero. Every directed
edge (i, j) carries an independent Rayleigh transmission delay; a marker
activates at the smallest tentative time any of its already-active parents
proposes, provided that time falls inside the observation window. Each marker
activates at most once per cascade. The event log (time, marker) ordered by
activation time is the observable sequence; parent attributions are kept in a
debug sidecar only.

Randomness is split into one child stream per cascade from the master seed, so
datasets are reproducible regardless of how the per-cascade work is scheduled.
"""

from __future__ import annotations

import heapq
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .events import Dataset, Event, EventSequence, RelationNetwork

log = logging.getLogger(__name__)

# Stream labels for seed splitting; cascades append their index.
_STREAM_NETWORK = 1
_STREAM_CASCADE = 2


def substream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic named RNG stream derived from a master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


@dataclass(frozen=True)
class RayleighEdge:
    """Transmission delay distribution t = shift + scale * sqrt(-ln(1-u))."""

    shift: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        assert self.shift >= 0.0
        assert self.scale > 0.0


@dataclass(frozen=True)
class SimulationConfig:
    marker_count: int
    edge_probability: float
    time_window: float = 10.0
    sequence_count: int = 1
    delay: RayleighEdge = field(default_factory=RayleighEdge)
    rng_seed: int = 0
    max_sequence_length: int = 128
    allow_isolated_sources: bool = False

    def __post_init__(self):
        assert self.marker_count >= 1
        assert 0.0 <= self.edge_probability <= 1.0
        assert self.time_window > 0.0
        assert self.sequence_count >= 1
        assert self.max_sequence_length >= 1


@dataclass(frozen=True)
class CascadeDebug:
    """Parent attributions and every tentative transmission drawn."""

    parents: dict[int, int]  # marker -> parent marker (source maps to -1)
    candidates: list[tuple[int, int, float]]  # (parent, child, tentative time)


def sample_rayleigh_delay(edge: RayleighEdge, u) -> np.ndarray:
    """Inverse-CDF transform of uniforms u in [0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    return edge.shift + edge.scale * np.sqrt(-np.log1p(-u))


def sample_rayleigh(edge: RayleighEdge, rng: np.random.Generator, size=None) -> np.ndarray:
    return sample_rayleigh_delay(edge, rng.random(size))


def generate_network(
    marker_count: int, edge_probability: float, rng: np.random.Generator
) -> RelationNetwork:
    """Each ordered pair (i, j), i != j, is an edge with the given probability."""
    edges = []
    # row-chunked so memory stays bounded for large marker counts
    chunk = max(1, min(marker_count, 4_000_000 // max(marker_count, 1)))
    for start in range(0, marker_count, chunk):
        stop = min(start + chunk, marker_count)
        draws = rng.random((stop - start, marker_count))
        hits = draws < edge_probability
        for local_i, j in zip(*np.nonzero(hits)):
            i = start + int(local_i)
            j = int(j)
            if i != j:
                edges.append((i, j))
    return RelationNetwork(marker_count=marker_count, edges=frozenset(edges))


def _adjacency(network: RelationNetwork) -> dict[int, np.ndarray]:
    children: dict[int, list[int]] = {}
    for i, j in network.edges:
        children.setdefault(i, []).append(j)
    return {i: np.array(sorted(js), dtype=np.int64) for i, js in children.items()}


def simulate_cascade(
    network: RelationNetwork,
    cfg: SimulationConfig,
    rng: np.random.Generator,
    adjacency: Optional[dict[int, np.ndarray]] = None,
    collect_debug: bool = False,
) -> tuple[EventSequence, Optional[CascadeDebug]]:
    """One cascade: uniform source at t=0, then min-time activations.

    The tentative-time priority queue realizes the rule that a marker with
    several active parents takes the smallest proposed time: pops arrive in
    time order and only the first pop of a marker commits.
    """
    if adjacency is None:
        adjacency = _adjacency(network)
    if cfg.allow_isolated_sources:
        eligible = np.arange(network.marker_count)
    else:
        eligible = np.array(sorted(adjacency), dtype=np.int64)
        if eligible.size == 0:
            eligible = np.arange(network.marker_count)
    source = int(eligible[rng.integers(0, eligible.size)])

    events = [Event(0.0, source)]
    activated = {source}
    parents = {source: -1}
    candidates: list[tuple[int, int, float]] = []
    heap: list[tuple[float, int, int]] = []  # (time, child, parent)

    def push_children(marker: int, at: float) -> None:
        kids = adjacency.get(marker)
        if kids is None:
            return
        delays = sample_rayleigh(cfg.delay, rng, size=kids.size)
        for child, delay in zip(kids, delays):
            t = at + float(delay)
            if collect_debug:
                candidates.append((marker, int(child), t))
            if t <= cfg.time_window and int(child) not in activated:
                heapq.heappush(heap, (t, int(child), marker))

    push_children(source, 0.0)
    truncated = False
    while heap:
        t, child, parent = heapq.heappop(heap)
        if t > cfg.time_window:
            break
        if child in activated:
            continue
        if len(events) >= cfg.max_sequence_length:
            truncated = True
            break
        activated.add(child)
        parents[child] = parent
        events.append(Event(t, child))
        push_children(child, t)
    if truncated:
        log.warning(
            "cascade truncated at max_sequence_length=%d", cfg.max_sequence_length
        )

    debug = CascadeDebug(parents=parents, candidates=candidates) if collect_debug else None
    return EventSequence(tuple(events)), debug


def generate_dataset(
    cfg: SimulationConfig,
    collect_debug: bool = False,
    threads: int = 1,
) -> tuple[Dataset, Optional[list[CascadeDebug]]]:
    """Sample a network, then cfg.sequence_count independent cascades.

    Each cascade consumes its own RNG substream, so output is identical for
    any thread count.
    """
    network = generate_network(
        cfg.marker_count, cfg.edge_probability, substream(cfg.rng_seed, _STREAM_NETWORK)
    )
    adjacency = _adjacency(network)

    def run(index: int):
        rng = substream(cfg.rng_seed, _STREAM_CASCADE, index)
        return simulate_cascade(network, cfg, rng, adjacency, collect_debug)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(cfg.sequence_count)))
    else:
        results = [run(k) for k in range(cfg.sequence_count)]

    sequences = tuple(seq for seq, _ in results)
    debugs = [dbg for _, dbg in results] if collect_debug else None
    ds = Dataset(
        marker_count=cfg.marker_count, sequences=sequences, ground_truth=network
    )
    return ds, debugs
