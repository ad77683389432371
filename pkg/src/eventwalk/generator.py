"""Random-walk sequence generation over sampled descendant sets.

Each marker gets a small set of K candidate descendants, sampled without
replacement from its neighbor distribution and frozen for an epoch. A
generated sequence is a walk over these sets: the walk state keeps, for every
committed event occurrence, the walk mass q it was reached with, and a
frontier of slots (marker, parent occurrence) whose masses are q * transition
probability. Drawing a slot from the frontier distribution, removing its mass,
and spreading that mass over the new occurrence's own descendants is
equivalent to restarting a source-to-leaf random walk from scratch each step;
the recompute-from-scratch enumeration and the naive walk itself are kept as
independent reference implementations.

The frontier masses always sum to one. A drift beyond 1e-6 raises
DegenerateDistributionError; tiny float residue is absorbed by renormalizing
every renorm_interval commits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParameterStore
from .events import Event, EventSequence
from .intensity import EmbeddingConfig, IntensityState, embed_marker


class GeneratorError(Exception):
    pass


class KTooLargeError(GeneratorError):
    pass


class MissingDescendantRowError(GeneratorError):
    pass


class MalformedLocalNetworkError(GeneratorError):
    pass


class DegenerateDistributionError(GeneratorError):
    pass


class EmptyPrefixError(GeneratorError):
    pass


class PrefixMarkerNotReachableError(GeneratorError):
    """An observed marker has no live frontier slot and force-insertion is off."""


def neighbor_distribution(store: ParameterStore, marker: int) -> Node:
    """Probability that each marker is a descendant candidate of `marker`.

    Softmax over all markers of w^T [d_child || d_parent]; the full
    concatenated form is kept even though the parent half shifts every logit
    equally.
    """
    table = store["marker_embed"]
    M = table.value.shape[0]
    D = table.value.shape[1]
    w = store["neighbor_w"]
    child_part = ad.matmul(table, ad.slice1d(w, 0, D))
    parent_part = ad.dot(ad.slice1d(w, D, 2 * D), embed_marker(store, marker))
    logits = ad.add(child_part, parent_part)
    return ad.softmax_masked(logits, np.ones(M, dtype=bool))


def neighbor_probs_value(store: ParameterStore, marker: int) -> np.ndarray:
    """Value-only neighbor distribution, for table sampling and scoring."""
    table = store["marker_embed"].value
    D = table.shape[1]
    w = store["neighbor_w"].value
    logits = table @ w[:D] + w[D:] @ table[marker]
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def sample_descendants(
    store: ParameterStore, marker: int, k: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """K distinct descendants for one marker, self excluded.

    Sampling is proportional to the neighbor distribution renormalized off the
    diagonal; the recorded probabilities are the unrenormalized neighbor
    probabilities of the chosen markers, in draw order.
    """
    probs = neighbor_probs_value(store, marker)
    M = probs.shape[0]
    if k > M - 1:
        raise KTooLargeError(f"k={k} with only {M - 1} non-self markers")
    weights = probs.copy()
    weights[marker] = 0.0
    weights /= weights.sum()
    chosen = rng.choice(M, size=k, replace=False, p=weights)
    return chosen.astype(np.int64), probs[chosen]


@dataclass(frozen=True)
class DescendantTable:
    """Frozen per-epoch descendant candidates: K markers per source marker."""

    markers: np.ndarray  # (M, K) int
    probs: np.ndarray    # (M, K) neighbor probabilities at sampling time
    epoch: int

    @property
    def k(self) -> int:
        return self.markers.shape[1]

    def row(self, marker: int) -> np.ndarray:
        if not (0 <= marker < self.markers.shape[0]):
            raise MissingDescendantRowError(f"no descendant row for marker {marker}")
        return self.markers[marker]


def build_descendant_table(
    store: ParameterStore, k: int, rng: np.random.Generator, epoch: int = 0
) -> DescendantTable:
    M = store["marker_embed"].value.shape[0]
    markers = np.empty((M, k), dtype=np.int64)
    probs = np.empty((M, k))
    for i in range(M):
        markers[i], probs[i] = sample_descendants(store, i, k, rng)
    return DescendantTable(markers=markers, probs=probs, epoch=epoch)


def transition_probs(
    store: ParameterStore, h: Node, markers: Sequence[int], embed_rows: Optional[dict] = None
) -> Node:
    """Softmax over the given descendant markers of w^T [h || d_child] + b."""
    D = store["marker_embed"].value.shape[1]
    w = store["trans_w"]
    if embed_rows is None:
        rows = [embed_marker(store, int(m)) for m in markers]
    else:
        rows = [embed_rows.setdefault(int(m), embed_marker(store, int(m))) for m in markers]
    d_stack = ad.stack(rows)
    logits = ad.add(
        ad.matmul(d_stack, ad.slice1d(w, D, 2 * D)),
        ad.add(ad.dot(ad.slice1d(w, 0, D), h), store["trans_b"]),
    )
    return ad.softmax_masked(logits, np.ones(len(markers), dtype=bool))


def estimate_time_delta(store: ParameterStore, h: Node) -> Node:
    """Positive time interval to the next event: softplus(w.h + b)."""
    return ad.softplus(ad.add(ad.dot(store["delta_w"], h), store["delta_b"]))


@dataclass(frozen=True)
class GeneratorConfig:
    descendant_count: int = 3
    time_source: str = "parent"  # or "last_event"
    forbid_reactivation: bool = False
    validate_structure: bool = False
    renorm_interval: int = 64

    def __post_init__(self):
        assert self.descendant_count >= 1
        assert self.time_source in ("parent", "last_event")
        assert self.renorm_interval >= 1


@dataclass(frozen=True)
class LocalRelationNetwork:
    """Snapshot of the walk's working graph for inspection and oracles."""

    existing: tuple[int, ...]                    # committed markers in order
    frontier: tuple[tuple[int, int], ...]        # (marker, parent occurrence)
    true_edges: tuple[tuple[int, int], ...]      # committed (parent, child) markers
    estimated_edges: tuple[tuple[int, int], ...] # table edges from committed markers


class _Occurrence:
    __slots__ = ("marker", "parent", "q_node", "h_node", "trans_node", "table_row", "time")

    def __init__(self, marker, parent, q_node, h_node, trans_node, table_row, time):
        self.marker = marker
        self.parent = parent          # parent occurrence index, -1 for source
        self.q_node = q_node          # walk mass this occurrence was reached with
        self.h_node = h_node
        self.trans_node = trans_node  # (K,) transition distribution node
        self.table_row = table_row    # (K,) descendant marker ids
        self.time = time


class _Slot:
    __slots__ = ("marker", "occ", "mass_node", "alive")

    def __init__(self, marker, occ, mass_node):
        self.marker = marker
        self.occ = occ
        self.mass_node = mass_node
        self.alive = True

    @property
    def mass(self) -> float:
        return float(self.mass_node.value)


class WalkState:
    """Committed occurrences plus the live frontier distribution."""

    def __init__(self, generator: "SequenceGenerator", source: Event):
        self.gen = generator
        self.occurrences: list[_Occurrence] = []
        self.slots: list[_Slot] = []
        self.child_map: dict[tuple[int, int], int] = {}  # (occ, marker) -> child occ
        self.slot_index: dict[tuple[int, int], int] = {}  # (occ, marker) -> slot id
        self.existing_order: list[int] = []  # distinct committed markers in order
        self.existing_set: set[int] = set()
        self.events: list[Event] = []
        self.logp: list[Node] = []
        self.tape: list[tuple[int, int]] = []
        self.max_drift = 0.0
        self.conservation_checked = True
        self._commits = 0
        self._intensity = IntensityState(
            generator.store, generator.emb_cfg, generator.intensity_variant
        )
        self._last_time_node = ad.constant(source.time)
        self._commit(
            marker=source.marker,
            parent_occ=-1,
            q_node=ad.constant(1.0),
            time_node=ad.constant(source.time),
            drawn_slot=None,
            record_logp=False,
        )

    # -- core bookkeeping ---------------------------------------------------

    def _commit(self, marker, parent_occ, q_node, time_node, drawn_slot, record_logp):
        gen = self.gen
        if record_logp:
            self.logp.append(self._logp_node(marker))
        if drawn_slot is not None:
            slot = self.slots[drawn_slot]
            slot.alive = False
            self.child_map[(slot.occ, slot.marker)] = len(self.occurrences)
        h = self._intensity.append(time_node, marker)
        row = gen.table.row(marker)
        trans = transition_probs(gen.store, h, row, gen._embed_rows)
        occ_idx = len(self.occurrences)
        self.occurrences.append(
            _Occurrence(marker, parent_occ, q_node, h, trans, row, float(time_node.value))
        )
        self.events.append(Event(float(time_node.value), marker))
        if marker not in self.existing_set:
            self.existing_set.add(marker)
            self.existing_order.append(marker)
        mass_vec = ad.mul(trans, q_node)
        for j, child in enumerate(row):
            slot = _Slot(int(child), occ_idx, ad.row_select(mass_vec, j))
            self.slot_index[(occ_idx, int(child))] = len(self.slots)
            self.slots.append(slot)
        self._last_time_node = time_node
        self._commits += 1
        if self.conservation_checked:
            self._check_conservation()
            if self._commits % gen.cfg.renorm_interval == 0:
                self._renormalize()
        if gen.cfg.validate_structure:
            self.validate_structure()

    def _check_conservation(self):
        total = sum(s.mass for s in self.slots if s.alive)
        drift = abs(total - 1.0)
        self.max_drift = max(self.max_drift, drift)
        if drift > 1e-6:
            raise DegenerateDistributionError(
                f"frontier mass sums to {total!r} after {self._commits} commits"
            )

    def _renormalize(self):
        total = sum(s.mass for s in self.slots if s.alive)
        if total <= 0.0:
            return
        factor = 1.0 / total
        for s in self.slots:
            if s.alive:
                s.mass_node = ad.scalar_mul(s.mass_node, factor)

    def _logp_node(self, marker: int) -> Node:
        """log pi of drawing `marker`: frontier mass of the marker times the
        summed neighbor probability of the marker under every existing one."""
        mass_nodes = [
            s.mass_node for s in self.slots if s.alive and s.marker == marker
        ]
        if not mass_nodes:
            raise MalformedLocalNetworkError(
                f"marker {marker} has no live frontier slot"
            )
        rho = mass_nodes[0] if len(mass_nodes) == 1 else ad.vsum(ad.stack(mass_nodes))
        picks = [
            ad.row_select(self.gen.eq2_node(i), marker) for i in self.existing_order
        ]
        mix = picks[0] if len(picks) == 1 else ad.vsum(ad.stack(picks))
        return ad.log(ad.mul(rho, mix))

    def _next_time_node(self, parent_occ: int) -> Node:
        if self.gen.cfg.time_source == "parent":
            h = self.occurrences[parent_occ].h_node
        else:
            h = self.occurrences[-1].h_node
        delta = estimate_time_delta(self.gen.store, h)
        return ad.add(self._last_time_node, delta)

    # -- stepping -----------------------------------------------------------

    def frontier_masses(self, respect_reactivation: bool = True) -> np.ndarray:
        """Masses over all slots in insertion order; dead slots are zero."""
        masses = np.array([s.mass if s.alive else 0.0 for s in self.slots])
        if (
            respect_reactivation
            and self.gen.cfg.forbid_reactivation
            and masses.size
        ):
            for idx, s in enumerate(self.slots):
                if s.alive and s.marker in self.existing_set:
                    masses[idx] = 0.0
        return masses

    def draw_slot(self, rng: np.random.Generator) -> Optional[int]:
        """Inverse-CDF draw over slots in insertion order."""
        masses = self.frontier_masses()
        total = masses.sum()
        if total <= 0.0:
            return None  # dead end (only possible with forbid_reactivation)
        cum = np.cumsum(masses)
        idx = int(np.searchsorted(cum, rng.random() * total, side="right"))
        return min(idx, len(self.slots) - 1)

    def step_sample(self, rng: np.random.Generator) -> bool:
        """Draw one slot and commit its marker. False on a dead end."""
        idx = self.draw_slot(rng)
        if idx is None:
            return False
        self._commit_slot(idx)
        return True

    def step_force(self, occ: int, marker: int) -> None:
        """Commit a specific live slot (teacher-forced replay)."""
        idx = self.slot_index.get((occ, marker))
        if idx is None or not self.slots[idx].alive:
            raise MalformedLocalNetworkError(
                f"slot (occ={occ}, marker={marker}) is not live"
            )
        self._commit_slot(idx)

    def _commit_slot(self, idx: int, time_node: Optional[Node] = None) -> None:
        slot = self.slots[idx]
        occ = slot.occ
        if time_node is None:
            time_node = self._next_time_node(occ)
        self.tape.append((occ, slot.marker))
        self._commit(
            marker=slot.marker,
            parent_occ=occ,
            q_node=slot.mass_node,
            time_node=time_node,
            drawn_slot=idx,
            record_logp=True,
        )

    def step_observe(self, event: Event, force_insert: bool = True) -> None:
        """Commit an observed event during prefix replay.

        The marker's highest-mass live slot is used when one exists; otherwise
        the event is force-inserted under the occurrence whose extended
        transition distribution likes it most. Forced insertions add mass, so
        conservation checking is off in replay states.
        """
        live = [
            (s.mass, -idx, idx)
            for idx, s in enumerate(self.slots)
            if s.alive and s.marker == event.marker
        ]
        if live:
            idx = max(live)[2]
            self._commit_slot(idx, time_node=ad.constant(event.time))
            return
        if not force_insert:
            raise PrefixMarkerNotReachableError(
                f"observed marker {event.marker} is on no frontier slot"
            )
        best_occ, best_prob, best_node = 0, -1.0, None
        for occ_idx, occ in enumerate(self.occurrences):
            extended = list(occ.table_row) + [event.marker]
            probs = transition_probs(
                self.gen.store, occ.h_node, extended, self.gen._embed_rows
            )
            p = float(probs.value[-1])
            if p > best_prob:
                best_occ, best_prob, best_node = occ_idx, p, probs
        q_node = ad.mul(
            ad.row_select(best_node, len(self.occurrences[best_occ].table_row)),
            self.occurrences[best_occ].q_node,
        )
        self.tape.append((best_occ, event.marker))
        self._commit(
            marker=event.marker,
            parent_occ=best_occ,
            q_node=q_node,
            time_node=ad.constant(event.time),
            drawn_slot=None,
            record_logp=False,
        )

    # -- inspection ---------------------------------------------------------

    def local_network(self) -> LocalRelationNetwork:
        true_edges = [
            (self.occurrences[occ.parent].marker, occ.marker)
            for occ in self.occurrences
            if occ.parent >= 0
        ]
        estimated = [
            (occ.marker, int(child))
            for occ in self.occurrences
            for child in occ.table_row
        ]
        frontier = [(s.marker, s.occ) for s in self.slots if s.alive]
        return LocalRelationNetwork(
            existing=tuple(o.marker for o in self.occurrences),
            frontier=tuple(frontier),
            true_edges=tuple(true_edges),
            estimated_edges=tuple(estimated),
        )

    def validate_structure(self) -> None:
        """Walk-path invariant: the path to any frontier slot passes only
        through committed occurrences until its final hop."""
        n = len(self.occurrences)
        for occ_idx, occ in enumerate(self.occurrences):
            if not (-1 <= occ.parent < occ_idx):
                raise MalformedLocalNetworkError(
                    f"occurrence {occ_idx} has parent {occ.parent}"
                )
        for s in self.slots:
            if not s.alive:
                continue
            if not (0 <= s.occ < n):
                raise MalformedLocalNetworkError(
                    f"slot for marker {s.marker} hangs off occurrence {s.occ}"
                )
            # ascend to the source through committed occurrences only
            seen = 0
            at = s.occ
            while at != -1:
                at = self.occurrences[at].parent
                seen += 1
                if seen > n:
                    raise MalformedLocalNetworkError("parent chain has a cycle")

    def sequence(self) -> EventSequence:
        return EventSequence(tuple(self.events))


@dataclass
class Rollout:
    sequence: EventSequence
    logp: list[Node]
    tape: list[tuple[int, int]]
    state: WalkState

    @property
    def logp_values(self) -> np.ndarray:
        return np.array([float(n.value) for n in self.logp])


class SequenceGenerator:
    """Binds parameters, a frozen descendant table, and configs; builds walks.

    Neighbor-distribution nodes and embedding rows are cached per instance, so
    one generator should serve at most one parameter snapshot; training builds
    a fresh generator per update step.
    """

    def __init__(
        self,
        store: ParameterStore,
        table: DescendantTable,
        emb_cfg: EmbeddingConfig,
        cfg: GeneratorConfig,
        intensity_variant: str = "attention",
    ):
        self.store = store
        self.table = table
        self.emb_cfg = emb_cfg
        self.cfg = cfg
        self.intensity_variant = intensity_variant
        self._eq2_nodes: dict[int, Node] = {}
        self._embed_rows: dict[int, Node] = {}

    def eq2_node(self, marker: int) -> Node:
        node = self._eq2_nodes.get(marker)
        if node is None:
            node = neighbor_distribution(self.store, marker)
            self._eq2_nodes[marker] = node
        return node

    def start(self, source: Event) -> WalkState:
        return WalkState(self, source)

    def generate(self, source: Event, steps: int, rng: np.random.Generator) -> Rollout:
        """Source plus up to `steps` sampled events."""
        state = self.start(source)
        for _ in range(steps):
            if not state.step_sample(rng):
                break
        return Rollout(state.sequence(), state.logp, state.tape, state)

    def replay(self, source: Event, tape: Sequence[tuple[int, int]]) -> Rollout:
        """Teacher-forced rebuild of a recorded walk under current parameters."""
        state = self.start(source)
        for occ, marker in tape:
            state.step_force(occ, marker)
        return Rollout(state.sequence(), state.logp, state.tape, state)

    def replay_prefix(self, events: Sequence[Event], force_insert: bool = True) -> WalkState:
        """Condition the walk state on an observed prefix."""
        if len(events) == 0:
            raise EmptyPrefixError("cannot replay an empty prefix")
        state = self.start(events[0])
        state.conservation_checked = False
        for ev in events[1:]:
            state.step_observe(ev, force_insert=force_insert)
        return state


def generate_sequence(
    store: ParameterStore,
    table: DescendantTable,
    emb_cfg: EmbeddingConfig,
    cfg: GeneratorConfig,
    source: Event,
    steps: int,
    rng: np.random.Generator,
    intensity_variant: str = "attention",
) -> Rollout:
    gen = SequenceGenerator(store, table, emb_cfg, cfg, intensity_variant)
    return gen.generate(source, steps, rng)


# -- reference implementations (oracles) -------------------------------------


def enumerate_slot_masses(state: WalkState) -> np.ndarray:
    """Per-slot walk masses recomputed from scratch as path products.

    Walks the occurrence tree root-down multiplying transition probabilities,
    with no incremental subtraction; live slots get q(parent occurrence) *
    trans(child), dead slots get zero. Independent check of the maintained
    frontier distribution.
    """
    q = np.zeros(len(state.occurrences))
    for idx, occ in enumerate(state.occurrences):
        if occ.parent == -1:
            q[idx] = 1.0
        else:
            parent = state.occurrences[occ.parent]
            j = int(np.nonzero(parent.table_row == occ.marker)[0][0])
            q[idx] = q[occ.parent] * float(parent.trans_node.value[j])
    masses = np.zeros(len(state.slots))
    for idx, slot in enumerate(state.slots):
        if not slot.alive:
            continue
        occ = state.occurrences[slot.occ]
        j = int(np.nonzero(occ.table_row == slot.marker)[0][0])
        masses[idx] = q[slot.occ] * float(occ.trans_node.value[j])
    return masses


def random_walk_sample_naive(state: WalkState, rng: np.random.Generator) -> tuple[int, int]:
    """Reference sampler: restart the walk at the source and follow transition
    draws through committed occurrences until stepping onto a live slot.
    Returns (occurrence, marker) identifying the slot reached."""
    at = 0
    guard = 0
    limit = 10_000 * (len(state.occurrences) + 1)
    while True:
        occ = state.occurrences[at]
        probs = occ.trans_node.value
        u = rng.random() * probs.sum()
        j = int(np.searchsorted(np.cumsum(probs), u, side="right"))
        j = min(j, len(probs) - 1)
        marker = int(occ.table_row[j])
        child = state.child_map.get((at, marker))
        if child is not None:
            at = child
        else:
            idx = state.slot_index.get((at, marker))
            if idx is None or not state.slots[idx].alive:
                raise MalformedLocalNetworkError(
                    f"walk reached slot (occ={at}, marker={marker}) that is not live"
                )
            return at, marker
        guard += 1
        if guard > limit:
            raise MalformedLocalNetworkError("walk failed to reach the frontier")
