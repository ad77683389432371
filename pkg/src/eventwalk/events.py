"""Core data types for marked event sequences and relation networks.

An event is a (time, marker) pair; a sequence is a time-ordered run of events
rooted at a source event; a relation network is the hidden directed graph the
sequences diffuse over. Serialization is JSON Lines for sequences plus a plain
text sidecar for the ground-truth network, and is byte-deterministic so that
identical inputs always produce identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence


class DatasetError(Exception):
    """Base class for dataset and sequence validation failures."""


class EmptySequenceError(DatasetError):
    pass


class DecreasingTimeError(DatasetError):
    pass


class NegativeTimeError(DatasetError):
    pass


class MarkerOutOfRangeError(DatasetError):
    pass


class MarkerCountMismatchError(DatasetError):
    pass


class ParseError(DatasetError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class IoError(DatasetError):
    pass


@dataclass(frozen=True)
class Event:
    """A marker activation at a point in time. Markers are integer ids."""

    time: float
    marker: int


@dataclass(frozen=True)
class EventSequence:
    """An immutable run of events. The first event is the source.

    Construction is permissive so that invalid sequences can be represented
    and then rejected by validate_sequence; everything that reads sequences
    from the outside world validates explicitly.
    """

    events: tuple[Event, ...]

    def __len__(self) -> int:
        return len(self.events)

    def __getitem__(self, i: int) -> Event:
        return self.events[i]

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    @property
    def source(self) -> Event:
        return self.events[0]

    def prefix(self, n: int) -> "EventSequence":
        """First n events as a new sequence."""
        return EventSequence(self.events[:n])

    def times(self) -> list[float]:
        return [e.time for e in self.events]

    def markers(self) -> list[int]:
        return [e.marker for e in self.events]


def sequence_from_pairs(pairs: Sequence[Sequence[float]]) -> EventSequence:
    return EventSequence(tuple(Event(float(t), int(m)) for t, m in pairs))


@dataclass(frozen=True)
class RelationNetwork:
    """Directed graph over marker ids; edges are ordered (parent, child)."""

    marker_count: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        for i, j in self.edges:
            if i == j:
                raise DatasetError(f"self loop on marker {i}")
            if not (0 <= i < self.marker_count and 0 <= j < self.marker_count):
                raise MarkerOutOfRangeError(
                    f"edge ({i}, {j}) outside marker range [0, {self.marker_count})"
                )

    def out_degree(self, i: int) -> int:
        return sum(1 for a, _ in self.edges if a == i)


@dataclass(frozen=True)
class Dataset:
    """A corpus of sequences over a shared marker vocabulary.

    ground_truth is present for simulated data and absent for observed data.
    """

    marker_count: int
    sequences: tuple[EventSequence, ...]
    ground_truth: Optional[RelationNetwork] = None


def validate_sequence(seq: EventSequence, marker_count: int) -> None:
    """Raise unless seq is a well-formed sequence over marker_count markers.

    Checks: non-empty, times non-negative and non-decreasing (ties allowed),
    every marker id inside [0, marker_count). Any valid sequence's prefixes
    are valid by the same rules.
    """
    if len(seq) == 0:
        raise EmptySequenceError("sequence has no events")
    last = None
    for n, ev in enumerate(seq):
        if ev.time < 0:
            raise NegativeTimeError(f"event {n} has negative time {ev.time}")
        if last is not None and ev.time < last:
            raise DecreasingTimeError(
                f"event {n} time {ev.time} precedes previous time {last}"
            )
        if not (0 <= ev.marker < marker_count):
            raise MarkerOutOfRangeError(
                f"event {n} marker {ev.marker} outside [0, {marker_count})"
            )
        last = ev.time


def validate_dataset(ds: Dataset) -> None:
    for k, seq in enumerate(ds.sequences):
        try:
            validate_sequence(seq, ds.marker_count)
        except DatasetError as err:
            raise type(err)(f"sequence {k}: {err}") from err
    if ds.ground_truth is not None and ds.ground_truth.marker_count != ds.marker_count:
        raise MarkerCountMismatchError(
            f"dataset has {ds.marker_count} markers,"
            f" ground truth has {ds.ground_truth.marker_count}"
        )


def _network_sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".network")


def write_dataset(ds: Dataset, path: str | Path) -> None:
    """Write sequences as JSON Lines; ground truth, if any, as a sidecar.

    Output bytes are a pure function of the dataset: float repr round-trips
    exactly and edges are written sorted.
    """
    path = Path(path)
    lines = []
    for seq in ds.sequences:
        payload = {"events": [[ev.time, ev.marker] for ev in seq]}
        lines.append(json.dumps(payload, separators=(",", ":")))
    try:
        path.write_text("\n".join(lines) + ("\n" if lines else ""))
        if ds.ground_truth is not None:
            net = ds.ground_truth
            rows = [f"M {net.marker_count}"]
            rows.extend(f"{i} {j}" for i, j in sorted(net.edges))
            _network_sidecar(path).write_text("\n".join(rows) + "\n")
    except OSError as err:
        raise IoError(str(err)) from err


def read_network(path: str | Path) -> RelationNetwork:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise IoError(str(err)) from err
    marker_count = None
    edges = set()
    for ln, raw in enumerate(text.splitlines(), start=1):
        row = raw.strip()
        if not row:
            continue
        parts = row.split()
        if parts[0] == "M":
            if marker_count is not None:
                raise ParseError("duplicate marker count header", ln)
            try:
                marker_count = int(parts[1])
            except (IndexError, ValueError):
                raise ParseError(f"bad header {row!r}", ln) from None
            continue
        if len(parts) != 2:
            raise ParseError(f"expected 'i j', got {row!r}", ln)
        try:
            edges.add((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ParseError(f"non-integer edge {row!r}", ln) from None
    if marker_count is None:
        raise ParseError("missing 'M <marker_count>' header", 1)
    return RelationNetwork(marker_count=marker_count, edges=frozenset(edges))


def read_dataset(path: str | Path, marker_count: Optional[int] = None) -> Dataset:
    """Read a JSON Lines dataset, attaching the network sidecar if present.

    The main file format carries no marker count; it is taken from, in order,
    the explicit argument, the sidecar header, or max marker id + 1.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise IoError(str(err)) from err
    sequences = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as err:
            raise ParseError(f"bad JSON: {err.msg}", ln) from None
        if not isinstance(payload, dict) or "events" not in payload:
            raise ParseError("expected an object with an 'events' key", ln)
        events = payload["events"]
        if not isinstance(events, list):
            raise ParseError("'events' must be a list", ln)
        out = []
        for pair in events:
            if not isinstance(pair, list) or len(pair) != 2:
                raise ParseError(f"expected [time, marker], got {pair!r}", ln)
            t, m = pair
            if not isinstance(t, (int, float)) or not isinstance(m, int):
                raise ParseError(f"expected [float, int], got {pair!r}", ln)
            out.append(Event(float(t), m))
        sequences.append(EventSequence(tuple(out)))

    ground_truth = None
    sidecar = _network_sidecar(path)
    if sidecar.exists():
        ground_truth = read_network(sidecar)
        if marker_count is None:
            marker_count = ground_truth.marker_count
    if marker_count is None:
        marker_count = 1 + max(
            (ev.marker for seq in sequences for ev in seq), default=-1
        )
    ds = Dataset(
        marker_count=marker_count,
        sequences=tuple(sequences),
        ground_truth=ground_truth,
    )
    validate_dataset(ds)
    return ds
