"""Network reconstruction, next-event prediction, and runtime benchmarks.

Reconstruction reads edges straight off the learned neighbor distribution:
each marker's top-K probabilities become its out-edges. Prediction conditions
a walk state on an observed prefix and aggregates one-step samples from the
frontier. The benchmark times sequence generation and single training steps
over a (marker count x sequence length) grid and fits lines to the length
series.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from statistics import median
from typing import Callable, Optional, Sequence

import numpy as np

from .discriminator import discriminate
from .events import Dataset, Event, MarkerCountMismatchError, RelationNetwork
from .generator import (
    KTooLargeError,
    PrefixMarkerNotReachableError,
    SequenceGenerator,
    build_descendant_table,
    estimate_time_delta,
    neighbor_probs_value,
)
from .intensity import EmbeddingConfig, init_discriminator_params, init_generator_params
from .simulate import substream
from .training import (
    ConfigError,
    Model,
    TrainConfig,
    discriminator_update,
    generator_update,
)

_STREAM_PREDICT = 201
_STREAM_BENCH = 202

__all__ = [
    "ReconstructionReport",
    "PredictionReport",
    "PrefixMarkerNotReachableError",
    "reconstruct_network",
    "score_reconstruction",
    "predict_next",
    "evaluate_prediction",
    "BenchmarkGrid",
    "BenchmarkRow",
    "BenchmarkResult",
    "parse_benchmark_grid",
    "benchmark_scaling",
    "fit_line_r_squared",
]


@dataclass(frozen=True)
class ReconstructionReport:
    k: int
    precision: float
    recall: float
    f1: float
    estimated_edges: frozenset


@dataclass(frozen=True)
class PredictionReport:
    observed_ratio: float
    time_mse: float
    marker_accuracy: float
    evaluated: int
    skipped: int


def reconstruct_network(store, k: int) -> RelationNetwork:
    """Estimated relations: each marker's k most probable descendants.

    Ties break toward the lower marker id so reports are deterministic.
    """
    M = store["marker_embed"].value.shape[0]
    if k > M - 1:
        raise KTooLargeError(f"k={k} with only {M - 1} possible targets per marker")
    edges = set()
    for i in range(M):
        probs = neighbor_probs_value(store, i).copy()
        probs[i] = -np.inf
        order = np.lexsort((np.arange(M), -probs))
        for j in order[:k]:
            edges.add((i, int(j)))
    return RelationNetwork(marker_count=M, edges=frozenset(edges))


def score_reconstruction(
    estimated: RelationNetwork, truth: RelationNetwork, k: int
) -> ReconstructionReport:
    if estimated.marker_count != truth.marker_count:
        raise MarkerCountMismatchError(
            f"{estimated.marker_count} markers vs {truth.marker_count}"
        )
    hit = len(estimated.edges & truth.edges)
    precision = hit / len(estimated.edges) if estimated.edges else 0.0
    recall = hit / len(truth.edges) if truth.edges else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ReconstructionReport(k, precision, recall, f1, frozenset(estimated.edges))


def predict_next(
    model: Model,
    prefix: Sequence[Event],
    n_samples: int,
    rng: Optional[np.random.Generator] = None,
) -> tuple[float, int]:
    """Expected next event after an observed prefix.

    The prefix is replayed through the walk bookkeeping (observed markers with
    no frontier slot are force-inserted under their best-scoring parent), then
    n_samples one-step draws from the frontier are aggregated: mean time,
    modal marker (modal ties to the lower id).
    """
    assert n_samples >= 1
    if rng is None:
        rng = np.random.default_rng(0)
    state = model.generator().replay_prefix(list(prefix))
    masses = state.frontier_masses()
    total = masses.sum()
    if total <= 0.0:
        raise PrefixMarkerNotReachableError("no live frontier slot to sample from")
    store = model.generator_store
    last_time = state.events[-1].time
    last_h = state.occurrences[-1].h_node

    live = np.nonzero(masses > 0.0)[0]
    slot_markers = np.empty(live.size, dtype=np.int64)
    slot_times = np.empty(live.size)
    delta_cache: dict[int, float] = {}
    for row, idx in enumerate(live):
        slot = state.slots[idx]
        slot_markers[row] = slot.marker
        occ = slot.occ if model.config.time_source == "parent" else -1
        if occ not in delta_cache:
            h = state.occurrences[occ].h_node if occ >= 0 else last_h
            delta_cache[occ] = float(estimate_time_delta(store, h).value)
        slot_times[row] = last_time + delta_cache[occ]
    draws = rng.choice(live.size, size=n_samples, p=masses[live] / total)
    t_hat = float(slot_times[draws].mean())
    counts = np.bincount(slot_markers[draws], minlength=model.marker_count)
    return t_hat, int(np.argmax(counts))


Predictor = Callable[[Model, Sequence[Event], int, np.random.Generator], tuple[float, int]]


def evaluate_prediction(
    model: Model,
    dataset: Dataset,
    ratios: Sequence[float],
    n_samples: int = 200,
    rng_seed: int = 0,
    test_fraction: float = 0.2,
    predictor: Optional[Predictor] = None,
) -> list[PredictionReport]:
    """Prediction quality on the dataset's tail split.

    The test split is the last test_fraction of sequences in dataset order
    (at least one). For each ratio the first ceil(r * len) events are
    revealed (at least the source) and the next event is predicted; sequences
    whose prefix would already be the whole sequence are skipped and counted.
    Time MSE is on raw times.
    """
    predictor = predictor or predict_next
    seqs = dataset.sequences
    n_test = max(1, int(len(seqs) * test_fraction))
    test = seqs[len(seqs) - n_test :]
    reports = []
    for ri, ratio in enumerate(ratios):
        sq_errs, hits, skipped = [], [], 0
        for si, seq in enumerate(test):
            length = len(seq)
            prefix_len = max(1, math.ceil(ratio * length))
            if length < 2 or prefix_len >= length:
                skipped += 1
                continue
            t_hat, m_hat = predictor(
                model,
                list(seq.prefix(prefix_len)),
                n_samples,
                substream(rng_seed, _STREAM_PREDICT, ri, si),
            )
            truth = seq[prefix_len]
            sq_errs.append((t_hat - truth.time) ** 2)
            hits.append(1.0 if m_hat == truth.marker else 0.0)
        reports.append(
            PredictionReport(
                observed_ratio=float(ratio),
                time_mse=float(np.mean(sq_errs)) if sq_errs else float("nan"),
                marker_accuracy=float(np.mean(hits)) if hits else float("nan"),
                evaluated=len(sq_errs),
                skipped=skipped,
            )
        )
    return reports


# -- scalability benchmark ----------------------------------------------------


@dataclass(frozen=True)
class BenchmarkGrid:
    marker_counts: tuple[int, ...] = (100,)
    sequence_lengths: tuple[int, ...] = (5, 25, 50)
    reps: int = 5
    descendant_count: int = 3
    include_training: bool = True
    batch_size: int = 4
    rng_seed: int = 0
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)

    def __post_init__(self):
        assert self.reps >= 1 and self.batch_size >= 1
        assert len(self.marker_counts) >= 1 and len(self.sequence_lengths) >= 1


@dataclass(frozen=True)
class BenchmarkRow:
    marker_count: int
    sequence_length: int
    reps: int
    gen_seconds_per_sequence: float
    train_seconds_per_step: float  # nan when training timing is off


@dataclass
class BenchmarkResult:
    rows: list[BenchmarkRow]
    length_fit_r2: dict[int, float]  # marker_count -> R^2 of time vs length

    def row(self, marker_count: int, sequence_length: int) -> BenchmarkRow:
        for r in self.rows:
            if (r.marker_count, r.sequence_length) == (marker_count, sequence_length):
                return r
        raise KeyError((marker_count, sequence_length))


_GRID_INT_KEYS = {"reps", "descendant_count", "batch_size", "rng_seed", "embed_dim", "attention_heads"}


def parse_benchmark_grid(text: str) -> BenchmarkGrid:
    """Flat key = value grid file; lists are comma-separated."""
    values: dict = {}
    emb: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        try:
            if key in ("marker_counts", "sequence_lengths"):
                values[key] = tuple(int(v) for v in val.split(","))
            elif key == "time_embed_weight":
                emb[key] = float(val)
            elif key in ("embed_dim", "attention_heads"):
                emb[key] = int(val)
            elif key in _GRID_INT_KEYS:
                values[key] = int(val)
            elif key == "include_training":
                if val not in ("true", "false"):
                    raise ConfigError(f"line {lineno}: include_training wants true/false")
                values[key] = val == "true"
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as err:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {err}") from err
    if emb:
        values["embedding"] = EmbeddingConfig(**emb)
    return BenchmarkGrid(**values)


def fit_line_r_squared(xs: Sequence[float], ys: Sequence[float]) -> float:
    """R^2 of the least-squares line through (xs, ys); 1.0 for degenerate data."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size < 2 or np.ptp(xs) == 0.0:
        return 1.0
    slope, intercept = np.polyfit(xs, ys, 1)
    residual = ys - (slope * xs + intercept)
    total = ys - ys.mean()
    ss_tot = float(total @ total)
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - float(residual @ residual) / ss_tot


def benchmark_scaling(grid: BenchmarkGrid) -> BenchmarkResult:
    """Time generation (and optionally one training step) across the grid.

    Generation is timed per sequence with a fresh walk each rep (median over
    reps). The training row times one discriminator plus one generator update
    on a synthetic batch, excluding the per-epoch descendant-table refresh,
    which is what recurs per step.
    """
    rows = []
    gen_times: dict[tuple[int, int], float] = {}
    for M in grid.marker_counts:
        rng = substream(grid.rng_seed, _STREAM_BENCH, M)
        store = init_generator_params(M, grid.embedding, rng)
        k = min(grid.descendant_count, M - 1)
        table = build_descendant_table(store, k, rng)
        gcfg_train = TrainConfig(
            steps=1,
            batch_size=grid.batch_size,
            descendant_count=k,
            embedding=grid.embedding,
            rng_seed=grid.rng_seed,
        )
        for T in grid.sequence_lengths:
            generator = SequenceGenerator(
                store, table, grid.embedding, gcfg_train.generator_config()
            )
            samples = []
            for rep in range(grid.reps):
                source = Event(0.0, int(rng.integers(M)))
                begin = time.perf_counter()
                generator.generate(source, T, substream(grid.rng_seed, _STREAM_BENCH, M, T, rep))
                samples.append(time.perf_counter() - begin)
            gen_seconds = float(median(samples))
            gen_times[(M, T)] = gen_seconds
            train_seconds = float("nan")
            if grid.include_training:
                train_seconds = _time_train_step(store, table, gcfg_train, M, T, rng)
            rows.append(BenchmarkRow(M, T, grid.reps, gen_seconds, train_seconds))
    fits = {}
    for M in grid.marker_counts:
        lengths = list(grid.sequence_lengths)
        fits[M] = fit_line_r_squared(lengths, [gen_times[(M, T)] for T in lengths])
    return BenchmarkResult(rows=rows, length_fit_r2=fits)


def _time_train_step(store, table, cfg: TrainConfig, M: int, T: int, rng) -> float:
    generator = SequenceGenerator(store, table, cfg.embedding, cfg.generator_config())
    sources = [Event(0.0, int(rng.integers(M))) for _ in range(cfg.batch_size)]
    reference = [generator.generate(src, T, rng).sequence for src in sources]
    disc_store = init_discriminator_params(M, cfg.embedding, rng)
    begin = time.perf_counter()
    fresh = SequenceGenerator(store, table, cfg.embedding, cfg.generator_config())
    rollouts = [fresh.generate(real[0], len(real) - 1, rng) for real in reference]
    pairs = [(list(r.sequence), list(real)) for r, real in zip(rollouts, reference)]
    discriminator_update(pairs, disc_store, cfg)
    signal = [
        np.array([float(d.value) for d in discriminate(list(r.sequence), disc_store, cfg.embedding)])
        for r in rollouts
    ]
    generator_update(rollouts, signal, store, cfg)
    return time.perf_counter() - begin


def reconstruction_csv_rows(reports: Sequence[ReconstructionReport]) -> list[list]:
    rows = [["k", "precision", "recall", "f1"]]
    for rep in reports:
        rows.append([rep.k, repr(rep.precision), repr(rep.recall), repr(rep.f1)])
    return rows


def prediction_csv_rows(reports: Sequence[PredictionReport]) -> list[list]:
    rows = [["observed_ratio", "time_mse", "marker_accuracy", "evaluated", "skipped"]]
    for rep in reports:
        rows.append(
            [
                repr(rep.observed_ratio),
                repr(rep.time_mse),
                repr(rep.marker_accuracy),
                rep.evaluated,
                rep.skipped,
            ]
        )
    return rows


def benchmark_csv_rows(result: BenchmarkResult) -> list[list]:
    rows = [
        [
            "marker_count",
            "sequence_length",
            "reps",
            "gen_seconds_per_sequence",
            "train_seconds_per_step",
        ]
    ]
    for row in result.rows:
        rows.append(
            [
                row.marker_count,
                row.sequence_length,
                row.reps,
                repr(row.gen_seconds_per_sequence),
                repr(row.train_seconds_per_step),
            ]
        )
    return rows
