"""Adversarial imitation training.

Each step samples a batch of real sequences, rolls out paired generated
sequences from the same source events, ascends the discriminator on its
separation objective, then applies a policy-gradient step to the generator
with per-step weights from the freshly updated discriminator. The entropy
bonus uses single-trajectory continuation estimates of Q_log. Descendant
tables refresh at epoch boundaries (one epoch = one shuffled pass over the
usable sequences).

The pr variant never allocates a discriminator: generated events are scored
against the paired real sequence with the fixed heuristic reward instead, on
times normalized by the dataset's largest timestamp.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import AdamConfig, Node, ParameterStore, adam_step, backward
from .discriminator import discriminate, heuristic_reward
from .events import Dataset, Event, EventSequence
from .generator import (
    DescendantTable,
    GeneratorConfig,
    Rollout,
    SequenceGenerator,
    build_descendant_table,
)
from .intensity import (
    EmbeddingConfig,
    init_discriminator_params,
    init_generator_params,
)
from .simulate import substream

# substream keys, disjoint from the simulator's
_STREAM_INIT_GEN = 101
_STREAM_INIT_DISC = 102
_STREAM_TABLE = 103
_STREAM_BATCH = 104
_STREAM_ROLLOUT = 105

VARIANTS = ("lantern", "rnn", "pr")


class TrainingError(Exception):
    pass


class TrainingDiverged(TrainingError):
    pass


class ConfigError(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 100
    batch_size: int = 16
    discount: float = 0.99
    entropy_coef: float = 0.001
    gen_adam: AdamConfig = field(default_factory=lambda: AdamConfig(alpha=1e-5))
    disc_adam: AdamConfig = field(default_factory=lambda: AdamConfig(alpha=1e-4))
    rollout_length: Union[str, int] = "match_real"
    rng_seed: int = 0
    variant: str = "lantern"
    descendant_count: int = 3
    heuristic_c: float = 2.0
    checkpoint_every: int = 0  # 0 = only the final checkpoint
    paper_literal_signs: bool = False
    share_embeddings: bool = False
    time_source: str = "parent"
    forbid_reactivation: bool = False
    validate_structure: bool = False
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)

    def __post_init__(self):
        assert self.steps >= 1
        assert self.batch_size >= 1
        assert 0.0 < self.discount <= 1.0
        assert self.entropy_coef >= 0.0
        assert self.descendant_count >= 1
        assert self.checkpoint_every >= 0
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if isinstance(self.rollout_length, str):
            if self.rollout_length != "match_real":
                raise ConfigError(f"bad rollout_length {self.rollout_length!r}")
        elif self.rollout_length < 1:
            raise ConfigError("rollout_length must be >= 1")

    @property
    def intensity_variant(self) -> str:
        return "rnn" if self.variant == "rnn" else "attention"

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            descendant_count=self.descendant_count,
            time_source=self.time_source,
            forbid_reactivation=self.forbid_reactivation,
            validate_structure=self.validate_structure,
        )


_INT_KEYS = {
    "steps", "batch_size", "rng_seed", "descendant_count", "checkpoint_every",
    "embed_dim", "attention_heads",
}
_FLOAT_KEYS = {
    "discount", "entropy_coef", "heuristic_c", "time_embed_weight",
    "gen_alpha", "gen_beta1", "gen_beta2", "gen_epsilon",
    "disc_alpha", "disc_beta1", "disc_beta2", "disc_epsilon",
}
_BOOL_KEYS = {
    "paper_literal_signs", "share_embeddings", "forbid_reactivation",
    "validate_structure",
}
_STR_KEYS = {"variant", "time_source"}


def parse_train_config(text: str, **overrides) -> TrainConfig:
    """Flat key = value lines into a TrainConfig; unknown keys are errors.

    Blank lines and # comments are skipped. Adam settings are spelled
    gen_alpha, disc_beta1 and so on; embedding fields by their own names.
    Keyword overrides are applied last (the CLI's --steps etc.).
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key in _BOOL_KEYS:
                if val not in ("true", "false"):
                    raise ConfigError(f"line {lineno}: {key} wants true/false, got {val!r}")
                values[key] = val == "true"
            elif key in _STR_KEYS:
                values[key] = val
            elif key == "rollout_length":
                values[key] = val if val == "match_real" else int(val)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as err:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {err}") from err
    values.update(overrides)
    return _config_from_flat(values)


def _config_from_flat(values: dict) -> TrainConfig:
    emb_kw = {}
    for name in ("embed_dim", "attention_heads", "time_embed_weight"):
        if name in values:
            emb_kw[name] = values.pop(name)
    gen_kw, disc_kw = {}, {}
    for name in ("alpha", "beta1", "beta2", "epsilon"):
        if f"gen_{name}" in values:
            gen_kw[name] = values.pop(f"gen_{name}")
        if f"disc_{name}" in values:
            disc_kw[name] = values.pop(f"disc_{name}")
    cfg = TrainConfig(
        embedding=EmbeddingConfig(**emb_kw),
        gen_adam=AdamConfig(**{"alpha": 1e-5, **gen_kw}),
        disc_adam=AdamConfig(**{"alpha": 1e-4, **disc_kw}),
        **values,
    )
    return cfg


def train_config_to_dict(cfg: TrainConfig) -> dict:
    """Flat dict matching the config-file key space (for manifests, meta)."""
    out = {}
    for f in fields(cfg):
        if f.name in ("gen_adam", "disc_adam", "embedding"):
            continue
        out[f.name] = getattr(cfg, f.name)
    for prefix, adam in (("gen", cfg.gen_adam), ("disc", cfg.disc_adam)):
        out[f"{prefix}_alpha"] = adam.alpha
        out[f"{prefix}_beta1"] = adam.beta1
        out[f"{prefix}_beta2"] = adam.beta2
        out[f"{prefix}_epsilon"] = adam.epsilon
    out["embed_dim"] = cfg.embedding.embed_dim
    out["attention_heads"] = cfg.embedding.attention_heads
    out["time_embed_weight"] = cfg.embedding.time_embed_weight
    return out


def resolve_rollout_steps(cfg: TrainConfig, real_length: int) -> int:
    if cfg.rollout_length == "match_real":
        return max(1, real_length - 1)
    return int(cfg.rollout_length)


def q_log_estimates(logp: np.ndarray) -> np.ndarray:
    """Continuation estimates of Q_log: suffix sums of -log pi, current step
    included. Single-trajectory, so unbiased but noisy."""
    neg = -np.asarray(logp, dtype=np.float64)
    return np.cumsum(neg[::-1])[::-1]


def discriminator_objective(
    pairs: Sequence[tuple[Sequence[Event], Sequence[Event]]],
    store: ParameterStore,
    emb_cfg: EmbeddingConfig,
) -> Node:
    """Batch separation objective: mean over pairs of
    sum_k log d_k(generated) + sum_k log(1 - d_k(real))."""
    assert len(pairs) > 0
    terms = []
    for generated, real in pairs:
        d_gen = ad.stack(discriminate(generated, store, emb_cfg))
        d_real = ad.stack(discriminate(real, store, emb_cfg))
        one_minus = ad.add(ad.constant(1.0), ad.scalar_mul(d_real, -1.0))
        terms.append(ad.add(ad.vsum(ad.log(d_gen)), ad.vsum(ad.log(one_minus))))
    return ad.scalar_mul(ad.vsum(ad.stack(terms)), 1.0 / len(pairs))


def discriminator_update(
    pairs: Sequence[tuple[Sequence[Event], Sequence[Event]]],
    store: ParameterStore,
    cfg: TrainConfig,
) -> float:
    """One Adam step pushing d up on generated events, down on real ones."""
    objective = discriminator_objective(pairs, store, cfg.embedding)
    value = float(objective.value)
    if not math.isfinite(value):
        raise TrainingDiverged(f"discriminator objective is {value!r}")
    store.zero_grads()
    backward(ad.scalar_mul(objective, -1.0))
    adam_step(store, cfg.disc_adam)
    return value


def generator_surrogate(
    batch_logp: Sequence[Sequence[Node]],
    batch_weights: Sequence[np.ndarray],
    batch_qlog: Sequence[np.ndarray],
    cfg: TrainConfig,
) -> Node:
    """Loss whose gradient is the policy-gradient expression.

    Per step j (0-based over generated events) the coefficient on log pi_j is
    gamma^j * weight_j - entropy_coef * qlog_j, with weight_j = log d_j for
    adversarial training (or minus the heuristic reward). Minimizing drives
    log pi up wherever d was fooled poorly, i.e. maximizes reward -log d; the
    entropy term is undiscounted. paper_literal_signs flips the whole thing.
    """
    terms = []
    for logp, weights, qlog in zip(batch_logp, batch_weights, batch_qlog):
        n = min(len(logp), len(weights))
        assert n > 0
        gammas = cfg.discount ** np.arange(n)
        coeff = gammas * weights[:n] - cfg.entropy_coef * qlog[:n]
        terms.append(ad.dot(ad.stack(list(logp[:n])), ad.constant(coeff)))
    total = ad.scalar_mul(ad.vsum(ad.stack(terms)), 1.0 / len(terms))
    if cfg.paper_literal_signs:
        total = ad.scalar_mul(total, -1.0)
    return total


def generator_update(
    rollouts: Sequence[Rollout],
    reward_signal: Sequence[np.ndarray],
    store: ParameterStore,
    cfg: TrainConfig,
    heuristic: bool = False,
) -> float:
    """One Adam step on the policy; returns the generator curve value.

    reward_signal carries per-step discriminator outputs d_k for adversarial
    variants (curve: mean discounted -log d) or heuristic rewards r_k for the
    pr variant (curve: mean discounted reward).
    """
    batch_logp, batch_weights, batch_qlog, curve_terms = [], [], [], []
    for rollout, signal in zip(rollouts, reward_signal):
        n = min(len(rollout.logp), len(signal))
        if n == 0:
            continue
        signal = np.asarray(signal[:n], dtype=np.float64)
        if heuristic:
            weights = -signal
            curve_step = signal
        else:
            weights = np.log(signal)
            curve_step = -weights
        gammas = cfg.discount ** np.arange(n)
        curve_terms.append(float(gammas @ curve_step))
        batch_logp.append(rollout.logp[:n])
        batch_weights.append(weights)
        batch_qlog.append(q_log_estimates(rollout.logp_values[:n]))
    if not batch_logp:
        raise TrainingError("no usable rollouts in batch")
    surrogate = generator_surrogate(batch_logp, batch_weights, batch_qlog, cfg)
    if not math.isfinite(float(surrogate.value)):
        raise TrainingDiverged(f"generator surrogate is {float(surrogate.value)!r}")
    store.zero_grads()
    backward(surrogate)
    adam_step(store, cfg.gen_adam)
    curve = float(np.mean(curve_terms))
    if not math.isfinite(curve):
        raise TrainingDiverged(f"generator curve is {curve!r}")
    return curve


@dataclass
class TrainResult:
    generator_store: ParameterStore
    discriminator_store: Optional[ParameterStore]
    table: DescendantTable
    metrics: list[tuple[int, float, float, float]]  # step, gen, disc, wallclock
    config: TrainConfig
    marker_count: int


METRIC_HEADER = ("step", "gen_objective", "disc_objective", "wallclock_s")


def _write_metrics(path, metrics) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_HEADER)
        for step, gen_val, disc_val, wall in metrics:
            writer.writerow([step, repr(gen_val), repr(disc_val), repr(wall)])


def _checkpoint_path(out_path: Path, step: int) -> Path:
    return out_path.with_name(f"{out_path.stem}.step{step:06d}{out_path.suffix}")


def train(
    dataset: Dataset,
    cfg: TrainConfig,
    out_path: Optional[Union[str, Path]] = None,
    log_path: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """Run the full alternating loop and return the trained stores.

    out_path, when given, receives the final checkpoint (plus intermediate
    ones at cfg.checkpoint_every cadence); log_path receives the metric CSV.
    Sequences with no event beyond the source cannot be paired and are
    skipped.
    """
    usable = [seq for seq in dataset.sequences if len(seq) >= 2]
    if not usable:
        raise TrainingError("dataset has no sequences with at least two events")
    M = dataset.marker_count
    seed = cfg.rng_seed
    heuristic = cfg.variant == "pr"
    gen_store = init_generator_params(
        M, cfg.embedding, substream(seed, _STREAM_INIT_GEN), variant=cfg.intensity_variant
    )
    if heuristic:
        disc_store = None
    else:
        disc_store = init_discriminator_params(
            M,
            cfg.embedding,
            substream(seed, _STREAM_INIT_DISC),
            share_from=gen_store if cfg.share_embeddings else None,
        )
    gcfg = cfg.generator_config()
    steps_per_epoch = math.ceil(len(usable) / cfg.batch_size)
    time_scale = 1.0
    if heuristic:
        time_scale = max(
            (seq[-1].time for seq in usable if seq[-1].time > 0), default=1.0
        )

    table: DescendantTable = None  # set on the first step
    perm: np.ndarray = None
    metrics: list[tuple[int, float, float, float]] = []
    out_path = Path(out_path) if out_path is not None else None
    started = time.perf_counter()

    def checkpoint(path: Path, step: int) -> None:
        save_model(path, gen_store, disc_store, table, cfg, M, step)

    for step in range(1, cfg.steps + 1):
        epoch, pos = divmod(step - 1, steps_per_epoch)
        if pos == 0:
            table = build_descendant_table(
                gen_store, cfg.descendant_count, substream(seed, _STREAM_TABLE, epoch), epoch
            )
            perm = substream(seed, _STREAM_BATCH, epoch).permutation(len(usable))
        batch = [usable[i] for i in perm[pos * cfg.batch_size : (pos + 1) * cfg.batch_size]]
        generator = SequenceGenerator(
            gen_store, table, cfg.embedding, gcfg, cfg.intensity_variant
        )
        rollouts = []
        for b, real in enumerate(batch):
            rollout = generator.generate(
                real[0],
                resolve_rollout_steps(cfg, len(real)),
                substream(seed, _STREAM_ROLLOUT, step, b),
            )
            assert rollout.sequence[0] == real[0], "rollout lost its source pairing"
            rollouts.append(rollout)

        if disc_store is not None:
            pairs = [
                (list(r.sequence), list(real)) for r, real in zip(rollouts, batch)
            ]
            gen_sum_before = None if cfg.share_embeddings else gen_store.checksum()
            try:
                disc_value = discriminator_update(pairs, disc_store, cfg)
            except TrainingDiverged as err:
                raise _diverged(err, step, gen_store, disc_store, table, cfg, M, out_path)
            if gen_sum_before is not None and gen_store.checksum() != gen_sum_before:
                raise TrainingError("discriminator update touched generator parameters")
            signal = [
                np.array([float(r.value) for r in discriminate(list(ro.sequence), disc_store, cfg.embedding)])
                for ro in rollouts
            ]
        else:
            disc_value = float("nan")
            signal = [
                heuristic_reward(
                    _scale_times(ro.sequence, time_scale),
                    _scale_times(real, time_scale),
                    cfg.heuristic_c,
                )
                for ro, real in zip(rollouts, batch)
            ]

        disc_sum_before = (
            disc_store.checksum() if disc_store is not None and not cfg.share_embeddings else None
        )
        try:
            gen_value = generator_update(rollouts, signal, gen_store, cfg, heuristic=heuristic)
        except TrainingDiverged as err:
            raise _diverged(err, step, gen_store, disc_store, table, cfg, M, out_path)
        if disc_sum_before is not None and disc_store.checksum() != disc_sum_before:
            raise TrainingError("generator update touched discriminator parameters")

        metrics.append((step, gen_value, disc_value, time.perf_counter() - started))
        if out_path is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            checkpoint(_checkpoint_path(out_path, step), step)

    if out_path is not None:
        checkpoint(out_path, cfg.steps)
    if log_path is not None:
        _write_metrics(log_path, metrics)
    return TrainResult(gen_store, disc_store, table, metrics, cfg, M)


def train_variant_pr(
    dataset: Dataset,
    cfg: TrainConfig,
    out_path: Optional[Union[str, Path]] = None,
    log_path: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """Heuristic-reward training: same loop, no discriminator anywhere."""
    if cfg.variant != "pr":
        cfg = replace(cfg, variant="pr")
    return train(dataset, cfg, out_path=out_path, log_path=log_path)


def _scale_times(events, scale: float) -> list[Event]:
    return [Event(ev.time / scale, ev.marker) for ev in events]


def _diverged(err, step, gen_store, disc_store, table, cfg, M, out_path):
    message = f"step {step}: {err}"
    if out_path is not None and table is not None:
        dump = Path(str(out_path) + ".diverged")
        save_model(dump, gen_store, disc_store, table, cfg, M, step)
        message += f" (state dumped to {dump})"
    return TrainingDiverged(message)


# -- model checkpoints --------------------------------------------------------


@dataclass
class Model:
    generator_store: ParameterStore
    discriminator_store: Optional[ParameterStore]
    table: DescendantTable
    config: TrainConfig
    marker_count: int
    step: int

    @property
    def intensity_variant(self) -> str:
        return self.config.intensity_variant

    def generator(self) -> SequenceGenerator:
        return SequenceGenerator(
            self.generator_store,
            self.table,
            self.config.embedding,
            self.config.generator_config(),
            self.intensity_variant,
        )


def save_model(
    path: Union[str, Path],
    gen_store: ParameterStore,
    disc_store: Optional[ParameterStore],
    table: DescendantTable,
    cfg: TrainConfig,
    marker_count: int,
    step: int,
) -> None:
    meta = {
        "kind": "trained-model",
        "marker_count": marker_count,
        "step": step,
        "train_config": _jsonable(train_config_to_dict(cfg)),
        "table": {
            "markers": table.markers.tolist(),
            "probs": table.probs.tolist(),
            "epoch": table.epoch,
        },
    }
    ad.save_checkpoint(
        path, {"generator": gen_store, "discriminator": disc_store}, meta
    )


def load_model(path: Union[str, Path]) -> Model:
    stores, meta = ad.load_checkpoint(path)
    if meta.get("kind") != "trained-model":
        raise TrainingError(f"{path} is not a trained model checkpoint")
    cfg = _config_from_flat(dict(meta["train_config"]))
    table = DescendantTable(
        markers=np.array(meta["table"]["markers"], dtype=np.int64),
        probs=np.array(meta["table"]["probs"], dtype=np.float64),
        epoch=int(meta["table"]["epoch"]),
    )
    return Model(
        generator_store=stores["generator"],
        discriminator_store=stores.get("discriminator"),
        table=table,
        config=cfg,
        marker_count=int(meta["marker_count"]),
        step=int(meta["step"]),
    )


def _jsonable(values: dict) -> dict:
    out = {}
    for key, val in values.items():
        if isinstance(val, (bool, int, float, str)):
            out[key] = val
        else:
            out[key] = str(val)
    return out
