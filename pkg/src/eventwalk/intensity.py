"""Latent structural intensity: event embeddings plus causal self-attention.

Each event (t, m) embeds as e = eta * (w_T * t + b_T) + d_m where d_m is the
marker embedding row. The intensity vector h_n summarizes the history up to
and including event n, either with single-layer multi-head attention masked to
positions j <= n (scores are plain dot products, no scaling), or with a tanh
recurrence for the RNN variant. h_n is computed from the prefix alone, so
appending events never changes earlier intensity vectors, bit for bit.

Parameters are created here with their canonical names; matrices initialize
Gaussian with std 1/sqrt(embed_dim) and biases start at zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParameterStore


@dataclass(frozen=True)
class EmbeddingConfig:
    embed_dim: int = 8
    attention_heads: int = 2
    time_embed_weight: float = 0.3

    def __post_init__(self):
        assert self.embed_dim >= 1
        assert self.attention_heads >= 1
        assert self.time_embed_weight >= 0.0


GENERATOR_PARAMS = (
    "marker_embed",   # (M, D) embedding table, one row per marker
    "time_w",         # (D,)
    "time_b",         # (D,)
    "neighbor_w",     # (2D,) scores [d_child || d_parent]
    "trans_w",        # (2D,) scores [h_parent || d_child]
    "trans_b",        # ()
    "delta_w",        # (D,) time-interval head
    "delta_b",        # ()
)


def _init_attention(store: ParameterStore, cfg: EmbeddingConfig, rng, prefix=""):
    D, L = cfg.embed_dim, cfg.attention_heads
    std = 1.0 / np.sqrt(D)
    for l in range(L):
        store.add(f"{prefix}att_q{l}", rng.normal(0.0, std, size=(D, D)))
        store.add(f"{prefix}att_k{l}", rng.normal(0.0, std, size=(D, D)))
        store.add(f"{prefix}att_v{l}", rng.normal(0.0, std, size=(D, D)))
    store.add(f"{prefix}att_out", rng.normal(0.0, std, size=(D, L * D)))


def init_generator_params(
    marker_count: int,
    cfg: EmbeddingConfig,
    rng: np.random.Generator,
    variant: str = "attention",
) -> ParameterStore:
    """Fresh generator parameters. variant is 'attention' or 'rnn'."""
    D = cfg.embed_dim
    std = 1.0 / np.sqrt(D)
    store = ParameterStore()
    store.add("marker_embed", rng.normal(0.0, std, size=(marker_count, D)))
    store.add("time_w", rng.normal(0.0, std, size=D))
    store.add("time_b", np.zeros(D))
    if variant == "attention":
        _init_attention(store, cfg, rng)
    elif variant == "rnn":
        store.add("rnn_in", rng.normal(0.0, std, size=(D, D)))
        store.add("rnn_rec", rng.normal(0.0, std, size=(D, D)))
        store.add("rnn_b", np.zeros(D))
    else:
        raise ValueError(f"unknown intensity variant {variant!r}")
    store.add("neighbor_w", rng.normal(0.0, std, size=2 * D))
    store.add("trans_w", rng.normal(0.0, std, size=2 * D))
    store.add("trans_b", np.zeros(()))
    store.add("delta_w", rng.normal(0.0, std, size=D))
    store.add("delta_b", np.zeros(()))
    return store


def init_discriminator_params(
    marker_count: int,
    cfg: EmbeddingConfig,
    rng: np.random.Generator,
    share_from: Optional[ParameterStore] = None,
) -> ParameterStore:
    """Discriminator parameters: own embeddings and attention stack.

    share_from reuses another store's embedding nodes instead (both stores
    then update the same arrays); attention and readout stay separate.
    """
    D = cfg.embed_dim
    std = 1.0 / np.sqrt(D)
    store = ParameterStore()
    if share_from is None:
        store.add("marker_embed", rng.normal(0.0, std, size=(marker_count, D)))
        store.add("time_w", rng.normal(0.0, std, size=D))
        store.add("time_b", np.zeros(D))
    else:
        for name in ("marker_embed", "time_w", "time_b"):
            store.share(name, share_from[name])
    _init_attention(store, cfg, rng)
    store.add("score_w", rng.normal(0.0, std, size=D))
    store.add("score_b", np.zeros(()))
    return store


def embed_marker(store: ParameterStore, marker: int) -> Node:
    """Embedding row for a marker; equals the dense one-hot product."""
    return ad.row_select(store["marker_embed"], marker)


def embed_event(
    store: ParameterStore,
    cfg: EmbeddingConfig,
    time: Union[float, Node],
    marker: int,
) -> Node:
    t = time if isinstance(time, Node) else ad.constant(float(time))
    timed = ad.add(ad.mul(store["time_w"], t), store["time_b"])
    return ad.add(ad.scalar_mul(timed, cfg.time_embed_weight), embed_marker(store, marker))


class IntensityState:
    """Incremental intensity over a growing event prefix.

    append() embeds one event and returns its intensity vector. Attention
    keys/values for earlier positions are cached as graph nodes, so each new
    position costs one pass over the prefix and never revisits old outputs.
    """

    def __init__(
        self,
        store: ParameterStore,
        cfg: EmbeddingConfig,
        variant: str = "attention",
        keep_weights: bool = False,
    ):
        assert variant in ("attention", "rnn")
        self.store = store
        self.cfg = cfg
        self.variant = variant
        self.keep_weights = keep_weights
        self.events: list[tuple[Union[float, Node], int]] = []
        self.embeddings: list[Node] = []
        self.h: list[Node] = []
        self.weights: list[list[np.ndarray]] = []  # per position, per head
        if variant == "attention":
            L = cfg.attention_heads
            self._keys: list[list[Node]] = [[] for _ in range(L)]
            self._values: list[list[Node]] = [[] for _ in range(L)]

    def __len__(self) -> int:
        return len(self.h)

    def append(self, time: Union[float, Node], marker: int) -> Node:
        e = embed_event(self.store, self.cfg, time, marker)
        self.events.append((time, marker))
        self.embeddings.append(e)
        if self.variant == "attention":
            h = self._attention_step(e)
        else:
            h = self._rnn_step(e)
        self.h.append(h)
        return h

    def _attention_step(self, e: Node) -> Node:
        store, L = self.store, self.cfg.attention_heads
        heads = []
        pos_weights = []
        for l in range(L):
            self._keys[l].append(ad.matmul(store[f"att_k{l}"], e))
            self._values[l].append(ad.matmul(store[f"att_v{l}"], e))
            q = ad.matmul(store[f"att_q{l}"], e)
            scores = ad.stack([ad.dot(k, q) for k in self._keys[l]])
            alpha = ad.softmax_masked(scores, np.ones(len(self._keys[l]), dtype=bool))
            if self.keep_weights:
                pos_weights.append(alpha.value.copy())
            heads.append(ad.matmul(alpha, ad.stack(self._values[l])))
        if self.keep_weights:
            self.weights.append(pos_weights)
        return ad.matmul(store["att_out"], ad.concat(heads))

    def _rnn_step(self, e: Node) -> Node:
        store = self.store
        pre = ad.matmul(store["rnn_in"], e)
        if self.h:
            pre = ad.add(pre, ad.matmul(store["rnn_rec"], self.h[-1]))
        return ad.tanh(ad.add(pre, store["rnn_b"]))


def attention_intensity(
    events: Sequence[tuple[float, int]],
    store: ParameterStore,
    cfg: EmbeddingConfig,
    keep_weights: bool = False,
) -> IntensityState:
    """Intensity vectors for a whole prefix under causal attention."""
    state = IntensityState(store, cfg, "attention", keep_weights=keep_weights)
    for t, m in events:
        state.append(t, m)
    return state


def rnn_intensity(
    events: Sequence[tuple[float, int]],
    store: ParameterStore,
    cfg: EmbeddingConfig,
) -> IntensityState:
    """Intensity vectors under the tanh recurrence ablation."""
    state = IntensityState(store, cfg, "rnn")
    for t, m in events:
        state.append(t, m)
    return state
