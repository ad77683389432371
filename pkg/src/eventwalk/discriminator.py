"""Per-event realness scores for adversarial training.

The discriminator embeds a whole sequence, runs multi-head attention over all
positions (no causal mask: judging event k may use the future), and squashes a
linear readout of each non-source position into (0, 1). It owns a separate
parameter set with the same embedding and attention shapes as the generator.

heuristic_reward is the non-adversarial stand-in: a fixed per-event score from
time and marker agreement with a reference sequence, no parameters anywhere.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParameterStore
from .events import Event
from .intensity import EmbeddingConfig, embed_event


class DiscriminatorError(Exception):
    pass


class SequenceTooShortError(DiscriminatorError):
    pass


class SourceMismatchError(DiscriminatorError):
    pass


def discriminate(
    events: Sequence[Event],
    store: ParameterStore,
    cfg: EmbeddingConfig,
    causal: bool = False,
) -> list[Node]:
    """Realness scores for events[1:], all in (0, 1).

    The source event is scored by nobody: it is given, not generated. With
    causal=True position k only attends to positions <= k, matching the
    generator's intensity; the default attends everywhere.
    """
    n = len(events)
    if n < 2:
        raise SequenceTooShortError(f"need a source plus one event, got {n}")
    L = cfg.attention_heads
    embeddings = [embed_event(store, cfg, ev.time, ev.marker) for ev in events]
    keys = [[ad.matmul(store[f"att_k{l}"], e) for e in embeddings] for l in range(L)]
    values = [ad.stack([ad.matmul(store[f"att_v{l}"], e) for e in embeddings]) for l in range(L)]
    scores_out: list[Node] = []
    for pos in range(1, n):
        heads = []
        for l in range(L):
            query = ad.matmul(store[f"att_q{l}"], embeddings[pos])
            limit = pos + 1 if causal else n
            logits = ad.stack([ad.dot(keys[l][j], query) for j in range(limit)])
            alpha = ad.softmax_masked(logits, np.ones(limit, dtype=bool))
            vals = values[l] if not causal else ad.stack(
                [ad.row_select(values[l], j) for j in range(limit)]
            )
            heads.append(ad.matmul(alpha, vals))
        a = ad.matmul(store["att_out"], ad.concat(heads))
        logit = ad.add(ad.dot(store["score_w"], a), store["score_b"])
        scores_out.append(ad.sigmoid(logit))
    return scores_out


def heuristic_reward(
    generated: Sequence[Event],
    reference: Sequence[Event],
    c: float = 2.0,
) -> np.ndarray:
    """Fixed per-event rewards: c - (t_k - t*_k)^2 + [m_k == m*_k].

    Both sequences must share their source event; rewards cover positions
    1..min(len)-1. Times enter raw, so callers working on wide time scales
    should normalize first.
    """
    if len(generated) < 2 or len(reference) < 2:
        raise SequenceTooShortError("both sequences need a source plus one event")
    if (
        generated[0].marker != reference[0].marker
        or generated[0].time != reference[0].time
    ):
        raise SourceMismatchError(
            f"sources differ: {generated[0]!r} vs {reference[0]!r}"
        )
    k = min(len(generated), len(reference))
    out = np.empty(k - 1)
    for i in range(1, k):
        match = 1.0 if generated[i].marker == reference[i].marker else 0.0
        out[i - 1] = c - (generated[i].time - reference[i].time) ** 2 + match
    return out
