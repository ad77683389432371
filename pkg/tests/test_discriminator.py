"""Discriminator scores and the fixed heuristic reward."""

import numpy as np
import pytest

from eventwalk import autodiff as ad
from eventwalk.autodiff import backward
from eventwalk.discriminator import (
    SequenceTooShortError,
    SourceMismatchError,
    discriminate,
    heuristic_reward,
)
from eventwalk.events import Event
from eventwalk.intensity import EmbeddingConfig, init_discriminator_params

FD_STEP = 1e-6


def make_disc(marker_count=5, embed_dim=3, heads=2, seed=0):
    cfg = EmbeddingConfig(embed_dim=embed_dim, attention_heads=heads, time_embed_weight=0.3)
    store = init_discriminator_params(marker_count, cfg, np.random.default_rng(seed))
    return store, cfg


def some_events(n, marker_count=5, seed=1):
    rng = np.random.default_rng(seed)
    times = np.cumsum(rng.uniform(0.1, 1.0, size=n))
    return [Event(float(t), int(m)) for t, m in zip(times, rng.integers(0, marker_count, n))]


def dense_oracle(events, store, cfg):
    """Literal full-attention recompute with plain numpy loops."""
    eta, D, L = cfg.time_embed_weight, cfg.embed_dim, cfg.attention_heads
    E = store["marker_embed"].value
    wt, bt = store["time_w"].value, store["time_b"].value
    emb = np.array([eta * (wt * ev.time + bt) + E[ev.marker] for ev in events])
    n = len(events)
    out = []
    for pos in range(1, n):
        heads = []
        for l in range(L):
            q = store[f"att_q{l}"].value @ emb[pos]
            logits = np.array([(store[f"att_k{l}"].value @ emb[j]) @ q for j in range(n)])
            alpha = np.exp(logits - logits.max())
            alpha /= alpha.sum()
            heads.append(alpha @ np.array([store[f"att_v{l}"].value @ emb[j] for j in range(n)]))
        a = store["att_out"].value @ np.concatenate(heads)
        z = store["score_w"].value @ a + float(store["score_b"].value)
        out.append(1.0 / (1.0 + np.exp(-z)))
    return np.array(out)


def test_scores_match_dense_oracle():
    store, cfg = make_disc(seed=3)
    events = some_events(6, seed=4)
    got = np.array([float(r.value) for r in discriminate(events, store, cfg)])
    assert got.shape == (5,)
    assert np.allclose(got, dense_oracle(events, store, cfg), atol=1e-12)
    assert np.all((got > 0.0) & (got < 1.0))


def test_zero_readout_scores_half():
    store, cfg = make_disc(seed=5)
    store["score_w"].value[:] = 0.0
    store["score_b"].value[()] = 0.0
    scores = discriminate(some_events(4, seed=6), store, cfg)
    assert all(float(r.value) == 0.5 for r in scores)


def test_attention_sees_the_future_by_default():
    store, cfg = make_disc(seed=7)
    events = some_events(5, seed=8)
    before = float(discriminate(events, store, cfg)[0].value)
    bumped = events[:4] + [Event(events[4].time + 5.0, events[4].marker)]
    after = float(discriminate(bumped, store, cfg)[0].value)
    assert before != after


def test_causal_flag_ignores_the_future():
    store, cfg = make_disc(seed=9)
    events = some_events(5, seed=10)
    full = discriminate(events, store, cfg, causal=True)
    for k in range(1, 5):
        prefix = discriminate(events[: k + 1], store, cfg, causal=True)
        assert float(prefix[k - 1].value) == float(full[k - 1].value)


def test_too_short_sequences_rejected():
    store, cfg = make_disc()
    with pytest.raises(SequenceTooShortError):
        discriminate([Event(0.0, 1)], store, cfg)
    with pytest.raises(SequenceTooShortError):
        discriminate([], store, cfg)


@pytest.mark.parametrize("causal", [False, True])
def test_score_gradients_by_finite_difference(causal):
    store, cfg = make_disc(marker_count=4, embed_dim=3, seed=11)
    events = some_events(4, marker_count=4, seed=12)

    def build():
        return ad.vsum(ad.stack(discriminate(events, store, cfg, causal=causal)))

    loss = build()
    backward(loss)
    for name in store.names():
        param = store[name]
        grad = np.array(param.grad, copy=True)
        flat = param.value.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + FD_STEP
            up = float(build().value)
            flat[idx] = keep - FD_STEP
            down = float(build().value)
            flat[idx] = keep
            numeric = (up - down) / (2 * FD_STEP)
            denom = max(abs(numeric), abs(gflat[idx]), 1e-8)
            assert abs(numeric - gflat[idx]) / denom < 1e-4, (name, idx)


def test_heuristic_reward_closed_forms():
    ref = [Event(0.0, 2), Event(1.0, 3), Event(2.0, 1)]
    same = heuristic_reward(ref, ref)
    assert np.allclose(same, [3.0, 3.0])  # c + marker match, zero time error
    gen = [Event(0.0, 2), Event(1.5, 3), Event(2.0, 4)]
    got = heuristic_reward(gen, ref)
    assert np.allclose(got, [2.0 - 0.25 + 1.0, 2.0 - 0.0 + 0.0])
    assert np.allclose(heuristic_reward(gen, ref, c=10.0), [10.75, 10.0])


def test_heuristic_reward_truncates_to_shorter():
    ref = [Event(0.0, 0), Event(1.0, 1), Event(2.0, 2), Event(3.0, 3)]
    gen = [Event(0.0, 0), Event(1.0, 1)]
    assert heuristic_reward(gen, ref).shape == (1,)


def test_heuristic_reward_source_mismatch():
    ref = [Event(0.0, 0), Event(1.0, 1)]
    with pytest.raises(SourceMismatchError):
        heuristic_reward([Event(0.0, 3), Event(1.0, 1)], ref)
    with pytest.raises(SourceMismatchError):
        heuristic_reward([Event(0.5, 0), Event(1.0, 1)], ref)
    with pytest.raises(SequenceTooShortError):
        heuristic_reward([Event(0.0, 0)], ref)
