"""Adversarial trainer: objectives, gradients, loop contracts."""

import math

import numpy as np
import pytest

from eventwalk import autodiff as ad
from eventwalk.autodiff import backward
from eventwalk.events import Dataset, Event, EventSequence
from eventwalk.generator import GeneratorConfig, SequenceGenerator, build_descendant_table
from eventwalk.intensity import EmbeddingConfig, init_discriminator_params, init_generator_params
from eventwalk.simulate import substream
from eventwalk.training import (
    _STREAM_INIT_GEN,
    ConfigError,
    TrainConfig,
    TrainingDiverged,
    TrainingError,
    discriminator_objective,
    discriminator_update,
    generator_surrogate,
    generator_update,
    load_model,
    parse_train_config,
    q_log_estimates,
    resolve_rollout_steps,
    train,
    train_config_to_dict,
    train_variant_pr,
)

FD_STEP = 1e-6
TINY_EMB = EmbeddingConfig(embed_dim=3, attention_heads=2, time_embed_weight=0.3)


def toy_dataset(n=8, marker_count=6, seed=0, min_len=3, max_len=5):
    rng = np.random.default_rng(seed)
    seqs = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        times = np.cumsum(rng.uniform(0.2, 1.0, size=length))
        markers = rng.integers(0, marker_count, size=length)
        seqs.append(EventSequence(tuple(Event(float(t), int(m)) for t, m in zip(times, markers))))
    return Dataset(marker_count=marker_count, sequences=tuple(seqs), ground_truth=None)


def tiny_cfg(**kw):
    defaults = dict(
        steps=2,
        batch_size=2,
        descendant_count=2,
        embedding=TINY_EMB,
        rng_seed=1,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_defaults_match_stated_values():
    cfg = TrainConfig()
    assert cfg.batch_size == 16
    assert cfg.discount == 0.99
    assert cfg.entropy_coef == 0.001
    assert cfg.gen_adam.alpha == 1e-5
    assert cfg.disc_adam.alpha == 1e-4
    assert cfg.gen_adam.beta1 == 0.9 and cfg.disc_adam.beta1 == 0.9
    assert cfg.gen_adam.beta2 == 0.99 and cfg.disc_adam.beta2 == 0.99
    assert cfg.gen_adam.epsilon == 1e-8
    assert cfg.descendant_count == 3
    assert cfg.heuristic_c == 2.0
    assert cfg.rollout_length == "match_real"
    assert cfg.embedding.embed_dim == 8
    assert cfg.embedding.time_embed_weight == 0.3


def test_parse_config_full_round_trip():
    text = """
    # toy setup
    steps = 7
    batch_size = 3
    discount = 0.5
    entropy_coef = 0.01
    gen_alpha = 0.001
    disc_alpha = 0.002
    disc_beta2 = 0.95
    rollout_length = 6
    rng_seed = 42
    variant = rnn
    descendant_count = 2
    heuristic_c = 4.0
    checkpoint_every = 5
    paper_literal_signs = true
    share_embeddings = false
    time_source = last_event
    forbid_reactivation = true
    validate_structure = false
    embed_dim = 4
    attention_heads = 1
    time_embed_weight = 0.7
    """
    cfg = parse_train_config(text)
    assert cfg.steps == 7 and cfg.batch_size == 3 and cfg.discount == 0.5
    assert cfg.gen_adam.alpha == 0.001 and cfg.disc_adam.alpha == 0.002
    assert cfg.disc_adam.beta2 == 0.95 and cfg.gen_adam.beta2 == 0.99
    assert cfg.rollout_length == 6
    assert cfg.variant == "rnn" and cfg.intensity_variant == "rnn"
    assert cfg.paper_literal_signs and cfg.forbid_reactivation
    assert cfg.time_source == "last_event"
    assert cfg.embedding == EmbeddingConfig(4, 1, 0.7)
    # a config rebuilt from the flat dict is the same config
    flat = train_config_to_dict(cfg)
    rebuilt = parse_train_config(
        "\n".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in flat.items())
    )
    assert rebuilt == cfg


def test_parse_config_rejects_garbage():
    with pytest.raises(ConfigError):
        parse_train_config("nonsense_key = 3")
    with pytest.raises(ConfigError):
        parse_train_config("steps 5")
    with pytest.raises(ConfigError):
        parse_train_config("steps = 5\nsteps = 6")
    with pytest.raises(ConfigError):
        parse_train_config("share_embeddings = yes")
    with pytest.raises(ConfigError):
        parse_train_config("variant = bogus")
    with pytest.raises(ConfigError):
        parse_train_config("rollout_length = sometimes")


def test_parse_config_overrides_win():
    cfg = parse_train_config("steps = 5\nrng_seed = 1", steps=99, rng_seed=7)
    assert cfg.steps == 99 and cfg.rng_seed == 7


def test_rollout_length_policy():
    assert resolve_rollout_steps(tiny_cfg(), 5) == 4
    assert resolve_rollout_steps(tiny_cfg(), 1) == 1
    assert resolve_rollout_steps(tiny_cfg(rollout_length=7), 100) == 7


def test_q_log_closed_forms():
    assert np.allclose(q_log_estimates(np.zeros(4)), np.zeros(4))
    uniform = np.full(3, np.log(0.5))
    expect = np.array([3, 2, 1]) * np.log(2.0)
    assert np.allclose(q_log_estimates(uniform), expect, atol=1e-15)
    logp = np.log(np.array([0.3, 0.9, 0.5]))
    manual = [-(logp[k:]).sum() for k in range(3)]
    assert np.allclose(q_log_estimates(logp), manual, atol=1e-15)


def test_q_log_toy_mdp_matches_enumeration():
    # two-step chain: second-step distribution depends on the first action
    p0 = np.array([0.7, 0.3])
    p1 = {0: np.array([0.5, 0.5]), 1: np.array([0.9, 0.1])}
    def entropy(p):
        return float(-(p * np.log(p)).sum())
    exact = entropy(p0) + p0[0] * entropy(p1[0]) + p0[1] * entropy(p1[1])
    rng = np.random.default_rng(2024)
    n = 50_000
    total = 0.0
    for _ in range(n):
        a0 = int(rng.random() < p0[1])
        probs = p1[a0]
        a1 = int(rng.random() < probs[1])
        logp = np.log([p0[a0], probs[a1]])
        total += q_log_estimates(logp)[0]
    assert abs(total / n - exact) / exact < 0.01


def events_pair(seed, n=3, marker_count=4):
    rng = np.random.default_rng(seed)
    def one():
        times = np.cumsum(rng.uniform(0.2, 1.0, size=n))
        markers = rng.integers(0, marker_count, size=n)
        return [Event(float(t), int(m)) for t, m in zip(times, markers)]
    real = one()
    generated = [real[0]] + one()[1:]
    return generated, real


def test_discriminator_objective_at_neutral_readout():
    store = init_discriminator_params(4, TINY_EMB, np.random.default_rng(0))
    store["score_w"].value[:] = 0.0
    store["score_b"].value[()] = 0.0
    generated, real = events_pair(1)
    value = float(discriminator_objective([(generated, real)], store, TINY_EMB).value)
    # every d is exactly 0.5, so each of 2T terms contributes -ln 2
    assert abs(value - (-4 * math.log(2.0))) < 1e-12


def test_discriminator_update_ascends_its_objective():
    store = init_discriminator_params(4, TINY_EMB, np.random.default_rng(3))
    cfg = tiny_cfg(disc_adam=ad.AdamConfig(alpha=0.05))
    pairs = [events_pair(5), events_pair(6)]
    before = float(discriminator_objective(pairs, store, TINY_EMB).value)
    returned = discriminator_update(pairs, store, cfg)
    assert abs(returned - before) < 1e-12
    after = float(discriminator_objective(pairs, store, TINY_EMB).value)
    assert after > before


def test_discriminator_gradients_finite_difference():
    store = init_discriminator_params(4, TINY_EMB, np.random.default_rng(7))
    pairs = [events_pair(8, n=3)]

    def build():
        return discriminator_objective(pairs, store, TINY_EMB)

    loss = build()
    backward(loss)
    for name in store.names():
        param = store[name]
        grad = np.array(param.grad, copy=True).reshape(-1)
        flat = param.value.reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + FD_STEP
            up = float(build().value)
            flat[idx] = keep - FD_STEP
            down = float(build().value)
            flat[idx] = keep
            numeric = (up - down) / (2 * FD_STEP)
            denom = max(abs(numeric), abs(grad[idx]), 1e-8)
            assert abs(numeric - grad[idx]) / denom < 1e-4, (name, idx)


def gen_fixture(seed=0, marker_count=4, k=2):
    store = init_generator_params(marker_count, TINY_EMB, np.random.default_rng(seed))
    table = build_descendant_table(store, k, np.random.default_rng(seed + 50))
    gcfg = GeneratorConfig(descendant_count=k)
    return store, table, gcfg


def test_generator_surrogate_gradients_finite_difference():
    store, table, gcfg = gen_fixture(seed=9)
    probe = SequenceGenerator(store, table, TINY_EMB, gcfg)
    rollout = probe.generate(Event(0.0, 1), 2, np.random.default_rng(11))
    tape = rollout.tape
    weights = np.log(np.array([0.4, 0.7]))
    qlog = q_log_estimates(rollout.logp_values)
    cfg = tiny_cfg()

    def build():
        replayed = SequenceGenerator(store, table, TINY_EMB, gcfg).replay(Event(0.0, 1), tape)
        return generator_surrogate([replayed.logp], [weights], [qlog], cfg)

    loss = build()
    backward(loss)
    for name in store.names():
        param = store[name]
        grad = np.array(param.grad, copy=True).reshape(-1)
        flat = param.value.reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + FD_STEP
            up = float(build().value)
            flat[idx] = keep - FD_STEP
            down = float(build().value)
            flat[idx] = keep
            numeric = (up - down) / (2 * FD_STEP)
            denom = max(abs(numeric), abs(grad[idx]), 1e-8)
            assert abs(numeric - grad[idx]) / denom < 1e-4, (name, idx)


def test_constant_reward_scales_score_gradient():
    # with entropy off and d constant at 0.5, the update direction is exactly
    # ln(1/2) times the gradient of the discounted log-likelihood
    store, table, gcfg = gen_fixture(seed=13)
    probe = SequenceGenerator(store, table, TINY_EMB, gcfg)
    tape = probe.generate(Event(0.0, 2), 3, np.random.default_rng(14)).tape
    cfg = tiny_cfg(entropy_coef=0.0)
    weights = np.full(3, np.log(0.5))

    replay_a = SequenceGenerator(store, table, TINY_EMB, gcfg).replay(Event(0.0, 2), tape)
    store.zero_grads()
    backward(generator_surrogate([replay_a.logp], [weights], [np.zeros(3)], cfg))
    got = {n: np.array(store[n].grad) for n in store.names() if store[n].grad is not None}

    replay_b = SequenceGenerator(store, table, TINY_EMB, gcfg).replay(Event(0.0, 2), tape)
    gammas = cfg.discount ** np.arange(3)
    plain = ad.dot(ad.stack(replay_b.logp), ad.constant(gammas))
    store.zero_grads()
    backward(plain)
    for name, grad in got.items():
        assert np.allclose(grad, np.log(0.5) * store[name].grad, atol=1e-12), name


def test_generator_update_curve_value_and_movement():
    store, table, gcfg = gen_fixture(seed=17)
    rollout = SequenceGenerator(store, table, TINY_EMB, gcfg).generate(
        Event(0.0, 0), 2, np.random.default_rng(18)
    )
    cfg = tiny_cfg()
    d_vals = np.array([0.5, 0.25])
    before = store.checksum()
    curve = generator_update([rollout], [d_vals], store, cfg)
    expect = -(np.log(d_vals) * cfg.discount ** np.arange(2)).sum()
    assert abs(curve - expect) < 1e-12
    assert store.checksum() != before


def test_paper_literal_signs_flips_the_step():
    deltas = {}
    for flag in (False, True):
        store, table, gcfg = gen_fixture(seed=21)
        rollout = SequenceGenerator(store, table, TINY_EMB, gcfg).generate(
            Event(0.0, 1), 2, np.random.default_rng(22)
        )
        initial = {n: store[n].value.copy() for n in store.names()}
        cfg = tiny_cfg(paper_literal_signs=flag, gen_adam=ad.AdamConfig(alpha=0.01))
        generator_update([rollout], [np.array([0.6, 0.3])], store, cfg)
        deltas[flag] = {n: store[n].value - initial[n] for n in initial}
    for name in deltas[False]:
        assert np.allclose(deltas[False][name], -deltas[True][name], atol=1e-12), name


def test_update_divergence_detection():
    store = init_discriminator_params(4, TINY_EMB, np.random.default_rng(23))
    store["score_b"].value[()] = 1000.0  # saturates d to exactly 1.0
    pairs = [events_pair(24)]
    with np.errstate(divide="ignore"):
        with pytest.raises(TrainingDiverged):
            discriminator_update(pairs, store, tiny_cfg())

    gstore, table, gcfg = gen_fixture(seed=25)
    rollout = SequenceGenerator(gstore, table, TINY_EMB, gcfg).generate(
        Event(0.0, 0), 2, np.random.default_rng(26)
    )
    with np.errstate(divide="ignore"):
        with pytest.raises(TrainingDiverged):
            generator_update([rollout], [np.array([0.0, 0.5])], gstore, tiny_cfg())


@pytest.mark.parametrize("variant", ["lantern", "rnn"])
def test_train_smoke_and_checkpoint(tmp_path, variant):
    ds = toy_dataset(n=4, seed=3)
    cfg = tiny_cfg(steps=1, variant=variant)
    out = tmp_path / "model.json"
    log = tmp_path / "curve.csv"
    result = train(ds, cfg, out_path=out, log_path=log)
    assert len(result.metrics) == 1
    step, gen_val, disc_val, wall = result.metrics[0]
    assert step == 1 and math.isfinite(gen_val) and math.isfinite(disc_val)
    assert wall >= 0.0
    lines = log.read_text().strip().splitlines()
    assert lines[0] == "step,gen_objective,disc_objective,wallclock_s"
    assert len(lines) == 2
    model = load_model(out)
    assert model.marker_count == 6
    assert model.step == 1
    assert model.generator_store.checksum() == result.generator_store.checksum()
    assert model.discriminator_store.checksum() == result.discriminator_store.checksum()
    assert np.array_equal(model.table.markers, result.table.markers)
    assert model.config == cfg


def test_train_deterministic_across_runs(tmp_path):
    ds = toy_dataset(n=5, seed=4)
    cfg = tiny_cfg(steps=3, rng_seed=11)
    a = train(ds, cfg)
    b = train(ds, cfg)
    for (s1, g1, d1, _), (s2, g2, d2, _) in zip(a.metrics, b.metrics):
        assert s1 == s2 and g1 == g2 and d1 == d2
    assert a.generator_store.checksum() == b.generator_store.checksum()
    assert a.discriminator_store.checksum() == b.discriminator_store.checksum()
    c = train(ds, tiny_cfg(steps=3, rng_seed=12))
    assert c.generator_store.checksum() != a.generator_store.checksum()


def test_train_resamples_tables_at_epoch_boundaries():
    ds = toy_dataset(n=4, seed=5)
    # 4 usable sequences, batch 2 -> 2 steps per epoch
    short = train(ds, tiny_cfg(steps=2, rng_seed=6))
    longer = train(ds, tiny_cfg(steps=3, rng_seed=6))
    assert short.table.epoch == 0
    assert longer.table.epoch == 1


def test_train_skips_sourceless_sequences():
    ds = toy_dataset(n=3, seed=7)
    lonely = EventSequence((Event(0.0, 1),))
    mixed = Dataset(6, ds.sequences + (lonely,), None)
    result = train(mixed, tiny_cfg(steps=1))
    assert len(result.metrics) == 1
    empty = Dataset(6, (lonely,), None)
    with pytest.raises(TrainingError):
        train(empty, tiny_cfg(steps=1))


def test_train_pr_variant_has_no_discriminator():
    ds = toy_dataset(n=4, seed=8)
    cfg = tiny_cfg(steps=10, variant="pr", gen_adam=ad.AdamConfig(alpha=0.01))
    result = train_variant_pr(ds, cfg)
    assert result.discriminator_store is None
    assert all(math.isnan(row[2]) for row in result.metrics)
    assert all(math.isfinite(row[1]) for row in result.metrics)
    fresh = init_generator_params(6, TINY_EMB, substream(cfg.rng_seed, _STREAM_INIT_GEN))
    moved = sum(
        float(np.abs(result.generator_store[n].value - fresh[n].value).sum())
        for n in fresh.names()
    )
    assert moved > 0.0


def test_train_pr_forced_via_config_variant():
    ds = toy_dataset(n=2, seed=9)
    result = train(ds, tiny_cfg(steps=1, variant="pr"))
    assert result.discriminator_store is None


def test_share_embeddings_binds_the_nodes():
    ds = toy_dataset(n=2, seed=10)
    result = train(ds, tiny_cfg(steps=2, share_embeddings=True))
    assert result.discriminator_store["marker_embed"] is result.generator_store["marker_embed"]
    assert result.discriminator_store["time_w"] is result.generator_store["time_w"]
    assert "score_w" in result.discriminator_store
    assert "score_w" not in result.generator_store


def test_checkpoint_cadence(tmp_path):
    ds = toy_dataset(n=4, seed=11)
    out = tmp_path / "m.json"
    train(ds, tiny_cfg(steps=5, checkpoint_every=2), out_path=out)
    mid1 = load_model(tmp_path / "m.step000002.json")
    mid2 = load_model(tmp_path / "m.step000004.json")
    final = load_model(out)
    assert (mid1.step, mid2.step, final.step) == (2, 4, 5)
