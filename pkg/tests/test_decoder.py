import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehruq import decoder as dec
from ehruq.decoder import DecoderConfig, EmbeddingRecord

from helpers import gradient_rel_error, small_config


def records(n, dim, tasks, rng, separable=True):
    x = rng.normal(size=(n, dim))
    out = []
    for i in range(n):
        labels = {t: int(x[i, j % dim] > 0) for j, t in enumerate(tasks)}
        out.append(EmbeddingRecord(f"r{i}", x[i], labels))
    return out


# config / init -----------------------------------------------------------


@pytest.mark.parametrize("field,value", [("hidden_dim", 0), ("input_dim", 0), ("dropout", 1.0), ("dropout", -0.1)])
def test_config_rejects(field, value):
    with pytest.raises(ValueError):
        DecoderConfig(tasks=("a",), **{field: value})


def test_config_rejects_empty_or_duplicate_tasks():
    with pytest.raises(ValueError):
        DecoderConfig(tasks=())
    with pytest.raises(ValueError):
        DecoderConfig(tasks=("a", "a"))


def test_init_deterministic_and_seed_sensitive():
    cfg = DecoderConfig(tasks=("a", "b"), input_dim=6, hidden_dim=5, seed=3)
    a, b = dec.init_decoder(cfg), dec.init_decoder(cfg)
    for k in dec.PARAM_NAMES:
        assert np.array_equal(a.parameters()[k], b.parameters()[k])
    c = dec.init_decoder(DecoderConfig(tasks=("a", "b"), input_dim=6, hidden_dim=5, seed=4))
    assert not np.array_equal(a.w1, c.w1)


def test_init_shapes_and_scale():
    cfg = DecoderConfig(tasks=("a", "b", "c"), input_dim=20, task_embed_dim=4, hidden_dim=7)
    d = dec.init_decoder(cfg)
    assert d.task_embeddings.shape == (3, 4)
    assert d.w1.shape == (24, 7) and d.b1.shape == (7,) and d.w2.shape == (7,) and np.shape(d.b2) == ()
    assert np.all(np.abs(d.w1) <= math.sqrt(6 / 24))
    assert not d.b1.any()


# forward -----------------------------------------------------------------


def test_zero_parameters_give_half():
    cfg = DecoderConfig(tasks=("a",), input_dim=4, hidden_dim=3)
    d = dec.init_decoder(cfg)
    zero = d.with_parameters({k: np.zeros_like(v) for k, v in d.parameters().items()})
    assert dec.forward(zero, np.ones(4), "a") == 0.5


def test_forward_errors():
    d = dec.init_decoder(DecoderConfig(tasks=("a",), input_dim=4, hidden_dim=3))
    with pytest.raises(KeyError):
        dec.forward(d, np.ones(4), "nope")
    with pytest.raises(ValueError):
        dec.forward(d, np.ones(5), "a")


def test_stochastic_forward_repeatable_and_identity_at_zero_dropout():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10, 4))
    d = dec.init_decoder(DecoderConfig(tasks=("a",), input_dim=4, hidden_dim=16, dropout=0.5))
    assert np.array_equal(dec.forward(d, x, "a", dropout_seed=7), dec.forward(d, x, "a", dropout_seed=7))
    d0 = dec.init_decoder(DecoderConfig(tasks=("a",), input_dim=4, hidden_dim=16, dropout=0.0))
    assert np.array_equal(dec.forward(d0, x, "a", dropout_seed=7), dec.forward(d0, x, "a"))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(-1e3, 1e3))
def test_output_strictly_inside_unit_interval(seed, scale):
    rng = np.random.default_rng(seed)
    cfg = small_config(rng)
    d = dec.init_decoder(cfg)
    p = dec.forward(d, rng.normal(size=(5, cfg.input_dim)) * scale, cfg.tasks[0])
    assert np.all((p > 0) & (p < 1))


def test_multitask_shares_hidden_layer():
    cfg = DecoderConfig(tasks=("a", "b", "c"), input_dim=5, hidden_dim=6)
    d = dec.init_decoder(cfg)
    x = np.random.default_rng(1).normal(size=5)
    # task outputs differ only through the embedding row
    moved = d.with_parameters({**d.parameters(), "task_embeddings": np.zeros_like(d.task_embeddings)})
    assert dec.forward(moved, x, "a") == dec.forward(moved, x, "b") == dec.forward(moved, x, "c")
    assert len({dec.forward(d, x, t) for t in "abc"}) == 3


# gradients ---------------------------------------------------------------


@pytest.mark.parametrize("seed", range(25))
def test_gradient_matches_finite_differences(seed):
    assert gradient_rel_error(seed) < 1e-4


# MC dropout / ensembles --------------------------------------------------


def test_mc_dropout_single_pass_equals_stochastic_forward():
    rng = np.random.default_rng(2)
    d = dec.init_decoder(DecoderConfig(tasks=("a",), input_dim=4, hidden_dim=16))
    x = rng.normal(size=(6, 4))
    mc = dec.predict_mc_dropout(d, x, "a", passes=1, seed=11)
    assert np.array_equal(mc.mean, dec.forward(d, x, "a", dropout_seed=11))


@pytest.mark.parametrize("passes", [1, 3, 20])
def test_mc_dropout_zero_rate_is_deterministic(passes):
    rng = np.random.default_rng(passes)
    d = dec.init_decoder(DecoderConfig(tasks=("a",), input_dim=4, hidden_dim=16, dropout=0.0))
    x = rng.normal(size=(8, 4))
    assert np.array_equal(dec.predict_mc_dropout(d, x, "a", passes, seed=1).mean, dec.forward(d, x, "a"))


def test_mc_dropout_rejects_zero_passes():
    d = dec.init_decoder(DecoderConfig(tasks=("a",), input_dim=2, hidden_dim=2))
    with pytest.raises(ValueError):
        dec.predict_mc_dropout(d, np.ones(2), "a", 0, seed=0)


def test_ensemble_mean_and_order_invariance():
    cfgs = [DecoderConfig(tasks=("a",), input_dim=3, hidden_dim=4, seed=s) for s in range(4)]
    members = [dec.init_decoder(c) for c in cfgs]
    x = np.random.default_rng(0).normal(size=(5, 3))
    e = dec.ensemble_predict(members, x, "a")
    assert np.allclose(e, np.mean([dec.forward(m, x, "a") for m in members], axis=0), atol=0, rtol=1e-15)
    assert np.allclose(dec.ensemble_predict(members[::-1], x, "a"), e, atol=1e-15)
    same = [members[0]] * 5
    assert np.allclose(dec.ensemble_predict(same, x, "a"), dec.forward(members[0], x, "a"), atol=1e-15)
    with pytest.raises(ValueError):
        dec.ensemble_predict([], x, "a")


def test_ensemble_of_known_outputs():
    cfg = DecoderConfig(tasks=("a",), input_dim=1, hidden_dim=1)
    base = dec.init_decoder(cfg)

    def constant(p):
        params = {k: np.zeros_like(v) for k, v in base.parameters().items()}
        params["b2"] = np.asarray(math.log(p / (1 - p)))
        return base.with_parameters(params)

    out = dec.ensemble_predict([constant(0.2), constant(0.4), constant(0.6)], np.zeros(1), "a")
    assert out == pytest.approx(0.4, abs=1e-12)


# training ----------------------------------------------------------------


def test_train_separable_reaches_low_loss():
    rng = np.random.default_rng(0)
    data = records(200, 4, ["a"], rng)
    cfg = DecoderConfig(tasks=("a",), input_dim=4, hidden_dim=32, epochs=200, learning_rate=1e-2, seed=1)
    result = dec.train(dec.init_decoder(cfg), data)
    assert result.history[-1] < 0.1
    assert len(result.history) == 200


def test_train_zero_learning_rate_is_a_no_op():
    rng = np.random.default_rng(1)
    data = records(30, 3, ["a", "b"], rng)
    cfg = DecoderConfig(tasks=("a", "b"), input_dim=3, hidden_dim=5, epochs=4, learning_rate=0.0)
    d = dec.init_decoder(cfg)
    r = dec.train(d, data)
    for k in dec.PARAM_NAMES:
        assert np.array_equal(r.decoder.parameters()[k], d.parameters()[k])
    assert len(set(r.history)) == 1


def test_train_uses_only_configured_tasks():
    rng = np.random.default_rng(2)
    data = records(40, 3, ["a", "b", "c"], rng)
    cfg = DecoderConfig(tasks=("b",), input_dim=3, hidden_dim=4, epochs=2)
    r = dec.train(dec.init_decoder(cfg), data)
    assert r.decoder.tasks == ("b",)


def test_train_errors():
    cfg = DecoderConfig(tasks=("z",), input_dim=3, hidden_dim=4, epochs=1)
    with pytest.raises(ValueError):
        dec.train(dec.init_decoder(cfg), [])
    with pytest.raises(dec.MissingLabelError):
        dec.train(dec.init_decoder(cfg), records(5, 3, ["a"], np.random.default_rng(0)))


def test_train_deterministic():
    rng = np.random.default_rng(3)
    data = records(50, 3, ["a"], rng)
    cfg = DecoderConfig(tasks=("a",), input_dim=3, hidden_dim=6, epochs=3, seed=9)
    a = dec.train(dec.init_decoder(cfg), data)
    b = dec.train(dec.init_decoder(cfg), data)
    assert a.history == b.history
    assert np.array_equal(a.decoder.w1, b.decoder.w1)


# evaluation / io ---------------------------------------------------------


def test_evaluate_stub_predictors():
    rng = np.random.default_rng(4)
    data = records(40, 2, ["a"], rng)
    labels = {r.record_id: r.labels["a"] for r in data}
    order = [r.record_id for r in data]

    def perfect(x, task):
        return np.array([float(labels[i]) for i in order])

    reps, _ = dec.evaluate(perfect, data, ["a"], "baseline", "single")
    assert all(v == pytest.approx(0.0, abs=1e-10) for v in reps[0].metrics.values())
    reps, probs = dec.evaluate(lambda x, t: np.full(len(x), 0.5), data, ["a"], "baseline", "single")
    assert reps[0].metrics["brier"] == 0.25
    assert reps[0].metrics["nll"] == pytest.approx(math.log(2), abs=1e-12)
    assert probs["a"].shape == (40,)


def test_checkpoint_roundtrip(tmp_path):
    cfg = DecoderConfig(tasks=("a", "b"), input_dim=3, hidden_dim=4, seed=5)
    d = dec.init_decoder(cfg)
    dec.save_checkpoint(tmp_path / "d.json", d)
    back = dec.load_checkpoint(tmp_path / "d.json")
    assert back.config == cfg
    for k in dec.PARAM_NAMES:
        assert np.array_equal(back.parameters()[k], d.parameters()[k])
    text = (tmp_path / "d.json").read_text()
    (tmp_path / "bad.json").write_text(text.replace('"version": 1', '"version": 99'))
    with pytest.raises(ValueError):
        dec.load_checkpoint(tmp_path / "bad.json")


def test_embeddings_roundtrip(tmp_path):
    data = records(5, 3, ["a"], np.random.default_rng(0))
    dec.write_embeddings(tmp_path / "e.jsonl", data)
    back = dec.read_embeddings(tmp_path / "e.jsonl")
    assert [r.record_id for r in back] == [r.record_id for r in data]
    assert np.array_equal(back[2].embedding, data[2].embedding)
