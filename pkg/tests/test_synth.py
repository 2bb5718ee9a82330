import numpy as np
import pytest

from ehruq.blackbox import Generation, ResponseSet, SamplingParams, build_prompt, parse_answer, score_uncertainty
from ehruq.blackbox.tasks import TASKS
from ehruq.decoder import read_embeddings
from ehruq.ehr_core import load_concept_dictionary, read_cohort
from ehruq.synth import (
    CohortConfig,
    CohortConfigError,
    GroundTruthOracle,
    InfeasibleSampleError,
    MockBehavior,
    MockClient,
    UnknownPromptError,
    expected_positive_rate,
    generate_cohort,
    sample_test_set,
    write_cohort_files,
)

SMALL = dict(n_patients=60, embedding_dim=8, vocab_size=40, events_per_patient=(4, 12))


@pytest.fixture(scope="module")
def small():
    return generate_cohort(CohortConfig(**SMALL))


def test_generation_is_deterministic(tmp_path, small):
    a = write_cohort_files(small, tmp_path / "a")
    b = write_cohort_files(generate_cohort(CohortConfig(**SMALL)), tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()
    c = write_cohort_files(generate_cohort(CohortConfig(**SMALL, seed=1)), tmp_path / "c")
    assert a["cohort"].read_bytes() != c["cohort"].read_bytes()


def test_files_roundtrip(tmp_path, small):
    paths = write_cohort_files(small, tmp_path)
    assert read_cohort(paths["cohort"]) == small.sequences
    assert load_concept_dictionary(paths["concepts"]) == small.concepts
    recs = read_embeddings(paths["embeddings"])
    assert [r.record_id for r in recs] == [r.record_id for r in small.embeddings]
    for r, s in zip(recs, small.embeddings):
        np.testing.assert_allclose(r.embedding, s.embedding)
        assert r.labels == s.labels


def test_every_code_is_in_dictionary(small):
    codes = {e.code for s in small.sequences for e in s.events}
    assert all(small.concepts.get(c) is not None for c in codes)


def test_category_shares_prediction_time(small):
    for seq in small.sequences:
        for cat in small.config.categories:
            times = {seq.labels[t.task_id].prediction_time for t in small.config.tasks_for(cat)}
            assert len(times) == 1
            assert min(times) >= seq.events[0].timestamp


def test_embeddings_one_per_patient_category(small):
    cfg = small.config
    assert len(small.embeddings) == cfg.n_patients * len(cfg.categories)
    for cat in cfg.categories:
        recs = small.embeddings_for(cat)
        assert len(recs) == cfg.n_patients
        assert all(set(r.labels) == {t.task_id for t in cfg.tasks_for(cat)} for r in recs)
        assert all(r.embedding.shape == (cfg.embedding_dim,) for r in recs)


def test_saturated_negative_intercept_gives_no_positives():
    ids = [t.task_id for t in CohortConfig().tasks]
    cohort = generate_cohort(CohortConfig(**SMALL, label_intercepts={t: -20.0 for t in ids}))
    assert all(lab.label == 0 for s in cohort.sequences for lab in s.labels.values())


def test_default_prevalences_inside_range():
    cohort = generate_cohort(CohortConfig(**SMALL))
    lo, hi = cohort.config.prevalence_range
    for tid, w in cohort.weights.items():
        assert lo - 1e-6 <= expected_positive_rate(w, cohort.intercepts[tid]) <= hi + 1e-6


def test_label_rate_matches_monte_carlo():
    cfg = CohortConfig(n_patients=10_000, embedding_dim=4, vocab_size=30, events_per_patient=(3, 5))
    cohort = generate_cohort(cfg)
    rng = np.random.default_rng(123)
    z = rng.normal(size=(1_000_000, cfg.latent_dim))
    for t in cfg.tasks:
        w, b = cohort.weights[t.task_id], cohort.intercepts[t.task_id]
        mc = float(np.mean(1 / (1 + np.exp(-(z @ w + b)))))
        assert abs(mc - expected_positive_rate(w, b)) < 2e-3
        rate = np.mean([s.labels[t.task_id].label for s in cohort.sequences])
        assert abs(rate - mc) <= 0.02, t.task_id


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_patients": 0},
        {"embedding_dim": 0},
        {"events_per_patient": (1, 5)},
        {"events_per_patient": (6, 5)},
        {"prevalence_range": (0.0, 0.5)},
        {"label_intercepts": {"nope": 0.0}},
        {"label_intercepts": {"long_los": float("nan")}},
        {"label_weights": {"long_los": [1.0, 2.0]}},
        {"tasks": ()},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(CohortConfigError):
        CohortConfig(**kwargs)


# test-set sampling -------------------------------------------------------


def test_all_positive_cohort_accepts_first_draw():
    ids = [t.task_id for t in CohortConfig().tasks]
    cohort = generate_cohort(CohortConfig(**SMALL, label_intercepts={t: 30.0 for t in ids}))
    draw = sample_test_set(cohort.sequences, ["long_los", "icu_transfer"], n=20, min_pos=20)
    assert draw.draws == 1 and len(draw.sequences) == 20


def test_infeasible_sample_raises(small):
    with pytest.raises(InfeasibleSampleError):
        sample_test_set(small.sequences, ["long_los"], n=100)
    with pytest.raises(InfeasibleSampleError):
        sample_test_set(small.sequences, ["long_los"], n=10, min_pos=1000)


def test_accepted_subset_meets_minimum():
    cohort = generate_cohort(CohortConfig(n_patients=600, embedding_dim=4, vocab_size=30, events_per_patient=(3, 6)))
    for cat in cohort.config.categories:
        ids = [t.task_id for t in cohort.config.tasks_for(cat)]
        draw = sample_test_set(cohort.sequences, ids, n=100, min_pos=12, seed=3)
        assert len(draw.sequences) == 100
        assert len({s.patient_id for s in draw.sequences}) == 100
        for t in ids:
            assert sum(s.labels[t].label for s in draw.sequences) >= 12
        again = sample_test_set(cohort.sequences, ids, n=100, min_pos=12, seed=3)
        assert again == draw


# mock model --------------------------------------------------------------


def registered(mode="single", task="long_los", label=1, idx=0):
    oracle = GroundTruthOracle()
    tasks = [task] if mode == "single" else [t.task_id for t in TASKS.values() if t.category == TASKS[task].category]
    prompt = build_prompt(f"narrative {idx}", [TASKS[t] for t in tasks], mode)
    oracle.register(prompt, {t: label for t in tasks})
    return oracle, prompt


def responses(behavior, prompt, oracle, n):
    client = MockClient("m", behavior, oracle)
    gens = [Generation("m", client.generate(prompt.text, SamplingParams(1.0, seed=s))) for s in range(n)]
    return ResponseSet.from_generations(prompt.fingerprint, prompt.task_ids, prompt.mode, gens)


def answers(behavior, prompt, oracle, n):
    return [a.value for a in responses(behavior, prompt, oracle, n).parsed[prompt.task_ids[0]]]


def test_behavior_validation():
    with pytest.raises(ValueError):
        MockBehavior(accuracy_signal=-1)
    with pytest.raises(ValueError):
        MockBehavior(noise_temperature=0)
    with pytest.raises(ValueError):
        MockBehavior(invalid_rate=1.5)


def test_zero_signal_is_a_coin_flip():
    b = MockBehavior(accuracy_signal=0.0)
    assert b.p_yes(0) == b.p_yes(1) == 0.5
    oracle, prompt = registered()
    got = answers(b, prompt, oracle, 2000)
    assert abs(got.count("Yes") / 2000 - 0.5) < 0.04


def test_full_invalid_rate_gives_sentinel_entropy():
    oracle, prompt = registered()
    rs = responses(MockBehavior(invalid_rate=1.0), prompt, oracle, 20)
    assert set(a.value for a in rs.parsed["long_los"]) == {"Invalid"}
    u = score_uncertainty(rs)["long_los"]
    assert u.entropy == pytest.approx(np.log(2)) and u.valid == 0


def test_strong_signal_majority_is_accurate():
    b = MockBehavior(accuracy_signal=5.0)
    correct = 0
    for i in range(200):
        label = i % 2
        oracle, prompt = registered(label=label, idx=i)
        got = answers(b, prompt, oracle, 10)
        yes = got.count("Yes")
        correct += (yes > 5) == bool(label)
    assert correct / 200 > 0.95


def test_mock_is_deterministic_per_seed():
    oracle, prompt = registered()
    c = MockClient("m", MockBehavior(), oracle)
    p = SamplingParams(1.0, seed=7)
    assert c.generate(prompt.text, p) == c.generate(prompt.text, p)


def test_multi_mock_answers_every_task():
    oracle, prompt = registered(mode="multi")
    text = MockClient("m", MockBehavior(), oracle).generate(prompt.text, SamplingParams(1.0, seed=0))
    parsed = parse_answer(text, prompt.task_ids, "multi")
    assert set(parsed) == set(prompt.task_ids)
    assert all(a.value in ("Yes", "No") for a in parsed.values())


def test_unregistered_prompt_raises():
    c = MockClient("m", MockBehavior(), GroundTruthOracle())
    with pytest.raises(UnknownPromptError):
        c.generate("never seen", SamplingParams(1.0, seed=0))
