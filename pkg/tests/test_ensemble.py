import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resight import rng
from resight.constants import WEIGHT_FLOOR
from resight.ensemble import (
    CascadeConfig,
    EnsembleWeights,
    aggregate,
    bagged_score,
    cascade_match,
    normalize_scores,
    update_weights,
)
from resight.matchers.descriptors import descriptor_cosine, extract_features

# ---------------------------------------------------------------------------
# normalize_scores


def test_rank_map_example():
    np.testing.assert_allclose(normalize_scores([0.2, 0.9, 0.5]), [0.0, 1.0, 0.5])


def test_all_equal_raws_map_to_half():
    np.testing.assert_allclose(normalize_scores([0.3] * 5), [0.5] * 5)


def test_fewer_than_two_candidates_raises():
    with pytest.raises(ValueError, match="at least two"):
        normalize_scores([0.4])


def test_order_preserved_on_seeded_raws():
    for seed in range(100):
        gen = rng.generator("norm-oracle", seed)
        raw = np.round(gen.random(int(gen.integers(2, 40))), 2)
        normalized = normalize_scores(raw)
        # ties grouped: equal raws get equal normalized values
        for i in range(len(raw)):
            for j in range(len(raw)):
                if raw[i] < raw[j]:
                    assert normalized[i] < normalized[j]
                elif raw[i] == raw[j]:
                    assert normalized[i] == normalized[j]
        assert normalized.min() >= 0.0 and normalized.max() <= 1.0


# ---------------------------------------------------------------------------
# aggregate


def test_single_method_identity():
    scores = {"m": {"a": 0.1, "b": 0.9}}
    combined = aggregate(scores, EnsembleWeights({"m": 1.0}))
    assert combined == pytest.approx(scores["m"])


def test_symmetric_methods_average_to_half():
    s = {"a": 0.2, "b": 0.7, "c": 1.0}
    scores = {"m1": s, "m2": {k: 1.0 - v for k, v in s.items()}}
    combined = aggregate(scores, EnsembleWeights.uniform(["m1", "m2"]))
    assert all(v == pytest.approx(0.5) for v in combined.values())


def test_matches_direct_formula():
    gen = rng.generator("agg-oracle")
    candidates = [f"c{i}" for i in range(10)]
    methods = ["m1", "m2", "m3"]
    scores = {m: {c: float(gen.random()) for c in candidates} for m in methods}
    raw_w = gen.random(3)
    weights = EnsembleWeights(dict(zip(methods, raw_w / raw_w.sum())))
    combined = aggregate(scores, weights)
    for c in candidates:
        expected = sum(weights[m] * scores[m][c] for m in methods)
        assert combined[c] == pytest.approx(expected, abs=1e-12)


def test_mismatched_candidate_sets_raise():
    with pytest.raises(ValueError, match="different candidate sets"):
        aggregate({"m1": {"a": 0.1}, "m2": {"b": 0.2}}, EnsembleWeights.uniform(["m1", "m2"]))


# ---------------------------------------------------------------------------
# update_weights


def make_scores(pairs, method_values):
    return {m: {p: v for p, v in zip(pairs, values)} for m, values in method_values.items()}


def test_empty_verified_set_is_noop():
    w = EnsembleWeights.uniform(["m1", "m2"])
    assert update_weights(w, [], {}).as_dict() == w.as_dict()


def test_zero_eta_is_noop():
    w = EnsembleWeights.uniform(["m1", "m2"])
    pairs = [("p1", "same"), ("p2", "different")]
    scores = make_scores(["p1", "p2"], {"m1": [1.0, 0.0], "m2": [0.0, 1.0]})
    assert update_weights(w, pairs, scores, eta=0.0).as_dict() == w.as_dict()


def test_single_class_is_noop_with_notice(caplog):
    w = EnsembleWeights.uniform(["m1", "m2"])
    pairs = [("p1", "same"), ("p2", "same")]
    scores = make_scores(["p1", "p2"], {"m1": [1.0, 0.9], "m2": [0.2, 0.3]})
    with caplog.at_level("INFO"):
        out = update_weights(w, pairs, scores, eta=0.5)
    assert out.as_dict() == w.as_dict()
    assert "single-class" in caplog.text


def test_perfect_matcher_dominates_after_ten_rounds():
    # closed form: weight ratio after 10 rounds = exp(10 * 0.5 * (1 - (-1)))
    w = EnsembleWeights.uniform(["perfect", "anti"])
    pairs = [("s", "same"), ("d", "different")]
    scores = make_scores(["s", "d"], {"perfect": [1.0, 0.0], "anti": [0.0, 1.0]})
    for _ in range(10):
        w = update_weights(w, pairs, scores, eta=0.5)
    expected_ratio = math.exp(10 * 0.5 * 2.0)
    assert w["perfect"] / w["anti"] == pytest.approx(expected_ratio, rel=1e-6)
    assert w["perfect"] >= 0.99


def test_positive_margin_never_decreases_unnormalized_weight():
    w = EnsembleWeights({"up": 0.5, "down": 0.5})
    pairs = [("s", "same"), ("d", "different")]
    scores = make_scores(["s", "d"], {"up": [0.8, 0.4], "down": [0.5, 0.9]})
    out = update_weights(w, pairs, scores, eta=0.7)
    # relative share must move toward the positive-margin method
    assert out["up"] > w["up"]
    assert out["down"] < w["down"]


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=1, max_value=8))
def test_simplex_preserved_under_update_sequences(seed, rounds):
    gen = rng.generator("simplex-hyp", seed)
    methods = [f"m{i}" for i in range(int(gen.integers(2, 5)))]
    w = EnsembleWeights.uniform(methods)
    pairs = [("s", "same"), ("d", "different")]
    for _ in range(rounds):
        scores = {m: {"s": float(gen.random()), "d": float(gen.random())} for m in methods}
        w = update_weights(w, pairs, scores, eta=float(gen.random() * 2))
    values = list(w.as_dict().values())
    assert sum(values) == pytest.approx(1.0, abs=1e-12)
    assert all(v >= WEIGHT_FLOOR for v in values)


# ---------------------------------------------------------------------------
# bagged_score


def seeded_feature_pair(seed=0):
    gen = rng.generator("bag-img", seed)
    image_a = gen.random((72, 72))
    image_b = gen.random((72, 72))
    fids = [(20, 20), (40, 22), (30, 40), (50, 44), (24, 52), (52, 28)]
    return extract_features(image_a, fids), extract_features(image_b, fids)


def test_single_bag_equals_plain_method():
    fa, fb = seeded_feature_pair()
    plain = descriptor_cosine(fa, fb)
    assert bagged_score(fa, fb, descriptor_cosine, bags=1, seed=5) == plain


def test_same_seed_is_deterministic():
    fa, fb = seeded_feature_pair(1)
    s1 = bagged_score(fa, fb, descriptor_cosine, bags=8, seed=3)
    s2 = bagged_score(fa, fb, descriptor_cosine, bags=8, seed=3)
    assert s1 == s2


def test_too_few_fiducials_falls_back_with_warning(caplog):
    gen = rng.generator("bag-few")
    image = gen.random((72, 72))
    fa = extract_features(image, [(20, 20), (40, 40)])
    fb = extract_features(image, [(20, 20), (40, 40)])
    with caplog.at_level("WARNING"):
        score = bagged_score(fa, fb, descriptor_cosine, bags=8, seed=0)
    assert score == descriptor_cosine(fa, fb)
    assert "falling back" in caplog.text


# ---------------------------------------------------------------------------
# cascade_match


def dict_scorers(tables):
    return {m: (lambda c, t=t: t[c]) for m, t in tables.items()}


def counting_scorers(tables, counters):
    def make(m, t):
        def score(c):
            counters[m] += 1
            return t[c]

        return score

    return {m: make(m, t) for m, t in tables.items()}


def test_empty_pool_returns_empty():
    config = CascadeConfig()
    ranked = cascade_match("q", [], {}, config, EnsembleWeights.uniform(config.method_ids))
    assert ranked.ranking == []


def test_single_candidate_invokes_expensive_at_most_once():
    config = CascadeConfig()
    counters = {m: 0 for m in config.method_ids}
    tables = {m: {"only": 0.7} for m in config.method_ids}
    ranked = cascade_match(
        "q", ["only"], counting_scorers(tables, counters), config, EnsembleWeights.uniform(config.method_ids)
    )
    assert [c for c, _ in ranked.ranking] == ["only"]
    assert counters["deformation"] <= 1


def test_full_fraction_equals_exhaustive_aggregation():
    gen = rng.generator("cascade-exh")
    pool = [f"c{i}" for i in range(20)]
    tables = {"cheap": {c: float(gen.random()) for c in pool}, "pricey": {c: float(gen.random()) for c in pool}}
    weights = EnsembleWeights.uniform(["cheap", "pricey"])
    config = CascadeConfig(stages=(("cheap", 1.0), ("pricey", 1.0)))
    ranked = cascade_match("q", pool, dict_scorers(tables), config, weights)
    normalized = {m: dict(zip(pool, normalize_scores([tables[m][c] for c in pool]))) for m in tables}
    expected = aggregate(normalized, weights)
    expected_order = sorted(pool, key=lambda c: (-expected[c], c))
    assert [c for c, _ in ranked.ranking] == expected_order
    for c, s in ranked.ranking:
        assert s == pytest.approx(expected[c], abs=1e-12)


def test_budget_respected_and_non_survivors_keep_stage1_order():
    gen = rng.generator("cascade-budget")
    pool = [f"c{i:02d}" for i in range(30)]
    tables = {"cheap": {c: float(gen.random()) for c in pool}, "pricey": {c: float(gen.random()) for c in pool}}
    counters = {"cheap": 0, "pricey": 0}
    config = CascadeConfig(stages=(("cheap", 0.2), ("pricey", 1.0)))
    ranked = cascade_match(
        "q", pool, counting_scorers(tables, counters), config, EnsembleWeights.uniform(["cheap", "pricey"])
    )
    budget = math.ceil(0.2 * len(pool))
    assert counters["pricey"] == budget
    assert ranked.method_calls["pricey"] == budget
    stage1_order = sorted(pool, key=lambda c: (-tables["cheap"][c], c))
    survivors = stage1_order[:budget]
    tail = [c for c, _ in ranked.ranking[budget:]]
    assert tail == [c for c in stage1_order if c not in survivors]
    # non-survivor scores sit strictly below every survivor, and a plain
    # score sort reproduces the emitted ordering
    floor = min(s for _, s in ranked.ranking[:budget])
    assert all(s < floor or floor == s == 0 for _, s in ranked.ranking[budget:])
    assert all(s < 0 for _, s in ranked.ranking[budget:])
    resorted = sorted(ranked.ranking, key=lambda cs: (-cs[1], cs[0]))
    assert [c for c, _ in resorted] == [c for c, _ in ranked.ranking]


def test_argmax_stable_under_positive_rescaling_of_one_method():
    gen = rng.generator("cascade-scale")
    pool = [f"c{i}" for i in range(15)]
    tables = {"cheap": {c: float(gen.random()) for c in pool}, "pricey": {c: float(gen.random()) for c in pool}}
    config = CascadeConfig(stages=(("cheap", 0.4), ("pricey", 1.0)))
    weights = EnsembleWeights.uniform(["cheap", "pricey"])
    base = cascade_match("q", pool, dict_scorers(tables), config, weights)
    scaled_tables = {"cheap": {c: 7.3 * v for c, v in tables["cheap"].items()}, "pricey": tables["pricey"]}
    scaled = cascade_match("q", pool, dict_scorers(scaled_tables), config, weights)
    assert [c for c, _ in base.ranking] == [c for c, _ in scaled.ranking]


def test_cascade_config_validation():
    with pytest.raises(ValueError, match="strictly decrease"):
        CascadeConfig(stages=(("a", 0.2), ("b", 0.3), ("c", 1.0)))
    with pytest.raises(ValueError, match="outside"):
        CascadeConfig(stages=(("a", 0.0),))
