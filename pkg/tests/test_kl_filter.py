import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanhar.errors import ArgumentError, BackendError
from lanhar.filtering import (
    FilterConfig,
    FilterState,
    init_state,
    run_filter,
    run_filter_round,
    select_worst_k,
)
from lanhar.interpret.service import SemanticInterpretation
from lanhar.kl import estimate_kl
from oracles import exhaustive_greedy, gaussian_kl_oracle


class TestEstimateKL:
    def test_self_is_zero(self, rng):
        p = rng.normal(size=(20, 5))
        assert estimate_kl(p, p) == 0.0

    def test_unit_shift(self):
        # {-1, 1} has moments (0, 1); {0, 2} has moments (1, 1)
        assert estimate_kl([[-1.0], [1.0]], [[0.0], [2.0]]) == pytest.approx(0.5, abs=1e-12)

    def test_asymmetry(self):
        p, q = [[-1.0], [1.0]], [[-1.0], [3.0]]  # N(0,1) and N(1,4)
        forward = 0.5 * (math.log(4) + 2 / 4 - 1)
        backward = 0.5 * (math.log(1 / 4) + 5 - 1)
        assert estimate_kl(p, q) == pytest.approx(forward, abs=1e-12)
        assert estimate_kl(q, p) == pytest.approx(backward, abs=1e-12)
        assert forward != pytest.approx(backward)

    def test_errors(self):
        with pytest.raises(ArgumentError):
            estimate_kl([[1.0, 2.0]], [[1.0, 2.0], [3.0, 4.0]])
        with pytest.raises(ArgumentError):
            estimate_kl(np.zeros((3, 2)), np.zeros((3, 3)))

    def test_constant_sets_floored(self):
        assert estimate_kl(np.ones((4, 3)), np.ones((4, 3))) == 0.0
        assert math.isfinite(estimate_kl(np.ones((4, 3)), np.zeros((4, 3))))

    def test_knn_option(self, rng):
        p = rng.normal(size=(200, 2))
        q = rng.normal(loc=3.0, size=(200, 2))
        assert estimate_kl(p, q, method="knn") > estimate_kl(p, p[::-1], method="knn")

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 12), st.integers(2, 12), st.integers(1, 6))
    def test_matches_oracle_and_nonnegative(self, seed, n, m, d):
        r = np.random.default_rng(seed)
        p = r.normal(size=(n, d)) * r.uniform(0.1, 3, size=d)
        q = r.normal(loc=r.normal(size=d), size=(m, d))
        kl = estimate_kl(p, q)
        assert kl >= 0
        assert kl == pytest.approx(gaussian_kl_oracle(p, q), rel=1e-9, abs=1e-9)


def _ids(n, prefix="i"):
    return [f"{prefix}{i:02d}" for i in range(n)]


def _state(vectors, split=None):
    ids = _ids(len(vectors))
    items = [(i, np.asarray(v, float)) for i, v in zip(ids, vectors)]
    split = len(items) // 2 if split is None else split
    return FilterState("walking", items[:split], items[split:])


def _exhaustive_greedy(state, k):
    return exhaustive_greedy(state.part_A, state.part_B, k)


class TestSelectWorstK:
    def test_single_outlier(self, rng):
        vecs = list(rng.normal(scale=0.05, size=(10, 3)))
        vecs.insert(3, np.array([8.0, -8.0, 8.0]))
        state = _state(vecs)
        assert select_worst_k(state, FilterConfig(k=1)) == ["i03"]
        assert _exhaustive_greedy(state, 1) == ["i03"]

    def test_two_outliers(self, rng):
        vecs = list(rng.normal(scale=0.05, size=(10, 3)))
        vecs.insert(2, np.array([6.0, 6.0, 6.0]))
        vecs.insert(8, np.array([-9.0, 9.0, 0.0]))
        state = _state(vecs)
        got = select_worst_k(state, FilterConfig(k=2))
        assert sorted(got) == ["i02", "i08"]
        assert got == _exhaustive_greedy(state, 2)

    def test_identical_embeddings_lowest_ids(self):
        state = _state([np.ones(4)] * 12)
        assert select_worst_k(state, FilterConfig(k=3)) == ["i00", "i01", "i02"]

    def test_precondition(self):
        with pytest.raises(ArgumentError):
            select_worst_k(_state(np.zeros((6, 2))), FilterConfig(k=2))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(6, 12))
    def test_k1_equals_exhaustive(self, seed, n):
        vecs = np.random.default_rng(seed).normal(size=(n, 3))
        state = _state(vecs)
        assert select_worst_k(state, FilterConfig(k=1)) == _exhaustive_greedy(state, 1)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_k3_equals_greedy_oracle(self, seed):
        state = _state(np.random.default_rng(seed).normal(size=(12, 2)))
        assert select_worst_k(state, FilterConfig(k=3)) == _exhaustive_greedy(state, 3)


def _interp(iid, text, attempt=1):
    return SemanticInterpretation(iid, "sensor", text, "mock", attempt, "h")


class Toy:
    """Embedding lookup plus a scripted regenerator."""

    def __init__(self, vectors, fixes=None, fail=()):
        self.vectors = {f"text:{i}": np.asarray(v, float) for i, v in zip(_ids(len(vectors)), vectors)}
        self.fixes = dict(fixes or {})
        self.fail = set(fail)
        self.calls = []

    def embed(self, text):
        return self.vectors[text]

    def regen(self, iid, prev):
        self.calls.append(iid)
        if iid in self.fail:
            raise BackendError("down")
        text = f"fixed:{iid}"
        self.vectors[text] = np.asarray(self.fixes.get(iid, self.vectors[prev.text]), float)
        return _interp(iid, text, prev.attempt + 1)

    def corpus(self):
        return {i: _interp(i, f"text:{i}") for i in _ids(len([k for k in self.vectors if k.startswith("text:")]))}


def _outlier_vectors(rng, n=12, where=(4,)):
    vecs = rng.normal(scale=0.1, size=(n, 3))
    for w in where:
        vecs[w] = [5.0, -5.0, 5.0]
    return vecs


def _state_from(toy, seed=0):
    texts = toy.corpus()
    items = [(i, toy.embed(t.text)) for i, t in sorted(texts.items())]
    return init_state("walking", items, seed, texts)


def _split_state(toy, n_a):
    # first n_a ids form part A so planted outliers share one side
    texts = toy.corpus()
    items = [(i, toy.embed(t.text)) for i, t in sorted(texts.items())]
    state = FilterState("walking", items[:n_a], items[n_a:], texts=texts)
    state.kl_history.append(state.current_kl())
    return state


class TestRunFilterRound:
    def test_identical_regen_rejected(self, rng):
        toy = Toy(_outlier_vectors(rng))
        state = _state_from(toy)
        new, info = run_filter_round(state, FilterConfig(k=2), toy.regen, toy.embed)
        assert info["accepted"] == [] and new.kl_history[-1] == state.kl_history[-1]
        assert new.iteration == 1 and new.texts == state.texts

    def test_outlier_repair_accepted(self, rng):
        vecs = _outlier_vectors(rng)
        toy = Toy(vecs, fixes={"i04": np.zeros(3)})
        state = _split_state(toy, 6)
        new, info = run_filter_round(state, FilterConfig(k=1), toy.regen, toy.embed)
        assert info["selected"] == ["i04"] and info["accepted"] == ["i04"]
        a = [v for _, v in new.part_A]
        b = [v for _, v in new.part_B]
        assert new.kl_history[-1] == pytest.approx(gaussian_kl_oracle(a, b))
        assert new.kl_history[-1] < state.kl_history[-1]
        assert new.texts["i04"].text == "fixed:i04"

    def test_mixed_batch(self, rng):
        vecs = _outlier_vectors(rng, where=(2, 4))
        vecs[4] = [-5.0, 5.0, 5.0]
        toy = Toy(vecs, fixes={"i02": np.zeros(3), "i04": [20.0, 20.0, -20.0]})
        state = _split_state(toy, 6)
        new, info = run_filter_round(state, FilterConfig(k=2), toy.regen, toy.embed)
        assert sorted(info["selected"]) == ["i02", "i04"]
        assert info["accepted"] == ["i02"] and info["rejected"] == ["i04"]
        assert new.texts["i04"].text == "text:i04"
        assert new.kl_history[-1] < state.kl_history[-1]

    def test_failed_regen_keeps_original(self, rng):
        toy = Toy(_outlier_vectors(rng), fail={"i04"})
        state = _split_state(toy, 6)
        new, info = run_filter_round(state, FilterConfig(k=1), toy.regen, toy.embed)
        assert info["failed"] == ["i04"] and new.texts["i04"].text == "text:i04"

    def test_concurrency_same_result(self, rng):
        vecs = _outlier_vectors(rng, where=(2, 9))
        fixes = {"i02": np.zeros(3), "i09": np.full(3, 0.05)}
        serial = run_filter_round(_state_from(Toy(vecs, fixes)), FilterConfig(k=2), *_fns(Toy(vecs, fixes)))
        toy = Toy(vecs, fixes)
        parallel = run_filter_round(_state_from(toy), FilterConfig(k=2, concurrency=4), toy.regen, toy.embed)
        assert serial[1] == parallel[1]


def _fns(toy):
    return toy.regen, toy.embed


class TestRunFilter:
    def test_converged_corpus(self):
        toy = Toy(np.ones((10, 3)))
        _, report = run_filter({"sitting": toy.corpus()}, FilterConfig(k=2, patience=3), toy.regen, toy.embed)
        r = report["activities"]["sitting"]
        assert r["rounds"] == 3 and r["accepted"] == 0 and r["kl_history"] == [0.0] * 4

    def test_planted_outliers_repaired(self, rng):
        vecs = _outlier_vectors(rng, n=16, where=(1, 6, 11))
        toy = Toy(vecs, fixes={i: rng.normal(scale=0.1, size=3) for i in ("i01", "i06", "i11")})
        filtered, report = run_filter({"walking": toy.corpus()}, FilterConfig(k=2, max_iterations=5),
                                      toy.regen, toy.embed)
        hist = report["activities"]["walking"]["kl_history"]
        assert hist[-1] < hist[0]
        assert all(b <= a for a, b in zip(hist, hist[1:]))
        accepted = [i for i, t in filtered["walking"].items() if t.text.startswith("fixed:")]
        assert report["activities"]["walking"]["accepted"] == len(accepted) >= 1

    def test_budget_one_round(self, rng):
        toy = Toy(_outlier_vectors(rng), fixes={"i04": np.zeros(3)})
        _, report = run_filter({"walking": toy.corpus()}, FilterConfig(k=1, max_iterations=1),
                               toy.regen, toy.embed)
        assert report["activities"]["walking"]["rounds"] == 1

    def test_small_activity_skipped(self, rng):
        toy = Toy(rng.normal(size=(7, 3)))
        filtered, report = run_filter({"lying": toy.corpus()}, FilterConfig(k=2), toy.regen, toy.embed)
        assert "lying" not in report["activities"] and report["warnings"]
        assert filtered["lying"] == toy.corpus() and toy.calls == []

    def test_deterministic(self, rng):
        vecs = _outlier_vectors(rng, n=14, where=(0, 7))
        out = []
        for _ in range(2):
            toy = Toy(vecs, fixes={"i00": np.zeros(3)})
            out.append(run_filter({"walking": toy.corpus()}, FilterConfig(k=2, seed=5), toy.regen, toy.embed)[1])
        assert out[0] == out[1]
