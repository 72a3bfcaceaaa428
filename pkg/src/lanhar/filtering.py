"""KL-guided iterative re-generation of low-quality interpretations.

Interpretations of one activity are split once into parts A and B. Each round
greedily picks the k samples whose removal most lowers KL(A || B), asks the
backend to correct them, and keeps a correction only if it lowers the KL of
the full parts.
"""

from __future__ import annotations

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ArgumentError, LanharError
from .interpret.service import SemanticInterpretation
from .kl import estimate_kl

log = logging.getLogger(__name__)

RegenFn = Callable[[str, SemanticInterpretation], SemanticInterpretation]
EmbedFn = Callable[[str], np.ndarray]


@dataclass(frozen=True)
class FilterConfig:
    k: int = 2
    max_iterations: int = 10
    patience: int = 3
    min_rel_improvement: float = 0.01
    seed: int = 0
    concurrency: int = 1

    def __post_init__(self):
        if self.k < 1 or self.max_iterations < 1 or self.patience < 1:
            raise ArgumentError("k, max_iterations and patience must be positive")
        if not 0.0 <= self.min_rel_improvement < 1.0:
            raise ArgumentError("min_rel_improvement must lie in [0, 1)")


@dataclass
class FilterState:
    activity: str
    part_A: list[tuple[str, np.ndarray]]
    part_B: list[tuple[str, np.ndarray]]
    selection_set: list[str] = field(default_factory=list)
    kl_history: list[float] = field(default_factory=list)
    iteration: int = 0
    texts: dict[str, SemanticInterpretation] = field(default_factory=dict)

    def __post_init__(self):
        ids_a = {i for i, _ in self.part_A}
        ids_b = {i for i, _ in self.part_B}
        if ids_a & ids_b:
            raise ArgumentError(f"parts overlap on {sorted(ids_a & ids_b)}")

    def current_kl(self) -> float:
        return estimate_kl(_stack(self.part_A), _stack(self.part_B))


def _stack(part) -> np.ndarray:
    return np.stack([v for _, v in part])


def split_parts(activity: str, items: list[tuple[str, np.ndarray]], seed: int
                ) -> tuple[list, list]:
    """Seeded random halving; the permutation depends on (seed, activity) only."""
    items = sorted(items, key=lambda t: t[0])
    rng = np.random.default_rng([seed, zlib.crc32(activity.encode())])
    perm = rng.permutation(len(items))
    half = len(items) // 2
    return [items[i] for i in perm[:half]], [items[i] for i in perm[half:]]


def init_state(activity: str, items: list[tuple[str, np.ndarray]], seed: int,
               texts: Mapping[str, SemanticInterpretation] | None = None) -> FilterState:
    a, b = split_parts(activity, items, seed)
    state = FilterState(activity=activity, part_A=a, part_B=b, texts=dict(texts or {}))
    state.kl_history.append(state.current_kl())
    return state


def select_worst_k(state: FilterState, config: FilterConfig) -> list[str]:
    """Greedy selection of the k samples most inflating KL(A || B).

    Each step removes, from either part, the sample whose removal gives the
    lowest KL; ties go to the lowest id. Parts never shrink below 2.
    """
    k = config.k
    if len(state.part_A) + len(state.part_B) <= k + 4:
        raise ArgumentError(f"need more than k + 4 = {k + 4} samples, have "
                            f"{len(state.part_A) + len(state.part_B)}")
    a = list(state.part_A)
    b = list(state.part_B)
    selected: list[str] = []
    for _ in range(k):
        best: tuple[float, str, int, int] | None = None
        arr_a, arr_b = _stack(a), _stack(b)
        for side, part, arr in ((0, a, arr_a), (1, b, arr_b)):
            if len(part) <= 2:
                continue
            for idx, (iid, _) in enumerate(part):
                rest = np.delete(arr, idx, axis=0)
                kl = estimate_kl(rest, arr_b) if side == 0 else estimate_kl(arr_a, rest)
                cand = (kl, iid, side, idx)
                if best is None or cand[:2] < best[:2]:
                    best = cand
        if best is None:
            raise ArgumentError("both parts are at the 2-sample minimum")
        _, iid, side, idx = best
        (a if side == 0 else b).pop(idx)
        selected.append(iid)
    return selected


def run_filter_round(state: FilterState, config: FilterConfig, regen: RegenFn, embed: EmbedFn
                     ) -> tuple[FilterState, dict]:
    """One select → regenerate → accept round. Returns the new state and a round log."""
    selection = select_worst_k(state, config)
    order = sorted(selection)

    def _regen(iid: str):
        try:
            return regen(iid, state.texts.get(iid))
        except LanharError as exc:
            log.warning("regeneration of %s failed: %s", iid, exc)
            return exc

    if config.concurrency > 1:
        with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            results = list(pool.map(_regen, order))
    else:
        results = [_regen(iid) for iid in order]

    part_a = list(state.part_A)
    part_b = list(state.part_B)
    where = {iid: (0, i) for i, (iid, _) in enumerate(part_a)}
    where.update({iid: (1, i) for i, (iid, _) in enumerate(part_b)})
    texts = dict(state.texts)
    current = estimate_kl(_stack(part_a), _stack(part_b))
    accepted, rejected, failed = [], [], []
    for iid, new in zip(order, results):
        if isinstance(new, Exception):
            failed.append(iid)
            continue
        side, pos = where[iid]
        part = part_a if side == 0 else part_b
        old = part[pos]
        part[pos] = (iid, np.asarray(embed(new.text), dtype=np.float64))
        trial = estimate_kl(_stack(part_a), _stack(part_b))
        if trial < current:
            current = trial
            texts[iid] = new
            accepted.append(iid)
        else:
            part[pos] = old
            rejected.append(iid)
    new_state = FilterState(activity=state.activity, part_A=part_a, part_B=part_b,
                            selection_set=selection, kl_history=[*state.kl_history, current],
                            iteration=state.iteration + 1, texts=texts)
    return new_state, {"selected": selection, "accepted": accepted, "rejected": rejected,
                       "failed": failed, "kl": current}


def run_filter(corpus: Mapping[str, Mapping[str, SemanticInterpretation]], config: FilterConfig,
               regen: RegenFn, embed: EmbedFn) -> tuple[dict[str, dict[str, SemanticInterpretation]], dict]:
    """Filter every activity's interpretations; returns (filtered corpus, report)."""
    filtered: dict[str, dict[str, SemanticInterpretation]] = {}
    report: dict = {"config": {"k": config.k, "max_iterations": config.max_iterations,
                               "patience": config.patience,
                               "min_rel_improvement": config.min_rel_improvement,
                               "seed": config.seed},
                    "activities": {}, "warnings": []}
    for activity in sorted(corpus):
        interps = dict(corpus[activity])
        filtered[activity] = interps
        if len(interps) < config.k + 6:
            msg = (f"activity {activity!r} skipped: {len(interps)} interpretations, "
                   f"need >= {config.k + 6}")
            log.warning(msg)
            report["warnings"].append(msg)
            continue
        items = [(iid, np.asarray(embed(interps[iid].text), dtype=np.float64))
                 for iid in sorted(interps)]
        state = init_state(activity, items, config.seed, interps)
        rounds = []
        stall = 0
        while state.iteration < config.max_iterations and stall < config.patience:
            prev = state.kl_history[-1]
            state, info = run_filter_round(state, config, regen, embed)
            rounds.append(info)
            new = state.kl_history[-1]
            rel = (prev - new) / prev if prev > 0 else 0.0
            stall = stall + 1 if rel < config.min_rel_improvement else 0
        filtered[activity] = state.texts
        report["activities"][activity] = {
            "kl_history": state.kl_history,
            "rounds": len(rounds),
            "accepted": sum(len(r["accepted"]) for r in rounds),
            "rejected": sum(len(r["rejected"]) for r in rounds),
            "failed": sum(len(r["failed"]) for r in rounds),
            "selected_per_round": [r["selected"] for r in rounds],
        }
    return filtered, report
