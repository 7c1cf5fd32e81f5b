"""Distance-based accuracy (DBA) score and top-k accuracy."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _accel


@dataclass(frozen=True)
class DbaConfig:
    K: int = 3
    delta: float = 5.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")


@dataclass
class DbaReport:
    per_rank: list[float]
    score: float
    n_samples: int
    top1: float = float("nan")
    top3: float = float("nan")
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"Y": list(self.per_rank), "dba": self.score, "top1": self.top1,
                "top3": self.top3, "n": self.n_samples}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "DbaReport":
        return cls(per_rank=[float(v) for v in d["Y"]], score=float(d["dba"]),
                   n_samples=int(d["n"]), top1=float(d["top1"]), top3=float(d["top3"]))


def rank_predictions(p, K: int) -> list[int]:
    """Indices of the ``K`` most probable beams; equal probabilities rank by index."""
    p = np.asarray(getattr(p, "p", p), dtype=np.float64).ravel()
    if K > p.size:
        raise ValueError(f"K={K} exceeds the number of beams M={p.size}")
    order = np.argsort(-p, kind="stable")
    return [int(i) for i in order[:K]]


def rank_batch(probs: np.ndarray, K: int) -> np.ndarray:
    """Row-wise :func:`rank_predictions` for an ``(N, M)`` array."""
    probs = np.asarray(probs, dtype=np.float64)
    if K > probs.shape[1]:
        raise ValueError(f"K={K} exceeds the number of beams M={probs.shape[1]}")
    return np.argsort(-probs, axis=1, kind="stable")[:, :K]


def topk_accuracy(truths, ranked, k: int) -> float:
    truths = np.asarray(truths).ravel()
    ranked = np.asarray(ranked)
    if ranked.ndim != 2 or k > ranked.shape[1]:
        raise ValueError("k must not exceed the ranked list length")
    if truths.size == 0:
        return float("nan")
    return float(np.mean(np.any(ranked[:, :k] == truths[:, None], axis=1)))


def dba_score(truths, ranked, cfg: DbaConfig | None = None) -> DbaReport:
    """Score ``K``-ranked beam predictions against ground-truth indices.

    ``Y_k`` is one minus the mean, over samples, of the smallest capped
    normalized distance ``min(|pred - truth| / delta, 1)`` among the first
    ``k`` predictions; the score averages ``Y_1..Y_K``.
    """
    cfg = cfg or DbaConfig()
    truths = np.asarray(truths).ravel()
    ranked = np.asarray(ranked)
    if truths.size == 0:
        raise ValueError("dba_score needs at least one sample")
    if ranked.ndim != 2 or ranked.shape[0] != truths.size:
        raise ValueError("ranked must be an (N, K) array matching truths")
    if ranked.shape[1] != cfg.K:
        raise ValueError(f"every ranked list must have K={cfg.K} entries, got {ranked.shape[1]}")
    per_rank = _accel.dba_per_rank(truths, ranked, cfg.delta)
    per_rank = [float(v) for v in per_rank]
    score = 0.0
    for y in per_rank:  # sum of Y_k / K, in rank order
        score += y / cfg.K
    return DbaReport(
        per_rank=per_rank,
        score=score,
        n_samples=int(truths.size),
        top1=topk_accuracy(truths, ranked, 1),
        top3=topk_accuracy(truths, ranked, min(3, cfg.K)),
    )
