"""All-ranking leave-one-out evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InteractionLog, TemporalSplit

KS = (10, 20)


@dataclass
class RankingReport:
    users: np.ndarray
    ranks: np.ndarray  # 1-based; inf when the target was masked out
    ks: tuple
    metrics: dict

    @property
    def n_users(self) -> int:
        return len(self.users)

    def subset(self, mask: np.ndarray) -> "RankingReport":
        return RankingReport(self.users[mask], self.ranks[mask], self.ks, metrics_from_ranks(self.ranks[mask], self.ks))


def metrics_from_ranks(ranks: np.ndarray, ks=KS) -> dict:
    out = {}
    n = max(len(ranks), 1)
    for k in ks:
        hit = ranks <= k
        out[f"recall@{k}"] = float(hit.sum() / n)
        gains = np.zeros(len(ranks))
        gains[hit] = 1.0 / np.log2(1.0 + ranks[hit])
        out[f"ndcg@{k}"] = float(gains.sum() / n)
    return out


def rank_targets(scores: np.ndarray, targets: np.ndarray, masked: np.ndarray) -> np.ndarray:
    """1-based rank of ``targets[r]`` in row ``r``; ties go to the lower item id."""
    rows = np.arange(len(targets))
    s = np.where(masked, -np.inf, scores)
    t = s[rows, targets]
    ids = np.arange(scores.shape[1])
    ahead = (s > t[:, None]) | ((s == t[:, None]) & (ids[None, :] < targets[:, None]))
    ranks = 1.0 + ahead.sum(axis=1)
    ranks[masked[rows, targets]] = np.inf
    return ranks


def evaluate(model, log: InteractionLog, split: TemporalSplit, ks=KS, target: str = "test",
             fwd=None, chunk: int = 512) -> RankingReport:
    """Rank each evaluated user's held-out item against every unmasked item.

    Train items are always masked; the validation item is also masked when
    ranking the test item.
    """
    if target not in ("test", "valid"):
        raise ValueError("target must be 'test' or 'valid'")
    fwd = model.forward() if fwd is None else fwd
    users = split.eval_users
    tgt_idx = (split.test if target == "test" else split.valid)[users]
    targets = log.items[tgt_idx]
    n_items = log.n_items
    train_u = log.users[split.train]
    train_i = log.items[split.train]
    ranks = np.empty(len(users))
    for lo in range(0, len(users), chunk):
        uu = users[lo:lo + chunk]
        local = np.full(log.n_users, -1)
        local[uu] = np.arange(len(uu))
        masked = np.zeros((len(uu), n_items), dtype=bool)
        sel = local[train_u] >= 0
        masked[local[train_u[sel]], train_i[sel]] = True
        if target == "test":
            masked[np.arange(len(uu)), log.items[split.valid[uu]]] = True
        scores = model.score_all(fwd, uu)
        ranks[lo:lo + chunk] = rank_targets(scores, targets[lo:lo + chunk], masked)
    return RankingReport(users, ranks, tuple(ks), metrics_from_ranks(ranks, ks))
